import numpy as np
import pytest

from jminv.channels import ChannelSet
from jminv.forward import ForwardSolver, free_hamiltonian
from jminv.marchenko import (QuadratureError, asymptotic_coefficients, bound_coefficients,
                             free_coefficients, full_marchenko_h, kernel_assemble,
                             last_row_targets, quadrature_rule)
from jminv.refmodel import AnalyticModel, AnalyticModelParams, bound_state_of_model

# exact S-matrices of rank-2N Hamiltonians approach the identity like a Gaussian;
# at this cutoff the truncation is below float resolution of the kernel
EXACT_K_MAX = 16.0


def _identity(k):
    return np.broadcast_to(np.eye(2, dtype=complex), np.shape(k) + (2, 2))


@pytest.fixture(scope="module")
def exact(exact_provider):
    prov, fwd = exact_provider
    return prov, fwd, (lambda k: fwd.smatrix(k, check=False)[..., 0, 1])


class TestExactDataOracle:
    """The S-matrix of a known Hamiltonian, closed-channel S12 included, must
    return that Hamiltonian."""

    def test_last_row_targets(self, exact, table_b, cs):
        prov, _, s12 = exact
        targets, kernel = last_row_targets(prov, cs, prov.bound, EXACT_K_MAX, s12)
        want = (table_b.a1[-1], table_b.a2[-1], table_b.u[-1])
        assert np.max(np.abs(np.array(targets) - want)) < 1e-10
        assert kernel.symmetry_defect() < 1e-14
        assert kernel.imag_defect < 1e-12

    def test_full_chain(self, exact, table_b, cs):
        prov, _, s12 = exact
        h = full_marchenko_h(prov, cs, prov.bound, EXACT_K_MAX, s12)
        assert h.max_abs_diff(table_b) < 1e-4

    def test_missing_closed_coupling_shifts_targets(self, exact, table_b, cs):
        prov, _, _ = exact
        targets, _ = last_row_targets(prov, cs, prov.bound, EXACT_K_MAX, None)
        assert abs(targets[2] - table_b.u[-1]) > 1e-6


class TestFreeAndDecoupled:
    def test_free_case(self, cs):
        h = full_marchenko_h(_identity, cs, [], 6.0)
        assert h.max_abs_diff(free_hamiltonian(cs)) < 1e-12

    def test_free_coefficients_match_general_form(self, cs):
        k = np.array([0.7, 2.0, 3.5, 5.0])
        gen = asymptotic_coefficients(_identity(k), cs, k, 6)
        free = free_coefficients(cs, k, 6)
        # f = (i/2)(C^- - C^+) = S on the diagonal when S = I
        open_ = k > cs.k_threshold
        assert np.allclose(gen[:, :, 0, 0], free[:, :, 0, 0], atol=1e-12)
        assert np.allclose(gen[:, open_], free[:, open_], atol=1e-12)

    def test_decoupled_model_gives_zero_coupling(self):
        p = AnalyticModelParams(-2.0, 0.0, 3.0, 10.0)
        cs = ChannelSet(0.495, 5, 10.0)
        model = AnalyticModel(p, bound=[bound_state_of_model(p)])
        h = full_marchenko_h(model, cs, model.bound, 6.0)
        assert np.max(np.abs(h.u)) < 1e-8 and np.max(np.abs(h.v)) < 1e-8


class TestKernel:
    def test_symmetry_and_positivity(self, model, problem, cs):
        kern = kernel_assemble(model, cs, [problem.bound], (0, 4), 6.0)
        assert kern.symmetry_defect() < 1e-14
        n = kern.q.shape[0]
        full = kern.q.transpose(0, 2, 1, 3).reshape(2 * n, 2 * n)
        assert np.min(np.linalg.eigvalsh(0.5 * (full + full.T))) > 0

    def test_bound_coefficients_real(self, cs):
        f = bound_coefficients(cs, 2.19, 6)
        assert np.max(np.abs(f.imag)) < 1e-15
        assert f[0, 0, 1] == 0 and f[0, 1, 0] == 0

    def test_quadrature_check_rejects_underresolved_rule(self, model, problem, cs):
        with pytest.raises(QuadratureError):
            kernel_assemble(model, cs, [problem.bound], (0, 4), 6.0, nodes=2)

    def test_invalid_window_and_cutoff(self, model, cs):
        with pytest.raises(ValueError):
            kernel_assemble(model, cs, [], (3, 1), 6.0)
        with pytest.raises(ValueError):
            quadrature_rule(cs, 2.0, 4)

    def test_rule_integrates_free_overlaps(self, cs):
        # (2/pi) int S_n S_m rho dk = delta_nm in channel 1; the weights carry rho
        rule = quadrature_rule(cs, 6.0, 6)
        s = free_coefficients(cs, rule.k, 6)[:, :, 0, 0].real
        gram = (2 / np.pi) * np.einsum("nk,k,mk->nm", s, rule.w_col[:, 0], s)
        assert np.allclose(gram, np.eye(7), atol=1e-10)
