import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jminv.refmodel import (AnalyticModel, AnalyticModelParams, BoundStateData,
                            EigenphaseDecomposition, NoPoleFoundError, SMatrixSample,
                            UnitarityError, ancs_from_residues, bound_state_of_model,
                            eigenphase_curves, eigenphase_mix, eigenphase_sweep,
                            max_eigenphase_deviation, model_smatrix, residue_from_ancs,
                            tabulated_provider, unitarity_defect)

P = AnalyticModelParams(-2.0, 0.6, 3.0, 10.0)


def _pole_equation(p, kappa):
    # at k = i kappa the coupled factor reduces to (a + kappa)(a + s) - b^2, s = sqrt(kappa^2 + D)
    s = np.sqrt(kappa**2 + p.delta)
    return (p.a + kappa) * (p.a + s) - p.b**2


def _residue_from_derivative(p, kappa):
    """Res S11 and Res S12 at i kappa from the analytic derivative of the denominator."""
    k = 1j * kappa
    k2 = 1j * np.sqrt(kappa**2 + p.delta)
    dk2 = k / k2
    dden = -1j * p.a - 1j * p.a * dk2 - k2 - k * dk2
    root = np.sqrt(p.x**2 + p.delta)
    num11 = (p.x - 1j * k) * (p.a**2 - p.b**2 + 1j * p.a * k - 1j * p.a * k2 + k * k2)
    num12 = -2j * p.b * np.sqrt(k) * np.sqrt(k2) * (root - 1j * k2)
    return num11 / ((p.x + 1j * k) * dden), num12 / ((p.x + 1j * k) * dden)


class TestAnalyticModel:
    def test_symmetric_and_unitary_above_threshold(self):
        k = np.linspace(3.2, 12.0, 200)
        s = AnalyticModel(P, bound=[])(k)
        assert np.max(np.abs(s[:, 0, 1] - s[:, 1, 0])) == 0.0
        assert max(unitarity_defect(x) for x in s) < 1e-13

    def test_single_channel_unitarity_below_threshold(self):
        k = np.linspace(0.01, 3.16, 200)
        s = AnalyticModel(P, bound=[])(k)
        assert np.max(np.abs(np.abs(s[:, 0, 0]) - 1)) < 1e-13

    def test_free_limit(self):
        # b = 0 decouples; channel 1 becomes the product of two single-channel factors
        p = AnalyticModelParams(-2.0, 0.0, 3.0, 10.0)
        s = model_smatrix(p, 1.5).s
        assert s[0, 1] == 0
        want = (3 - 1.5j) / (3 + 1.5j) * (-2 + 1.5j) / (-2 - 1.5j)
        assert s[0, 0] == pytest.approx(want, rel=1e-14)

    def test_bound_state_matches_pole_equation(self):
        b = bound_state_of_model(P)
        assert abs(_pole_equation(P, b.kappa)) < 1e-12
        r11, r12 = _residue_from_derivative(P, b.kappa)
        assert b.res11 == pytest.approx(r11, rel=1e-8)
        assert b.res12 == pytest.approx(r12, rel=1e-8)

    def test_bound_state_against_printed_values(self):
        b = bound_state_of_model(P)
        assert b.kappa == pytest.approx(2.1946752413, abs=1e-9)
        # both printed residues sit 5.87e-6 above the model's by one common factor
        r11 = b.res11 / -26.7100700336j
        r12 = b.res12 / 18.1352046367j
        assert abs(r11 - 1) < 1e-5
        assert abs(r11 - r12) < 1e-11

    def test_decoupled_bound_state(self):
        b = bound_state_of_model(AnalyticModelParams(-2.0, 0.0, 3.0, 10.0))
        assert b.kappa == pytest.approx(2.0, abs=1e-12)
        assert abs(b.res12) < 1e-12

    def test_no_pole_for_repulsive_model(self):
        with pytest.raises(NoPoleFoundError):
            bound_state_of_model(AnalyticModelParams(2.0, 0.1, 3.0, 10.0))

    def test_residues_are_rank_one(self):
        b = bound_state_of_model(P)
        model = AnalyticModel(P, bound=[])
        from jminv.refmodel import contour_residue
        r22 = contour_residue(lambda z: model(z)[..., 1, 1], 1j * b.kappa, 1e-2)
        assert b.res22 == pytest.approx(r22, rel=1e-8)
        assert abs(b.res11 * b.res22 - b.res12**2) < 1e-8 * abs(b.res12) ** 2

    def test_negative_k_rejected(self):
        with pytest.raises(ValueError):
            model_smatrix(P, -1.0)


class TestResidueRelations:
    def test_roundtrip(self):
        m = ancs_from_residues(2.1946752413, -26.7100700336j, 18.1352046367j, 10.0)
        r11, r12, _ = residue_from_ancs(2.1946752413, m, 10.0)
        assert r11 == pytest.approx(-26.7100700336j, rel=1e-14)
        assert r12 == pytest.approx(18.1352046367j, rel=1e-14)
        assert m[0] > 0

    def test_nonpositive_weight_rejected(self):
        with pytest.raises(ValueError):
            BoundStateData(2.0, +5j, 1j, delta=10.0)
        with pytest.raises(ValueError):
            BoundStateData(0.0, -5j, 1j)

    def test_weight_matrix(self):
        b = BoundStateData(2.0, -5j, 1j, delta=10.0)
        w = b.weight()
        assert np.allclose(w, w.T)
        assert np.linalg.matrix_rank(w) == 1


class TestEigenphases:
    @settings(max_examples=200, deadline=None, derandomize=True)
    @given(d1=st.floats(-1.5, 1.5), d2=st.floats(-1.5, 1.5), mix=st.floats(-0.78, 0.78))
    def test_decomposition_roundtrip(self, d1, d2, mix):
        s = EigenphaseDecomposition(d1, d2, mix).recompose()
        back = eigenphase_mix(s).recompose()
        assert np.max(np.abs(back - s)) < 1e-10

    def test_rejects_non_unitary(self):
        with pytest.raises(UnitarityError):
            eigenphase_mix(np.array([[0.9, 0], [0, 1.0]]))

    def test_sweep_is_continuous(self):
        k = np.linspace(3.2, 8, 300)
        out = eigenphase_sweep(AnalyticModel(P, bound=[])(k))
        assert np.max(np.abs(np.diff(out, axis=0))) < 0.2

    def test_curves_join_at_threshold(self):
        k = np.linspace(0.2, 6, 581)
        c = eigenphase_curves(AnalyticModel(P, bound=[])(k), k, 10.0)
        below = k < np.sqrt(10)
        assert np.all(np.isnan(c[below, 1:]))
        assert np.all(np.isfinite(c[~below]))
        assert abs(c[~below, 0][0] - c[below, 0][-1]) < 0.5
        assert max_eigenphase_deviation(c, c) == 0.0

    def test_deviation_is_modulo_pi(self):
        a = np.array([[0.1, np.nan, np.nan], [0.2, 0.3, 0.0]])
        assert max_eigenphase_deviation(a, a + np.pi) == pytest.approx(0.0, abs=1e-15)


class TestTabulatedProvider:
    def test_interpolates_smooth_data(self):
        k = np.linspace(0.2, 6, 200)
        model = AnalyticModel(P, bound=[])
        prov = tabulated_provider([SMatrixSample(x, model(x)) for x in k], delta=10.0)
        kk = np.array([0.73, 1.91, 4.44])
        assert np.max(np.abs(prov(kk) - model(kk))) < 1e-5

    def test_threshold_cusp(self):
        # S is smooth in k2 but not in k; sampling uniform in k2 near the threshold
        # gives an interpolant as good as away from it (the narrow resonance near
        # k = 2.51 needs the denser grid below)
        model = AnalyticModel(P, bound=[])
        k = np.sort(np.r_[np.linspace(0.05, np.sqrt(10) - 1e-4, 800),
                          np.sqrt(10 + np.linspace(1e-8, 1, 60) ** 2),
                          np.linspace(3.33, 6.5, 150)])
        prov = tabulated_provider([SMatrixSample(x, model(x)) for x in k], delta=10.0)
        kk = np.linspace(np.sqrt(10) + 1e-6, 6, 2000)
        assert np.max(np.abs(prov(kk) - model(kk))) < 1e-6
        kb = np.linspace(0.1, np.sqrt(10) - 1e-6, 2000)
        assert np.max(np.abs(prov(kb)[:, 0, 0] - model(kb)[:, 0, 0])) < 1e-5

    def test_single_side_samples(self):
        model = AnalyticModel(P, bound=[])
        k = np.linspace(3.5, 6, 40)
        prov = tabulated_provider([SMatrixSample(x, model(x)) for x in k], delta=10.0)
        assert np.max(np.abs(prov(np.array([4.0, 5.0])) - model(np.array([4.0, 5.0])))) < 1e-5

    def test_rejects_asymmetric_sample(self):
        s = [SMatrixSample(x, np.eye(2)) for x in (0.1, 0.2, 0.3)]
        s.append(SMatrixSample(0.4, np.array([[1, 1e-3], [0, 1]])))
        with pytest.raises(UnitarityError):
            tabulated_provider(s)

    def test_rejects_unsorted_and_short(self):
        with pytest.raises(ValueError):
            tabulated_provider([SMatrixSample(x, np.eye(2)) for x in (0.1, 0.2, 0.3)])
        with pytest.raises(ValueError):
            tabulated_provider([SMatrixSample(x, np.eye(2)) for x in (0.1, 0.3, 0.2, 0.4)])
