"""Discrete Marchenko equations in the oscillator basis.

The kernel blocks

    Q_nm = (2/pi) int_0^inf f_n(k) P f_m(k)^+ dk + sum_nu f_n^(nu) A_nu f_m^(nu)^+

are assembled from S-matrix data, the block systems for M_nm and K_nn are
solved level by level, and the Hamiltonian bands are recovered from K.

Quadrature: the k axis is cut at the channel-2 threshold and at k_max.
Above threshold the integration variable is k2 (P22 dk = dk2 removes the
1/k2 endpoint behaviour); just below threshold it is sqrt(Delta - k^2).
Beyond k_max the S-matrix is the identity and f_n reduces to the sine-like
solution, which decays like a Gaussian.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .basis import cplus, kinetic_diag, kinetic_offdiag, sine_like
from .channels import ChannelSet, channel_momentum
from .forward import QuasiTridiagonalHamiltonian

NODES = 64
CONVERGENCE_TOL = 1e-8
GAUSS_TAIL = 25.0


class QuadratureError(RuntimeError):
    pass


class DegenerateKernelError(np.linalg.LinAlgError):
    pass


# --- asymptotic coefficients ----------------------------------------------

def asymptotic_coefficients(s, cs: ChannelSet, k, n_max: int) -> np.ndarray:
    """f_n(k) for n = 0..n_max; shape (n_max+1,) + k.shape + (2, 2).

    ``s`` holds S(k) with shape k.shape + (2, 2). Channel momenta follow the
    physical-sheet convention, so below threshold q2 is positive imaginary.
    """
    k = np.asarray(k, dtype=float)
    k2 = channel_momentum(k.astype(complex), cs.delta)
    q = (cs.rho * k.astype(complex), cs.rho * k2)
    sq = (np.sqrt(q[0]), np.sqrt(q[1]))
    out = np.zeros((n_max + 1,) + k.shape + (2, 2), dtype=complex)
    for a in range(2):
        cfg = cs.basis(a)
        sn = sine_like(cfg, q[a], n_max)
        cp = cplus(cfg, q[a], n_max)
        cm = cp - 2j * sn
        for b in range(2):
            ratio = sq[b] / sq[a]
            val = -cp * ratio * s[..., a, b]
            if a == b:
                val = val + cm
            out[..., a, b] = 0.5j * val
    return out


def free_coefficients(cs: ChannelSet, k, n_max: int) -> np.ndarray:
    """f_n(k) for S = I: diagonal sine-like solutions, evaluated without C^+."""
    k = np.asarray(k, dtype=float)
    k2 = channel_momentum(k.astype(complex), cs.delta)
    out = np.zeros((n_max + 1,) + k.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = sine_like(cs.basis(0), cs.rho * k, n_max)
    out[..., 1, 1] = sine_like(cs.basis(1), cs.rho * k2, n_max)
    return out


def bound_coefficients(cs: ChannelSet, kappa: float, n_max: int) -> np.ndarray:
    """f_n^(nu): diagonal, shape (n_max+1, 2, 2); real for real kappa."""
    out = np.zeros((n_max + 1, 2, 2), dtype=complex)
    for a in range(2):
        t = cs.rho * np.sqrt(kappa**2 + cs.thresholds[a])
        ell = cs.ell[a]
        out[:, a, a] = 1j**ell * cplus(cs.basis(a), np.array(1j * t), n_max)
    return out


@dataclass(frozen=True)
class AsymptoticCoefficients:
    fk: np.ndarray  # (n, k, 2, 2)
    fnu: np.ndarray  # (nu, n, 2, 2)


# --- quadrature -------------------------------------------------------------

def _gauss_panels(lo: float, hi: float, panels: int, nodes: int):
    x, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()


def tail_cutoff(cs: ChannelSet, k_max: float, n_top: int) -> float:
    """k beyond which the sine-like integrand is below ~exp(-25)."""
    e = 0.5 * (cs.rho * k_max) ** 2 + 2 * (2 * n_top + max(cs.ell)) + GAUSS_TAIL
    return float(np.sqrt(2 * e) / cs.rho)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes in k with weights that already include P and the Jacobian.

    ``w_col[i, c]`` multiplies the column-c outer product at node i.
    ``free`` marks nodes beyond k_max, where S = I.
    """

    k: np.ndarray
    w_col: np.ndarray
    free: np.ndarray


def quadrature_rule(cs: ChannelSet, k_max: float, n_top: int, nodes: int = NODES,
                    panels: int = 8) -> QuadratureRule:
    k_cut = max(tail_cutoff(cs, k_max, n_top), k_max * 1.5)
    ks, ws, free = [], [], []

    if cs.delta <= 0:
        k, w = _gauss_panels(0.0, k_max, panels, nodes)
        kt, wt = _gauss_panels(k_max, k_cut, panels // 2, nodes)
        for kk, ww, fr in ((k, w, False), (kt, wt, True)):
            ks.append(kk)
            ws.append(np.column_stack([ww, ww]))
            free.append(np.full(kk.shape, fr))
        return QuadratureRule(np.concatenate(ks), np.concatenate(ws), np.concatenate(free))

    kth = cs.k_threshold
    if k_max <= kth:
        raise ValueError("k_max must lie above the channel-2 threshold")
    # closed region, plain k on [0, 0.8 kth]
    split = 0.8 * kth
    k, w = _gauss_panels(0.0, split, panels, nodes)
    ks.append(k)
    ws.append(np.column_stack([w, np.zeros_like(w)]))
    free.append(np.zeros(k.shape, bool))
    # closed region near threshold: k = sqrt(Delta - s^2), dk = s/k ds
    s, w = _gauss_panels(0.0, np.sqrt(cs.delta - split**2), panels // 2, nodes)
    k = np.sqrt(cs.delta - s**2)
    ks.append(k)
    ws.append(np.column_stack([w * s / k, np.zeros_like(w)]))
    free.append(np.zeros(k.shape, bool))
    # open region and tail: k = sqrt(k2^2 + Delta), dk = k2/k dk2, P22 dk = dk2
    k2max = np.sqrt(k_max**2 - cs.delta)
    k2cut = np.sqrt(k_cut**2 - cs.delta)
    for lo, hi, npan, fr in ((0.0, k2max, panels, False), (k2max, k2cut, panels // 2, True)):
        k2, w = _gauss_panels(lo, hi, npan, nodes)
        k = np.sqrt(k2**2 + cs.delta)
        ks.append(k)
        ws.append(np.column_stack([w * k2 / k, w]))
        free.append(np.full(k.shape, fr))
    return QuadratureRule(np.concatenate(ks), np.concatenate(ws), np.concatenate(free))


# --- kernel -------------------------------------------------------------------

ClosedS12 = Callable[[np.ndarray], np.ndarray]


@dataclass
class MarchenkoKernel:
    """Q blocks for n, m in [n_lo, n_hi]; ``q[i, j]`` is Q_{n_lo+i, n_lo+j}."""

    n_lo: int
    n_hi: int
    q: np.ndarray
    imag_defect: float = 0.0
    convergence: float = 0.0
    closed_part: np.ndarray | None = field(default=None, repr=False)

    def block(self, n: int, m: int) -> np.ndarray:
        return self.q[n - self.n_lo, m - self.n_lo]

    def symmetry_defect(self) -> float:
        return float(np.max(np.abs(self.q - np.transpose(self.q, (1, 0, 3, 2)))))


def _provider_smatrix(provider, cs: ChannelSet, k: np.ndarray, closed_s12: ClosedS12 | None):
    s = np.asarray(provider(k), dtype=complex).copy()
    below = k < cs.k_threshold
    if np.any(below):
        if closed_s12 is None:
            s12 = np.zeros(np.count_nonzero(below), dtype=complex)
        else:
            s12 = np.asarray(closed_s12(k[below]), dtype=complex)
        s[below, 0, 1] = s[below, 1, 0] = s12
    return s


def _integrate(f: np.ndarray, w_col: np.ndarray) -> np.ndarray:
    # sum_k sum_c f[n, k, a, c] w[k, c] conj(f[m, k, b, c])
    return (2 / np.pi) * np.einsum("nkac,kc,mkbc->nmab", f, w_col, f.conj())


def _assemble(provider, cs, bound, n_lo, n_hi, k_max, closed_s12, nodes, energy=False):
    rule = quadrature_rule(cs, k_max, n_hi, nodes)
    w_col = rule.w_col
    if energy:
        w_col = w_col * (0.5 * (cs.rho * rule.k) ** 2)[:, None]
    data = ~rule.free
    f = np.empty((n_hi + 1, rule.k.size, 2, 2), dtype=complex)
    s = _provider_smatrix(provider, cs, rule.k[data], closed_s12)
    f[:, data] = asymptotic_coefficients(s, cs, rule.k[data], n_hi)
    f[:, rule.free] = free_coefficients(cs, rule.k[rule.free], n_hi)
    f = f[n_lo:]
    q = _integrate(f, w_col)
    below = rule.k < cs.k_threshold
    closed = _integrate(f[:, below], w_col[below]) if cs.delta > 0 else None
    for b in bound:
        fnu = bound_coefficients(cs, b.kappa, n_hi)[n_lo:]
        e_nu = -0.5 * (cs.rho * b.kappa) ** 2 if energy else 1.0
        q = q + e_nu * np.einsum("nac,cd,mbd->nmab", fnu, b.weight(), fnu.conj())
    return q, closed


def kernel_assemble(provider, cs: ChannelSet, bound, n_window: tuple[int, int],
                    k_max: float, closed_s12: ClosedS12 | None = None,
                    nodes: int = NODES, check: bool = True,
                    energy: bool = False) -> MarchenkoKernel:
    """Q_nm for n, m in ``n_window`` (inclusive).

    ``closed_s12`` supplies S12 below the channel-2 threshold; ``None`` sets
    it to zero there. The provider is only evaluated for k < k_max. With
    ``energy`` the integrand and bound terms carry the energy eps, giving the
    matrix elements of H between the f_n instead of their overlaps.
    """
    n_lo, n_hi = n_window
    if not 0 <= n_lo <= n_hi:
        raise ValueError("invalid window")
    args = (provider, cs, bound, n_lo, n_hi, k_max, closed_s12)
    q, closed = _assemble(*args, nodes, energy)
    change = 0.0
    if check:
        q2, _ = _assemble(*args, 2 * nodes, energy)
        change = float(np.max(np.abs(q2 - q)))
        if change > CONVERGENCE_TOL:
            raise QuadratureError(f"kernel changes by {change:.2e} when the nodes are doubled")
        q = q2
    imag = float(np.max(np.abs(q.imag)))
    return MarchenkoKernel(n_lo, n_hi, q.real.copy(), imag_defect=imag, convergence=change,
                           closed_part=None if closed is None else closed.real)


# --- block solves ---------------------------------------------------------------

@dataclass
class KernelSolution:
    n: int
    k_diag: np.ndarray
    m_blocks: dict

    @property
    def k_off(self) -> dict:
        return {m: self.k_diag @ mb for m, mb in self.m_blocks.items()}

    def K(self, m: int) -> np.ndarray:
        if m == self.n:
            return self.k_diag
        mb = self.m_blocks.get(m)
        return np.zeros((2, 2)) if mb is None else self.k_diag @ mb


def boundary_solution(N: int) -> KernelSolution:
    """Level N-1: the coefficients coincide with f_n, so K = I and M = 0."""
    return KernelSolution(N - 1, np.eye(2), {})


def solve_kernel(kernel: MarchenkoKernel, n: int, N: int) -> KernelSolution:
    if n == N - 1:
        return boundary_solution(N)
    m_hi = 2 * N - n - 2
    if n < kernel.n_lo or m_hi > kernel.n_hi or n > N - 1:
        raise ValueError(f"window {n}..{m_hi} not covered by the kernel")
    idx = range(n + 1, m_hi + 1)
    qsub = np.block([[kernel.block(a, b) for b in idx] for a in idx])
    qrow = np.hstack([kernel.block(n, b) for b in idx])
    try:
        mrow = np.linalg.solve(qsub.T, -qrow.T).T
    except np.linalg.LinAlgError as exc:
        raise DegenerateKernelError(f"singular block system at level {n}") from exc
    m_blocks = {m: mrow[:, 2 * i:2 * i + 2] for i, m in enumerate(idx)}
    ginv = kernel.block(n, n) + sum(m_blocks[m] @ kernel.block(m, n) for m in idx)
    ginv = 0.5 * (ginv + ginv.T)
    try:
        g = np.linalg.inv(ginv)
        low = np.linalg.cholesky(0.5 * (g + g.T))
    except np.linalg.LinAlgError as exc:
        raise DegenerateKernelError(f"K_nn^T K_nn is not positive definite at level {n}") from exc
    # K^T K = L L^T with K upper triangular: K = L^T
    return KernelSolution(n, low.T.copy(), m_blocks)


# --- band recovery ----------------------------------------------------------------

@dataclass(frozen=True)
class BandElements:
    a1: float
    a2: float
    u: float
    b1: float | None = None  # b_n couples n-1 and n; absent for n = 0
    b2: float | None = None
    v: float | None = None


def recover_band(sol_n: KernelSolution, sol_prev: KernelSolution | None,
                 cs: ChannelSet, n: int) -> BandElements:
    l1, l2 = cs.ell
    t1 = lambda i, j: kinetic_diag(l1, i) if i == j else kinetic_offdiag(l1, min(i, j))  # noqa: E731
    t2 = lambda i, j: kinetic_diag(l2, i) if i == j else kinetic_offdiag(l2, min(i, j))  # noqa: E731
    knn = sol_n.K(n)
    knn1 = sol_n.K(n + 1)
    k11, k12, k22 = knn[0, 0], knn[0, 1], knn[1, 1]
    if k11 == 0 or k22 == 0:
        raise DegenerateKernelError(f"zero diagonal K at level {n}")
    a1 = t1(n, n) + knn1[0, 0] / k11 * t1(n + 1, n)
    a2 = t2(n, n) + cs.eps_threshold + knn1[1, 1] / k22 * t2(n + 1, n) \
        - k12 * knn1[1, 0] / (k11 * k22) * t1(n + 1, n)
    u = knn1[1, 0] / k11 * t1(n + 1, n)
    if n == 0 or sol_prev is None:
        return BandElements(float(a1), float(a2), float(u))
    kp = sol_prev.K(n - 1)
    kpn = sol_prev.K(n)
    p11, p12, p22 = kp[0, 0], kp[0, 1], kp[1, 1]
    if p11 == 0 or p22 == 0:
        raise DegenerateKernelError(f"zero diagonal K at level {n - 1}")
    a1 += -k12 * kpn[1, 0] / (k11 * p22) * t2(n, n - 1) \
        - (kpn[0, 0] / p11 - p12 * kpn[1, 0] / (p11 * p22)) * t1(n, n - 1)
    a2 += -(kpn[1, 1] / p22 - k12 * kpn[1, 0] / (k11 * p22)) * t2(n, n - 1)
    u += -kpn[1, 0] * k22 / (k11 * p22) * t2(n, n - 1)
    b1 = k11 / p11 * t1(n, n - 1)
    b2 = k22 / p22 * t2(n, n - 1)
    v = k12 / p22 * t2(n, n - 1) - p12 * k11 / (p22 * p11) * t1(n, n - 1)
    return BandElements(float(a1), float(a2), float(u), float(b1), float(b2), float(v))


def first_block(sol0: KernelSolution, energy_kernel: MarchenkoKernel, N: int) -> np.ndarray:
    """H restricted to n = 0 in both channels, [[a1_0, u_0], [u_0, a2_0]].

    Row 0 of the free recursion does not hold for the irregular solutions, so
    the band formulas do not apply at n = 0; instead H_00 = sum K_0m Qe_mm' K_0m'^T
    with the energy-weighted kernel Qe.
    """
    idx = range(0, 2 * N - 1)
    krow = np.hstack([sol0.K(m) for m in idx])
    qe = np.block([[energy_kernel.block(a, b) for b in idx] for a in idx])
    h00 = krow @ qe @ krow.T
    return 0.5 * (h00 + h00.T)


def last_row_targets(provider, cs: ChannelSet, bound, k_max: float,
                     closed_s12: ClosedS12 | None = None, check: bool = True):
    """(a1_{N-1}, a2_{N-1}, u_{N-1}) from the level N-2 Marchenko solve."""
    N = cs.N
    kernel = kernel_assemble(provider, cs, bound, (N - 2, N), k_max, closed_s12, check=check)
    band = recover_band(boundary_solution(N), solve_kernel(kernel, N - 2, N), cs, N - 1)
    return (band.a1, band.a2, band.u), kernel


def full_marchenko_h(provider, cs: ChannelSet, bound, k_max: float,
                     closed_s12: ClosedS12 | None = None,
                     check: bool = True) -> QuasiTridiagonalHamiltonian:
    """All bands from the Marchenko chain over levels N-1 .. 0."""
    N = cs.N
    kernel = kernel_assemble(provider, cs, bound, (0, 2 * N - 2), k_max, closed_s12, check=check)
    ekernel = kernel_assemble(provider, cs, bound, (0, 2 * N - 2), k_max, closed_s12,
                              check=check, energy=True)
    sols = [solve_kernel(kernel, n, N) for n in range(N)]
    a1, a2, u = np.zeros(N), np.zeros(N), np.zeros(N)
    b1, b2, v = np.zeros(N - 1), np.zeros(N - 1), np.zeros(N - 1)
    for n in range(N):
        band = recover_band(sols[n], sols[n - 1] if n > 0 else None, cs, n)
        a1[n], a2[n], u[n] = band.a1, band.a2, band.u
        if n > 0:
            b1[n - 1], b2[n - 1], v[n - 1] = band.b1, band.b2, band.v
    h00 = first_block(sols[0], ekernel, N)
    a1[0], a2[0], u[0] = h00[0, 0], h00[1, 1], h00[0, 1]
    return QuasiTridiagonalHamiltonian(a1, b1, a2, b2, u, v)
