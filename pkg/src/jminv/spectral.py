"""Spectral data from S-matrix data, and the Hamiltonian from spectral data.

On the open region (both channels open, S unitary) the eigenvalues of H are
the zeros of a determinant D(eps) built from S and the free solutions at
n = N-1, N, and the squared edge components of the eigenvectors are residues
of ratios Theta/D. Below the channel-2 threshold only the unitary element
S11 is used and the channel-2 component is set to zero.

D itself carries the phase sqrt(det S); the root scan works on the real
function D * exp(-i arg(det S) / 2) with the phase unwrapped along the grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .basis import cplus, kinetic_matrix, kinetic_offdiag, oscillator_fn, sine_like
from .channels import ChannelSet, channel_momentum
from .forward import QuasiTridiagonalHamiltonian, SpectralTriplet, triplet_arrays

log = logging.getLogger(__name__)

SCAN_POINTS = 2000
ROOT_XTOL = 1e-13
RESIDUE_TOL = 1e-8


class ExtractionError(RuntimeError):
    pass


class ReconstructionError(RuntimeError):
    pass


@dataclass
class ExtractionReport:
    """Diagnostics gathered while locating poles and residues."""

    region: str
    roots: list = field(default_factory=list)
    max_imag_residue: float = 0.0
    min_diag_residue: float = np.inf
    max_rank1_defect: float = 0.0
    close_pairs: list = field(default_factory=list)


def _edge(cs: ChannelSet, alpha: int, q):
    cfg = cs.basis(alpha)
    n = cs.N
    s = sine_like(cfg, q, n)[n - 1:]
    cp = cplus(cfg, q, n)[n - 1:]
    return cp, cp - 2j * s


class PtildeFunctions:
    """Theta_1, Theta_2, Theta_3 and D as functions of eps for a provider."""

    def __init__(self, provider, cs: ChannelSet):
        self.provider = provider
        self.cs = cs
        self.t1 = float(kinetic_offdiag(cs.ell[0], cs.N - 1))
        self.t2 = float(kinetic_offdiag(cs.ell[1], cs.N - 1))

    def _k(self, eps):
        return self.cs.k_of_eps(np.asarray(eps, dtype=float))

    def open_parts(self, eps):
        """(Theta1, Theta2, Theta3, D) at real eps above the channel-2 threshold."""
        cs = self.cs
        k = self._k(eps)
        k2 = channel_momentum(k, cs.delta).real
        s = self.provider(k)
        s11, s12, s22 = s[..., 0, 0], s[..., 0, 1], s[..., 1, 1]
        cp1, cm1 = _edge(cs, 0, cs.rho * k)
        cp2, cm2 = _edge(cs, 1, cs.rho * k2)
        x1 = cm1 - cp1 * s11  # rows n = N-1, N
        x2 = cm2 - cp2 * s22
        s12sq = s12 * s12
        d = x1[1] * x2[1] - cp1[1] * cp2[1] * s12sq
        th1 = (x1[0] * x2[1] - cp1[0] * cp2[1] * s12sq) / self.t1
        th2 = (x1[1] * x2[0] - cp1[1] * cp2[0] * s12sq) / self.t2
        th3 = -1j * cs.rho**2 * np.sqrt(k * k2) * s12 / (self.t1 * self.t2)
        return th1, th2, th3, d, s

    def closed_parts(self, eps):
        """(Theta1~, D~, S11) at real eps below the channel-2 threshold."""
        cs = self.cs
        k = self._k(eps)
        s11 = self.provider(k)[..., 0, 0]
        cp1, cm1 = _edge(cs, 0, cs.rho * k)
        x1 = cm1 - cp1 * s11
        return x1[0] / self.t1, x1[1], s11

    def open_det_phase(self, eps):
        s = self.open_parts(eps)[4]
        return np.angle(s[..., 0, 0] * s[..., 1, 1] - s[..., 0, 1] * s[..., 1, 0])

    def full_d(self, eps):
        """Two-channel D with the provider's S used as is (also below threshold)."""
        cs = self.cs
        k = self._k(eps)
        k2 = channel_momentum(k, cs.delta)
        s = self.provider(k)
        cp1, cm1 = _edge(cs, 0, cs.rho * k)
        cp2, cm2 = _edge(cs, 1, cs.rho * k2)
        x1 = cm1[1] - cp1[1] * s[..., 0, 0]
        x2 = cm2[1] - cp2[1] * s[..., 1, 1]
        return x1 * x2 - cp1[1] * cp2[1] * s[..., 0, 1] ** 2, s


class _RealBranch:
    """D(eps) * exp(-i phi(eps)/2) with phi continued along a reference grid."""

    def __init__(self, fn, grid):
        self.fn = fn  # eps -> (complex D, raw phase)
        d, phi = fn(grid)
        self.grid = grid
        self.phi = np.unwrap(phi)
        self.values = (d * np.exp(-0.5j * self.phi))

    def __call__(self, eps):
        d, phi = self.fn(np.asarray(eps, dtype=float))
        ref = np.interp(eps, self.grid, self.phi)
        phi = phi + 2 * np.pi * np.round((ref - phi) / (2 * np.pi))
        return d * np.exp(-0.5j * phi)


def _derivative(fn, x, h):
    def cd(step):
        return (fn(x + step) - fn(x - step)) / (2 * step)

    return (4 * cd(0.5 * h) - cd(h)) / 3


def _scan_roots(branch: _RealBranch, report: ExtractionReport):
    vals = branch.values
    if np.max(np.abs(vals.imag)) > 1e-6 * np.max(np.abs(vals)):
        log.warning("%s region: phase-removed D is not real (max |Im|/|D| = %.2e)",
                    report.region, np.max(np.abs(vals.imag)) / np.max(np.abs(vals)))
    re = vals.real
    grid = branch.grid
    idx = np.nonzero(np.sign(re[:-1]) * np.sign(re[1:]) < 0)[0]
    roots = []
    for i in idx:
        r = brentq(lambda e: float(branch(e).real), grid[i], grid[i + 1],
                   xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps)
        roots.append(r)
    step = grid[1] - grid[0]
    for a, b in zip(roots, roots[1:]):
        if b - a < step:
            report.close_pairs.append((a, b))
    if report.close_pairs:
        log.warning("%s region: roots closer than the scan step: %s", report.region, report.close_pairs)
    # sign changes of |D| minima that do not cross zero would indicate double roots
    mins = np.nonzero((np.abs(re[1:-1]) < np.abs(re[:-2])) & (np.abs(re[1:-1]) < np.abs(re[2:]))
                      & (np.sign(re[:-2]) == np.sign(re[2:])))[0]
    for m in mins:
        if abs(re[m + 1]) < 1e-3 * np.max(np.abs(re)):
            report.close_pairs.append((grid[m + 1], grid[m + 1]))
            log.warning("%s region: possible double root near eps = %.6f", report.region, grid[m + 1])
    return roots


def _grid(lo, hi, n=SCAN_POINTS):
    # open grid: never touches the region endpoints
    h = (hi - lo) / n
    return lo + h * (np.arange(n) + 0.5)


def find_open_triplets(provider, cs: ChannelSet, k0: float,
                       report: ExtractionReport | None = None) -> list[SpectralTriplet]:
    """Eigenvalues in (rho^2 Delta / 2, rho^2 k0^2 / 2) with both edge components."""
    report = report if report is not None else ExtractionReport("open")
    pf = PtildeFunctions(provider, cs)
    lo, hi = cs.eps_threshold, float(cs.eps(k0))

    def dfun(e):
        th1, th2, th3, d, s = pf.open_parts(e)
        return d, np.angle(s[..., 0, 0] * s[..., 1, 1] - s[..., 0, 1] ** 2)

    branch = _RealBranch(dfun, _grid(lo, hi))
    out = []
    for lam in _scan_roots(branch, report):
        th1, th2, th3, _, _ = pf.open_parts(lam)
        h = 1e-5 * max(1.0, abs(lam))
        dd = _derivative(lambda e: pf.open_parts(e)[3], lam, h)
        r11, r22, r12 = th1 / dd, th2 / dd, th3 / dd
        report.max_imag_residue = max(report.max_imag_residue,
                                      *(abs(r.imag) for r in (r11, r22, r12)))
        report.min_diag_residue = min(report.min_diag_residue, r11.real, r22.real)
        if min(r11.real, r22.real) < -RESIDUE_TOL:
            raise ExtractionError(
                f"negative residue at eps = {lam:.10f}: ({r11.real:.3e}, {r22.real:.3e}); "
                "the S-matrix data is not unitary")
        zn = np.sqrt(max(r11.real, 0.0))
        znn = np.copysign(np.sqrt(max(r22.real, 0.0)), r12.real)
        report.max_rank1_defect = max(report.max_rank1_defect,
                                      abs(r12.real**2 - r11.real * r22.real))
        report.roots.append(lam)
        out.append(SpectralTriplet(float(lam), float(zn), float(znn)))
    return out


def find_closed_triplets(provider, cs: ChannelSet,
                         report: ExtractionReport | None = None) -> list[SpectralTriplet]:
    """Eigenvalues in (0, rho^2 Delta / 2) from the open-channel element S11 alone."""
    report = report if report is not None else ExtractionReport("closed")
    pf = PtildeFunctions(provider, cs)
    lo, hi = 0.0, cs.eps_threshold
    if hi <= 0:
        return []

    def dfun(e):
        # C^- - C^+ e^{2i delta} = -2i e^{i delta} (real)
        _, d, s11 = pf.closed_parts(e)
        return 1j * d, np.angle(s11)

    branch = _RealBranch(dfun, _grid(lo, hi))
    out = []
    for lam in _scan_roots(branch, report):
        th = pf.closed_parts(lam)[0]
        h = 1e-5 * max(1.0, abs(lam))
        h = min(h, 0.5 * (lam - lo), 0.5 * (hi - lam))
        dd = _derivative(lambda e: pf.closed_parts(e)[1], lam, h)
        r = th / dd
        report.max_imag_residue = max(report.max_imag_residue, abs(r.imag))
        report.min_diag_residue = min(report.min_diag_residue, r.real)
        if r.real < -RESIDUE_TOL:
            raise ExtractionError(f"negative residue at eps = {lam:.10f}: {r.real:.3e}")
        report.roots.append(lam)
        out.append(SpectralTriplet(float(lam), float(np.sqrt(max(r.real, 0.0))), 0.0))
    return out


def full_d_real_roots(provider, cs: ChannelSet) -> list[float]:
    """Sign changes of the two-channel D below threshold with the provider's full S.

    Used as a consistency check: with a non-unitary closed-channel S the
    two-channel determinant need not have real zeros at all.
    """
    pf = PtildeFunctions(provider, cs)
    grid = _grid(0.0, cs.eps_threshold)
    d, s = pf.full_d(grid)
    phase = np.unwrap(np.angle(s[..., 0, 0] * s[..., 1, 1] - s[..., 0, 1] ** 2))
    val = d * np.exp(-0.5j * phase)
    out = []
    for part in (val.real,):
        for i in np.nonzero(np.sign(part[:-1]) * np.sign(part[1:]) < 0)[0]:
            # accept only genuine zeros of the complex D, not sign flips of one component
            j = i if abs(d[i]) < abs(d[i + 1]) else i + 1
            if abs(val[j].imag) < 1e-3 * np.max(np.abs(val)):
                out.append(float(grid[j]))
    return out


# --- Hamiltonian from spectral data -------------------------------------------

def canonical_signs(h: QuasiTridiagonalHamiltonian) -> QuasiTridiagonalHamiltonian:
    """D H D with D = diag(+-1), last row of each channel fixed, making b1, b2 <= 0.

    Spectral triplets determine H only up to such sign changes;
    ``lanczos_reconstruct`` returns this representative.
    """
    n = h.N
    d1, d2 = np.ones(n), np.ones(n)
    for m in range(n - 1, 0, -1):
        d1[m - 1] = -d1[m] if h.b1[m - 1] > 0 else d1[m]
        d2[m - 1] = -d2[m] if h.b2[m - 1] > 0 else d2[m]
    return QuasiTridiagonalHamiltonian(
        h.a1, d1[:-1] * d1[1:] * h.b1, h.a2, d2[:-1] * d2[1:] * h.b2,
        d1 * d2 * h.u, d1[1:] * d2[:-1] * h.v)


def orthonormality_defects(triplets) -> tuple[float, float, float]:
    """(sum zN^2 - 1, sum zNN^2 - 1, sum zN zNN)."""
    _, zn, znn = triplet_arrays(triplets)
    return float(zn @ zn - 1), float(znn @ znn - 1), float(zn @ znn)


@dataclass
class LanczosReport:
    repaired: bool = False
    constraint_defect: float = 0.0


def lanczos_reconstruct(triplets, report: LanczosReport | None = None,
                        repair_tol: float = 1e-6, reject_tol: float = 1e-4
                        ) -> QuasiTridiagonalHamiltonian:
    """Backward block-Lanczos from eigenvalues and last-row eigenvector components.

    The off-diagonal channel bands b1, b2 come out negative, matching the
    kinetic-energy sign convention.
    """
    report = report if report is not None else LanczosReport()
    lam, zn, znn = triplet_arrays(triplets)
    dim = len(lam)
    if dim % 2 or dim < 2:
        raise ReconstructionError("need an even number (2N) of triplets")
    n_basis = dim // 2
    w = np.column_stack([zn, znn]).astype(float)
    gram = w.T @ w
    defect = float(np.max(np.abs(gram - np.eye(2))))
    report.constraint_defect = defect
    if defect > reject_tol:
        raise ReconstructionError(f"triplets violate orthonormality by {defect:.3e}")
    if defect > 1e-14:
        if defect > repair_tol:
            log.warning("repairing orthonormality defect %.3e", defect)
        # symmetric (Loewdin) re-orthonormalization of the two rows
        ev, evec = np.linalg.eigh(gram)
        w = w @ (evec @ np.diag(ev**-0.5) @ evec.T)
        report.repaired = True

    a1 = np.zeros(n_basis)
    a2 = np.zeros(n_basis)
    u = np.zeros(n_basis)
    b1 = np.zeros(n_basis - 1)
    b2 = np.zeros(n_basis - 1)
    v = np.zeros(n_basis - 1)
    w_next = None
    c_next = None
    scale = max(1.0, np.max(np.abs(lam)))
    for n in range(n_basis - 1, -1, -1):
        lw = lam[:, None] * w
        a = w.T @ lw
        a1[n], a2[n], u[n] = a[0, 0], a[1, 1], 0.5 * (a[0, 1] + a[1, 0])
        if n == 0:
            break
        r = lw - w @ a
        if w_next is not None:
            r -= w_next @ c_next
        # full re-orthogonalization against everything built so far keeps the
        # recursion stable for larger N
        r -= w @ (w.T @ r)
        if w_next is not None:
            r -= w_next @ (w_next.T @ r)
        # r = [r1 r2] = W_{n-1} C^T with C^T = [[b1, 0], [v, b2]]
        r2 = r[:, 1]
        nb2 = np.linalg.norm(r2)
        if nb2 < 1e-12 * scale:
            raise ReconstructionError(f"block Lanczos breakdown at n = {n} (channel 2)")
        w2p = -r2 / nb2
        vv = float(w2p @ r[:, 0])
        r1 = r[:, 0] - vv * w2p
        nb1 = np.linalg.norm(r1)
        if nb1 < 1e-12 * scale:
            raise ReconstructionError(f"block Lanczos breakdown at n = {n} (channel 1)")
        w1p = -r1 / nb1
        b1[n - 1], b2[n - 1], v[n - 1] = -nb1, -nb2, vv
        c_t = np.array([[-nb1, 0.0], [vv, -nb2]])
        w_next, c_next = w, c_t.T
        w = np.column_stack([w1p, w2p])
    return QuasiTridiagonalHamiltonian(a1, b1, a2, b2, u, v)


# --- potential matrix ---------------------------------------------------------

@dataclass(frozen=True)
class PotentialMatrix:
    v: np.ndarray  # 2N x 2N, channel blocks [[V11, V12], [V21, V22]]

    @property
    def N(self) -> int:
        return self.v.shape[0] // 2

    def block(self, alpha: int, beta: int) -> np.ndarray:
        n = self.N
        return self.v[alpha * n:(alpha + 1) * n, beta * n:(beta + 1) * n]


def potential_from_h(h: QuasiTridiagonalHamiltonian, cs: ChannelSet) -> PotentialMatrix:
    n = cs.N
    t1 = kinetic_matrix(cs.basis(0), n - 1).dense()
    t2 = kinetic_matrix(cs.basis(1), n - 1).dense()
    free = np.zeros((2 * n, 2 * n))
    free[:n, :n] = t1
    free[n:, n:] = t2 + cs.eps_threshold * np.eye(n)
    return PotentialMatrix(h.dense() - free)


def potential_kernel(vm: PotentialMatrix, cs: ChannelSet, alpha: int, beta: int, r, r_prime):
    """V^(alpha beta)(r, r') in hbar*omega units, channels indexed 0 and 1."""
    r = np.asarray(r, dtype=float)
    rp = np.asarray(r_prime, dtype=float)
    n = cs.N
    phi_a = np.array([oscillator_fn(cs.basis(alpha), i, r) for i in range(n)])
    phi_b = np.array([oscillator_fn(cs.basis(beta), i, rp) for i in range(n)])
    return np.einsum("i...,ij,j...->...", phi_a, vm.block(alpha, beta), phi_b)
