"""J-matrix direct problem for a finite-rank two-channel Hamiltonian.

Given the quasi-tridiagonal Hamiltonian matrix (two tridiagonal channel
blocks coupled by a diagonal band ``u`` and a sub-diagonal band ``v``), the
S-matrix follows from the resolvent elements at the last basis state of
each channel, here called the P-functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .basis import cplus, kinetic_diag, kinetic_offdiag, sine_like
from .channels import ChannelSet, channel_momentum
from .refmodel import SMatrixSample, contour_residue

POLE_TOL = 1e-12
D_PLUS_TOL = 1e-14


class PoleProximityError(ArithmeticError):
    pass


@dataclass
class QuasiTridiagonalHamiltonian:
    """Bands of the 2N x 2N Hamiltonian matrix.

    ``b1[n-1]`` holds b^(1)_n and ``v[n-1]`` holds v_n for n = 1..N-1; the
    coupling block is ``H[n, N+m] = u_n delta_{nm} + v_n delta_{n, m+1}``.
    """

    a1: np.ndarray
    b1: np.ndarray
    a2: np.ndarray
    b2: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        for name in ("a1", "b1", "a2", "b2", "u", "v"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.a1)
        if not (len(self.a2) == len(self.u) == n
                and len(self.b1) == len(self.b2) == len(self.v) == n - 1):
            raise ValueError("inconsistent band lengths")

    @property
    def N(self) -> int:
        return len(self.a1)

    def dense(self) -> np.ndarray:
        n = self.N
        h = np.zeros((2 * n, 2 * n))
        h[:n, :n] = np.diag(self.a1) + np.diag(self.b1, 1) + np.diag(self.b1, -1)
        h[n:, n:] = np.diag(self.a2) + np.diag(self.b2, 1) + np.diag(self.b2, -1)
        c = np.diag(self.u) + np.diag(self.v, -1)
        h[:n, n:] = c
        h[n:, :n] = c.T
        return h

    @classmethod
    def from_dense(cls, h: np.ndarray) -> "QuasiTridiagonalHamiltonian":
        h = np.asarray(h, dtype=float)
        n = h.shape[0] // 2
        c = h[:n, n:]
        return cls(np.diag(h[:n, :n]).copy(), np.diag(h[:n, :n], 1).copy(),
                   np.diag(h[n:, n:]).copy(), np.diag(h[n:, n:], 1).copy(),
                   np.diag(c).copy(), np.diag(c, -1).copy())

    def bands(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("a1", "b1", "a2", "b2", "u", "v")}

    def max_abs_diff(self, other: "QuasiTridiagonalHamiltonian") -> float:
        return float(max(np.max(np.abs(getattr(self, k) - getattr(other, k)))
                         for k in ("a1", "b1", "a2", "b2", "u", "v")))


def free_hamiltonian(cs: ChannelSet) -> QuasiTridiagonalHamiltonian:
    """Kinetic energy plus the channel-2 threshold shift, no interaction."""
    n = np.arange(cs.N)
    l1, l2 = cs.ell
    return QuasiTridiagonalHamiltonian(
        kinetic_diag(l1, n), kinetic_offdiag(l1, n[:-1]),
        kinetic_diag(l2, n) + cs.eps_threshold, kinetic_offdiag(l2, n[:-1]),
        np.zeros(cs.N), np.zeros(cs.N - 1))


def random_hamiltonian(rng: np.random.Generator, n: int,
                       ) -> tuple[QuasiTridiagonalHamiltonian, ChannelSet]:
    """Kinetic energy of a random channel set plus a random quasi-tridiagonal potential.

    Drawn from the class of matrices the method produces: a dominant
    kinetic band with a potential of strength 0.1..1 on every band.
    """
    cs = ChannelSet(rng.uniform(0.3, 1.0), n, rng.uniform(0.0, 10.0))
    f = free_hamiltonian(cs)
    s = rng.uniform(0.1, 1.0)
    h = QuasiTridiagonalHamiltonian(
        f.a1 + s * rng.standard_normal(n), f.b1 + 0.3 * s * rng.standard_normal(n - 1),
        f.a2 + s * rng.standard_normal(n), f.b2 + 0.3 * s * rng.standard_normal(n - 1),
        s * rng.standard_normal(n), s * rng.standard_normal(n - 1))
    return h, cs


@dataclass(frozen=True)
class SpectralTriplet:
    lam: float
    zN: float
    zNN: float


def spectral_data(h: QuasiTridiagonalHamiltonian) -> list[SpectralTriplet]:
    """Eigenvalues with the last channel-1 and last channel-2 eigenvector components."""
    w, z = np.linalg.eigh(h.dense())
    n = h.N
    out = []
    for j in range(len(w)):
        zn, znn = z[n - 1, j], z[2 * n - 1, j]
        if (zn if abs(zn) >= abs(znn) else znn) < 0:
            zn, znn = -zn, -znn
        out.append(SpectralTriplet(float(w[j]), float(zn), float(znn)))
    return out


def triplet_arrays(triplets):
    lam = np.array([t.lam for t in triplets], dtype=float)
    zn = np.array([t.zN for t in triplets], dtype=float)
    znn = np.array([t.zNN for t in triplets], dtype=float)
    return lam, zn, znn


def p_functions(triplets, eps, check: bool = True):
    """(P11, P12, P22) partial-fraction sums at (possibly complex, array) eps."""
    lam, zn, znn = triplet_arrays(triplets)
    eps = np.asarray(eps)
    d = eps[..., None] - lam
    if check and np.any(np.abs(d) < POLE_TOL):
        raise PoleProximityError("energy coincides with an eigenvalue of H")
    return ((zn**2 / d).sum(-1), (zn * znn / d).sum(-1), (znn**2 / d).sum(-1))


def cleared_p_functions(triplets, eps):
    """w * (P11, P12, P22), w, and w * det P / w^2.

    w = prod_j (eps - lambda_j). The last entry,
    Q = sum_{i<j} prod_{m != i,j} (eps - lambda_m) (z_i z~_j - z_j z~_i)^2,
    equals w * (P11 P22 - P12^2); the pole of P is rank one, so Q stays
    finite and nondegenerate at the eigenvalues of H.
    """
    lam, zn, znn = triplet_arrays(triplets)
    eps = np.asarray(eps)
    d = eps[..., None] - lam
    m = len(lam)
    # products over all j != i
    others = np.stack([np.prod(np.delete(d, i, axis=-1), axis=-1) for i in range(m)], axis=-1)
    w = np.prod(d, axis=-1)
    q = 0
    for i in range(m):
        for j in range(i + 1, m):
            cross = (zn[i] * znn[j] - zn[j] * znn[i]) ** 2
            q = q + cross * np.prod(np.delete(d, [i, j], axis=-1), axis=-1)
    return (others * zn**2).sum(-1), (others * zn * znn).sum(-1), (others * znn**2).sum(-1), w, q


def _edge_solutions(cs: ChannelSet, alpha: int, q):
    """C^+ and C^- at n = N-1 and n = N for channel ``alpha`` (arrays over q)."""
    cfg = cs.basis(alpha)
    n = cs.N
    s = sine_like(cfg, q, n)[n - 1:]
    cp = cplus(cfg, q, n)[n - 1:]
    return cp, cp - 2j * s


class ForwardSolver:
    """Evaluates S(k) for a Hamiltonian, for real k > 0 or k on the imaginary axis."""

    def __init__(self, h: QuasiTridiagonalHamiltonian | None, cs: ChannelSet, triplets=None):
        if h is not None and h.N != cs.N:
            raise ValueError("Hamiltonian size does not match the channel set")
        if h is None and triplets is None:
            raise ValueError("need a Hamiltonian or its spectral triplets")
        self.h = h
        self.cs = cs
        self.triplets = list(triplets) if triplets is not None else spectral_data(h)
        n = cs.N
        self.t1 = float(kinetic_offdiag(cs.ell[0], n - 1))
        self.t2 = float(kinetic_offdiag(cs.ell[1], n - 1))

    def _pieces(self, k):
        cs = self.cs
        k = np.asarray(k, dtype=complex)
        k1 = k
        k2 = channel_momentum(k, cs.delta)
        q1, q2 = cs.rho * k1, cs.rho * k2
        eps = 0.5 * q1 * q1
        p11, p12, p22 = p_functions(self.triplets, eps)
        cp1, cm1 = _edge_solutions(cs, 0, q1)
        cp2, cm2 = _edge_solutions(cs, 1, q2)

        def g(c, p, t):
            return c[0] - p * t * c[1]

        return dict(k1=k1, k2=k2, p11=p11, p12=p12, p22=p22,
                    cp1=cp1, cm1=cm1, cp2=cp2, cm2=cm2, g=g)

    def d_plus(self, k):
        x = self._pieces(k)
        g, t1, t2 = x["g"], self.t1, self.t2
        return (g(x["cp1"], x["p11"], t1) * g(x["cp2"], x["p22"], t2)
                - x["p12"] ** 2 * t1 * t2 * x["cp1"][1] * x["cp2"][1])

    def _cleared(self, k):
        # numerators and D+, all multiplied by prod_j (eps - lambda_j)
        cs = self.cs
        k = np.asarray(k, dtype=complex)
        k2 = channel_momentum(k, cs.delta)
        q1, q2 = cs.rho * k, cs.rho * k2
        wp11, wp12, wp22, w, det = cleared_p_functions(self.triplets, 0.5 * q1 * q1)
        cp1, cm1 = _edge_solutions(cs, 0, q1)
        cp2, cm2 = _edge_solutions(cs, 1, q2)
        t1, t2 = self.t1, self.t2

        def terms(c1, c2):
            return (w * c1[0] * c2[0], -wp22 * t2 * c1[0] * c2[1],
                    -wp11 * t1 * c1[1] * c2[0], det * t1 * t2 * c1[1] * c2[1])

        dp_terms = terms(cp1, cp2)
        dp = sum(dp_terms)
        n11 = sum(terms(cm1, cp2))
        n22 = sum(terms(cp1, cm2))
        n12 = -1j * cs.rho**2 * np.sqrt(k) * np.sqrt(k2) * wp12
        scale = sum(np.abs(x) for x in dp_terms)
        return n11, n12, n22, dp, scale

    def smatrix(self, k, check: bool = True):
        """S(k) with shape k.shape + (2, 2).

        Numerators and D+ are multiplied by prod_j (eps - lambda_j), which
        leaves S unchanged and keeps it finite at the eigenvalues of H.
        """
        n11, n12, n22, dp, scale = self._cleared(k)
        if check and np.any(np.abs(dp) <= D_PLUS_TOL * scale):
            raise PoleProximityError("D+ vanishes: evaluating at an S-matrix pole")
        out = np.empty(np.shape(k) + (2, 2), dtype=complex)
        out[..., 0, 0] = n11 / dp
        out[..., 0, 1] = out[..., 1, 0] = n12 / dp
        out[..., 1, 1] = n22 / dp
        return out

    def pole_residues(self, kappa: float, h: float = 1e-4) -> tuple[complex, complex]:
        """N11/D+' and N12/D+' at k = i kappa.

        At a zero of D+ these are the residues of S11 and S12; elsewhere they
        remain smooth in the Hamiltonian parameters, which suits root finding.
        """
        def dp(kap):
            return self._cleared(1j * kap)[3]

        def cd(step):
            return (dp(kappa + step) - dp(kappa - step)) / (2 * step)

        # d/dk = -i d/dkappa on the imaginary axis
        deriv = -1j * (4 * cd(0.5 * h) - cd(h)) / 3
        n11, n12, _, _, _ = self._cleared(1j * kappa)
        return complex(n11 / deriv), complex(n12 / deriv)

    __call__ = smatrix

    @classmethod
    def from_triplets(cls, triplets, cs: ChannelSet) -> "ForwardSolver":
        """S-matrix of the Hamiltonian with the given eigenvalues and edge components."""
        if len(triplets) != 2 * cs.N:
            raise ValueError("need 2N spectral triplets")
        return cls(None, cs, triplets)

    def d_plus_normalized(self, kappa: float) -> float:
        """D+(i kappa) divided by C+_{N-1}(q1) C+_{N-1}(q2), dimensionless."""
        k = np.asarray(1j * kappa)
        q1 = self.cs.rho * k
        q2 = self.cs.rho * channel_momentum(k, self.cs.delta)
        c1 = _edge_solutions(self.cs, 0, q1)[0][0]
        c2 = _edge_solutions(self.cs, 1, q2)[0][0]
        return float((self.d_plus(k) / (c1 * c2)).real)

    @property
    def delta(self) -> float:
        return self.cs.delta

    def d_plus_imag_axis(self, kappa) -> np.ndarray:
        """D+(i kappa), real for real kappa > 0."""
        return self.d_plus(1j * np.asarray(kappa, dtype=float)).real

    def _d_plus_regular(self, kappa) -> np.ndarray:
        # D+ times prod(eps - lambda_j): same zeros, no poles. A bound-state
        # zero sits very close to an eigenvalue pole, so scanning D+ itself
        # can miss both sign changes inside one grid cell.
        kappa = np.asarray(kappa, dtype=float)
        eps = -0.5 * (self.cs.rho * kappa) ** 2
        lam = np.array([t.lam for t in self.triplets])
        sign = np.prod(np.sign(eps[..., None] - lam), axis=-1)
        return self.d_plus_imag_axis(kappa) * sign

    def bound_states(self, kappa_max: float | None = None, grid: int = 2000):
        """Zeros of D+ on the positive imaginary axis, with residues and ANCs."""
        from .refmodel import BoundStateData

        if kappa_max is None:
            kappa_max = 10.0 / self.cs.rho
        kap = np.linspace(kappa_max / grid, kappa_max, grid)
        vals = self._d_plus_regular(kap)
        out = []
        for i in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]:
            kappa = brentq(lambda t: float(self._d_plus_regular(t)), kap[i], kap[i + 1],
                           xtol=1e-14, rtol=1e-15)
            r11, r12 = self.residues(kappa)
            out.append(BoundStateData(kappa, r11, r12, delta=self.cs.delta, ell=self.cs.ell))
        return out

    def residues(self, kappa: float) -> tuple[complex, complex]:
        """Res S11 and Res S12 at k = i*kappa."""
        r = min(1e-3, 0.25 * kappa)

        def s(z):
            return self.smatrix(z, check=False)

        return (contour_residue(lambda z: s(z)[..., 0, 0], 1j * kappa, r),
                contour_residue(lambda z: s(z)[..., 0, 1], 1j * kappa, r))


def smatrix_from_h(h: QuasiTridiagonalHamiltonian, cs: ChannelSet, k: float) -> SMatrixSample:
    if not k > 0:
        raise ValueError("k must be positive")
    if abs(k - cs.k_threshold) < 1e-12:
        raise ValueError("S-matrix is not evaluated exactly at the threshold")
    return SMatrixSample(k, ForwardSolver(h, cs).smatrix(k))


def bound_states_from_h(h: QuasiTridiagonalHamiltonian, cs: ChannelSet,
                        kappa_max: float | None = None):
    """List of (kappa, (M1, M2)) for every bound state of H."""
    return [(b.kappa, b.anc) for b in ForwardSolver(h, cs).bound_states(kappa_max)]
