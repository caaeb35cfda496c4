"""Reference S-matrix providers, bound-state data and eigenphase decomposition.

A provider is any object with

* ``__call__(k)`` returning the 2x2 S-matrix for a scalar or array of
  momenta (shape ``k.shape + (2, 2)``),
* ``delta`` (channel-2 threshold) and ``bound`` (list of BoundStateData).

Providers are immutable after construction.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .channels import channel_momentum

log = logging.getLogger(__name__)

POLE_WARN = 1e-12


class NoPoleFoundError(RuntimeError):
    pass


class UnitarityError(ValueError):
    def __init__(self, defect: float):
        super().__init__(f"S-matrix is not unitary/symmetric: defect {defect:.3e}")
        self.defect = defect


@dataclass(frozen=True)
class SMatrixSample:
    k: float
    s: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=complex).reshape(2, 2)
        object.__setattr__(self, "s", s)

    @property
    def symmetry_defect(self) -> float:
        return float(abs(self.s[0, 1] - self.s[1, 0]))

    @property
    def unitarity_defect(self) -> float:
        return unitarity_defect(self.s)


def unitarity_defect(s) -> float:
    s = np.asarray(s)
    return float(np.max(np.abs(s @ s.conj().T - np.eye(2))))


@dataclass(frozen=True)
class BoundStateData:
    """Bound state at k = i*kappa with residues of S11 and S12 there.

    ``res11`` and ``res12`` are the (complex) residues Res_{k=i kappa} S.
    ``anc`` holds the asymptotic normalization constants (M1, M2), derived
    from the residues when not given.
    """

    kappa: float
    res11: complex
    res12: complex
    delta: float = 0.0
    ell: tuple[int, int] = (0, 0)
    anc: tuple[float, float] = field(default=None)

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.anc is None:
            object.__setattr__(self, "anc", ancs_from_residues(
                self.kappa, self.res11, self.res12, self.delta, self.ell))

    @property
    def res22(self) -> complex:
        """Residue of S22 implied by the rank-one structure of the pole."""
        return residue_from_ancs(self.kappa, self.anc, self.delta, self.ell)[2]

    def weight(self) -> np.ndarray:
        """Bound-state weight matrix A = m m^T."""
        m = np.asarray(self.anc, dtype=float)
        return np.outer(m, m)


def _res_factor(kappa, delta, ell_a, ell_b, delta_a, delta_b):
    # i Res S_ab = i^(l_a + l_b) sqrt(sqrt(kappa^2 + D_a) sqrt(kappa^2 + D_b) / kappa^2) M_a M_b
    ka = np.sqrt(kappa**2 + delta_a)
    kb = np.sqrt(kappa**2 + delta_b)
    return 1j ** (ell_a + ell_b) * np.sqrt(ka * kb / kappa**2)


def ancs_from_residues(kappa, res11, res12, delta, ell=(0, 0)) -> tuple[float, float]:
    """Invert the residue/ANC relation for (M1, M2) given Res S11 and Res S12.

    M1 is taken positive; the sign of M2 follows from Res S12.
    """
    d = (0.0, delta)
    f11 = _res_factor(kappa, delta, ell[0], ell[0], d[0], d[0])
    f12 = _res_factor(kappa, delta, ell[0], ell[1], d[0], d[1])
    m1sq = 1j * res11 / f11
    if abs(m1sq.imag) > 1e-8 * abs(m1sq) or m1sq.real <= 0:
        raise ValueError(f"residue of S11 gives non-positive M1^2 = {m1sq}")
    m1 = np.sqrt(m1sq.real)
    m1m2 = 1j * res12 / f12
    if abs(m1m2.imag) > 1e-8 * max(abs(m1m2), 1.0):
        raise ValueError(f"residue of S12 gives complex M1*M2 = {m1m2}")
    return float(m1), float(m1m2.real / m1)


def residue_from_ancs(kappa, anc, delta, ell=(0, 0)) -> tuple[complex, complex, complex]:
    """(Res S11, Res S12, Res S22) at k = i*kappa from the ANCs."""
    d = (0.0, delta)
    m = anc
    out = []
    for a, b in ((0, 0), (0, 1), (1, 1)):
        f = _res_factor(kappa, delta, ell[a], ell[b], d[a], d[b])
        out.append(complex(f * m[a] * m[b] / 1j))
    return tuple(out)


@dataclass(frozen=True)
class AnalyticModelParams:
    a: float = -2.0
    b: float = 0.6
    x: float = 3.0
    delta: float = 10.0


class AnalyticModel:
    """Closed-form two-channel s-wave S-matrix of a separable model potential.

    Valid for complex k in the upper half plane; the channel-2 momentum is
    taken on the physical sheet (Im k2 >= 0).
    """

    ell = (0, 0)

    def __init__(self, params: AnalyticModelParams = AnalyticModelParams(), bound=None):
        self.params = params
        self.delta = params.delta
        self._bound = bound

    @property
    def bound(self) -> list[BoundStateData]:
        if self._bound is None:
            try:
                self._bound = [bound_state_of_model(self.params)]
            except NoPoleFoundError:
                self._bound = []
        return self._bound

    def coupled_denominator(self, k, k2=None):
        p = self.params
        if k2 is None:
            k2 = channel_momentum(k, p.delta)
        return p.a**2 - p.b**2 - 1j * p.a * k - 1j * p.a * k2 - k * k2

    def __call__(self, k):
        p = self.params
        k = np.asarray(k, dtype=complex)
        k2 = channel_momentum(k, p.delta)
        den = self.coupled_denominator(k, k2)
        if np.any(np.abs(den) < POLE_WARN) or np.any(np.abs(p.x + 1j * k) < POLE_WARN):
            warnings.warn("evaluating the model S-matrix next to a pole", RuntimeWarning)
        root = np.sqrt(p.x**2 + p.delta)
        a2b2 = p.a**2 - p.b**2
        s11 = (p.x - 1j * k) * (a2b2 + 1j * p.a * k - 1j * p.a * k2 + k * k2) / ((p.x + 1j * k) * den)
        s12 = -2j * p.b * np.sqrt(k) * np.sqrt(k2) * (root - 1j * k2) / ((p.x + 1j * k) * den)
        s22 = (root - 1j * k2) * (a2b2 - 1j * p.a * k + 1j * p.a * k2 + k * k2) / ((root + 1j * k2) * den)
        out = np.empty(k.shape + (2, 2), dtype=complex)
        out[..., 0, 0] = s11
        out[..., 0, 1] = out[..., 1, 0] = s12
        out[..., 1, 1] = s22
        return out


def model_smatrix(p: AnalyticModelParams, k: float) -> SMatrixSample:
    if k < 0:
        raise ValueError("k must be non-negative")
    return SMatrixSample(k, AnalyticModel(p, bound=[])(k))


def contour_residue(fn, pole: complex, radius: float = 1e-2, points: int = 64) -> complex:
    """Residue of ``fn`` at ``pole`` by the trapezoid rule on a small circle."""
    theta = 2 * np.pi * (np.arange(points) + 0.5) / points
    dz = radius * np.exp(1j * theta)
    return complex(np.mean(dz * fn(pole + dz)))


def bound_state_of_model(p: AnalyticModelParams, kappa_max: float = 50.0,
                         grid: int = 5000) -> BoundStateData:
    """Locate the bound-state pole of the model on the positive imaginary axis.

    Only zeros of the coupled-channel factor are bound states; the zero of
    the ``x + i k`` phase factor is a redundant pole and is not reported.
    """
    model = AnalyticModel(p, bound=[])

    def g(kappa):
        return model.coupled_denominator(1j * kappa).real

    kap = np.linspace(kappa_max / grid, kappa_max, grid)
    vals = np.array([g(x) for x in kap])
    exact = np.nonzero(vals == 0)[0]
    idx = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
    if len(idx) + len(exact) == 0:
        raise NoPoleFoundError("model S-matrix has no pole on (0, i*kappa_max]")
    if len(idx) + len(exact) > 1:
        log.warning("model has %d bound states; using the deepest", len(idx) + len(exact))
    if len(exact) and (len(idx) == 0 or exact[-1] > idx[-1]):
        kappa = float(kap[exact[-1]])
    else:
        i = idx[-1]
        kappa = brentq(g, kap[i], kap[i + 1], xtol=1e-15, rtol=1e-15)
    r = min(1e-2, 0.25 * kappa)
    res11 = contour_residue(lambda z: model(z)[..., 0, 0], 1j * kappa, r)
    res12 = contour_residue(lambda z: model(z)[..., 0, 1], 1j * kappa, r)
    return BoundStateData(kappa, res11, res12, delta=p.delta)


@dataclass(frozen=True)
class EigenphaseDecomposition:
    delta1: float
    delta2: float
    mix: float

    def recompose(self) -> np.ndarray:
        o = rotation(self.mix)
        return o @ np.diag(np.exp(2j * np.array([self.delta1, self.delta2]))) @ o.T


def rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def eigenphase_mix(s, tol: float = 1e-6) -> EigenphaseDecomposition:
    """Blatt-Biedenharn decomposition S = O(mix) diag(e^{2i d1}, e^{2i d2}) O(mix)^T.

    Phases are returned in (-pi/2, pi/2] and the mixing angle in (-pi/4, pi/4].
    """
    s = np.asarray(getattr(s, "s", s), dtype=complex)
    defect = max(unitarity_defect(s), float(abs(s[0, 1] - s[1, 0])))
    if defect > tol:
        raise UnitarityError(defect)
    s = 0.5 * (s + s.T)
    # Re S and Im S commute for a unitary symmetric S; a generic real
    # combination of the two shares their eigenvectors.
    m = s.real + 0.7548776662 * s.imag
    if abs(m[0, 1]) < 1e-15 * max(1.0, np.abs(m).max()):
        u = np.eye(2)
    else:
        _, u = np.linalg.eigh(m)
    if np.linalg.det(u) < 0:
        u[:, 1] = -u[:, 1]
    mix = np.arctan2(u[1, 0], u[0, 0])
    phases = np.angle(np.diag(u.T @ s @ u)) / 2
    # bring mix into (-pi/4, pi/4]; a quarter turn swaps the two eigenchannels
    while mix > np.pi / 4:
        mix -= np.pi / 2
        phases = phases[::-1]
    while mix <= -np.pi / 4:
        mix += np.pi / 2
        phases = phases[::-1]
    phases = _wrap_half_pi(phases)
    return EigenphaseDecomposition(float(phases[0]), float(phases[1]), float(mix))


def _wrap_half_pi(x):
    x = np.asarray(x, dtype=float)
    return x - np.pi * np.ceil(x / np.pi - 0.5)


def eigenphase_sweep(smats, tol: float = 1e-6) -> np.ndarray:
    """Decompose a sequence of S-matrices with continuity in the sweep variable.

    Returns an array of shape (len(smats), 3) with columns (delta1, delta2, mix).
    Phases are unwrapped modulo pi; eigenchannel labels follow the branch
    that keeps the mixing angle continuous.
    """
    out = np.empty((len(smats), 3))
    prev = None
    for i, s in enumerate(smats):
        d = eigenphase_mix(s, tol)
        cur = np.array([d.delta1, d.delta2, d.mix])
        if prev is not None:
            best = None
            for m in range(-2, 3):
                cand = cur.copy()
                cand[2] = cur[2] + m * np.pi / 2
                if m % 2:
                    cand[:2] = cur[1::-1]
                cand[:2] += np.pi * np.round((prev[:2] - cand[:2]) / np.pi)
                score = abs(cand[2] - prev[2]) + 1e-3 * np.abs(cand[:2] - prev[:2]).sum()
                if best is None or score < best[0]:
                    best = (score, cand)
            cur = best[1]
        out[i] = cur
        prev = cur
    return out


class TabulatedProvider:
    """Elementwise cubic-spline interpolation of tabulated S-matrix samples.

    S has a square-root cusp at the channel-2 threshold but is smooth in the
    channel-2 momentum, so each side of the threshold is interpolated in
    |k2| = sqrt(|k^2 - delta|) separately. S12 carries a factor sqrt(k2),
    which is divided out before interpolation.
    """

    ell = (0, 0)

    def __init__(self, samples, bound=(), delta: float = 0.0, sym_tol: float = 1e-6):
        samples = list(samples)
        if len(samples) < 4:
            raise ValueError("cubic interpolation needs at least 4 samples")
        k = np.array([smp.k for smp in samples], dtype=float)
        if np.any(np.diff(k) <= 0):
            raise ValueError("samples must be sorted by strictly increasing k")
        for smp in samples:
            if smp.symmetry_defect > sym_tol:
                raise UnitarityError(smp.symmetry_defect)
        s = np.array([smp.s for smp in samples])
        self.k = k
        self.delta = float(delta)
        self.bound = list(bound)
        self.k_max = float(k[-1])
        self._pieces = []
        for side in (k * k < self.delta, k * k >= self.delta):
            if not np.any(side):
                continue
            if np.count_nonzero(side) < 4:
                raise ValueError("need at least 4 samples on each side of the threshold")
            x = self._variable(k[side])
            order = np.argsort(x)
            x = x[order]
            vals = {(a, b): s[side, a, b][order] for a, b in ((0, 0), (0, 1), (1, 1))}
            vals[0, 1] = vals[0, 1] / self._s12_factor(x)
            self._pieces.append((side[0], {
                key: (CubicSpline(x, v.real), CubicSpline(x, v.imag)) for key, v in vals.items()}))

    def _variable(self, k):
        return np.sqrt(np.abs(k * k - self.delta)) if self.delta > 0 else k

    def _s12_factor(self, x):
        return np.sqrt(np.maximum(x, 1e-300)) if self.delta > 0 else np.ones_like(x)

    def __call__(self, k):
        k = np.asarray(k, dtype=float)
        out = np.empty(k.shape + (2, 2), dtype=complex)
        below = k * k < self.delta
        for is_below, spl in self._pieces:
            # points on a side without samples are extrapolated from the other side
            side = below if is_below else ~below
            if len(self._pieces) == 1:
                side = np.ones(k.shape, dtype=bool)
            if not np.any(side):
                continue
            x = self._variable(k[side])
            for (a, b), (re, im) in spl.items():
                out[side, a, b] = re(x) + 1j * im(x)
            out[side, 0, 1] *= self._s12_factor(x)
        out[..., 1, 0] = out[..., 0, 1]
        return out


def tabulated_provider(samples, bound=(), delta: float = 0.0) -> TabulatedProvider:
    return TabulatedProvider(samples, bound, delta)


def eigenphase_curves(smats, k, delta: float, tol: float = 1e-6) -> np.ndarray:
    """Columns (delta1, delta2, mix) along increasing k.

    Below the channel-2 threshold only channel 1 is open: delta1 = arg(S11)/2
    and the other two columns are NaN. Above it the Blatt-Biedenharn sweep is
    used, with delta1 shifted by a multiple of pi to join the lower branch.
    """
    smats = np.asarray(smats, dtype=complex)
    k = np.asarray(k, dtype=float)
    out = np.full((len(k), 3), np.nan)
    below = k < np.sqrt(delta)
    if np.any(below):
        out[below, 0] = np.unwrap(np.angle(smats[below, 0, 0]), period=2 * np.pi) / 2
    above = ~below
    if np.any(above):
        sweep = eigenphase_sweep(smats[above], tol)
        if np.any(below):
            ref = out[below, 0][-1]
            sweep[:, 0] += np.pi * np.round((ref - sweep[0, 0]) / np.pi)
        out[above] = sweep
    return out


def max_eigenphase_deviation(curves_a, curves_b) -> float:
    """Largest |difference| of eigenphases/mixing modulo pi, ignoring NaN entries."""
    d = np.asarray(curves_a) - np.asarray(curves_b)
    d = d - np.pi * np.round(d / np.pi)
    return float(np.nanmax(np.abs(d)))
