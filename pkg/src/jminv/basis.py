"""Oscillator basis, kinetic-energy matrix and free reference solutions.

Everything is expressed in oscillator units: lengths in units of the
oscillator radius ``rho`` and energies in units of hbar*omega, so that a
momentum ``k`` enters only through the dimensionless ``q = rho * k``.

The two free solutions of the three-term recursion are

* ``sine_like``   -- the regular solution, closed form in terms of a
  generalized Laguerre polynomial;
* ``cosine_like`` -- the irregular solution, seeded at ``n = 0, 1`` from a
  Kummer series and carried upward by the recursion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gamma, gammaln

SERIES_RTOL = 1e-15
SERIES_MAX_TERMS = 200


class SeriesConvergenceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class BasisConfig:
    rho: float
    N: int
    ell: int = 0

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.N < 2:
            raise ValueError(f"basis size N must be >= 2, got {self.N}")
        if self.ell < 0:
            raise ValueError(f"ell must be non-negative, got {self.ell}")


@dataclass(frozen=True)
class KineticMatrix:
    ell: int
    diag: np.ndarray  # T[n, n], n = 0..n_max
    offdiag: np.ndarray  # T[n, n+1], n = 0..n_max-1

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.offdiag, 1) + np.diag(self.offdiag, -1)


def kinetic_diag(ell: int, n):
    return 0.5 * (2 * np.asarray(n, dtype=float) + ell + 1.5)


def kinetic_offdiag(ell: int, n):
    """T[n, n+1] = T[n+1, n]; always negative."""
    n = np.asarray(n, dtype=float)
    return -0.5 * np.sqrt((n + 1) * (n + ell + 1.5))


def kinetic_matrix(cfg: BasisConfig, n_max: int) -> KineticMatrix:
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    n = np.arange(n_max + 1)
    return KineticMatrix(cfg.ell, kinetic_diag(cfg.ell, n), kinetic_offdiag(cfg.ell, n[:-1]))


def laguerre_table(n_max: int, alpha: float, x):
    """Generalized Laguerre polynomials L_n^alpha(x), n = 0..n_max, by recurrence.

    ``x`` may be complex. Returns an array of shape ``(n_max + 1,) + shape(x)``.
    """
    x = np.asarray(x)
    out = np.empty((n_max + 1,) + x.shape, dtype=np.result_type(x, float))
    out[0] = 1.0
    if n_max >= 1:
        out[1] = 1.0 + alpha - x
    for n in range(1, n_max):
        out[n + 1] = ((2 * n + 1 + alpha - x) * out[n] - (n + alpha) * out[n - 1]) / (n + 1)
    return out


def kummer_series(a: float, b: float, z):
    """Confluent hypergeometric 1F1(a; b; z) by direct summation (vectorized in z)."""
    z = np.asarray(z, dtype=complex)
    term = np.ones_like(z)
    total = np.ones_like(z)
    for k in range(SERIES_MAX_TERMS):
        term = term * ((a + k) / (b + k) / (k + 1)) * z
        total = total + term
        if np.all(np.abs(term) <= SERIES_RTOL * np.abs(total)):
            return total
    raise SeriesConvergenceError(
        f"1F1({a}; {b}; z) did not converge in {SERIES_MAX_TERMS} terms for max|z| = {np.abs(z).max():.3g}"
    )


def _norm(rho: float, ell: int, n):
    n = np.asarray(n, dtype=float)
    return np.sqrt(np.pi * rho) * np.exp(0.5 * (gammaln(n + 1) - gammaln(n + ell + 1.5)))


def sine_like(cfg: BasisConfig, q, n_max: int) -> np.ndarray:
    """Regular solutions S_n(q), n = 0..n_max; array shape (n_max+1,) + shape(q)."""
    q = np.asarray(q)
    ell = cfg.ell
    lag = laguerre_table(n_max, ell + 0.5, q * q)
    n = np.arange(n_max + 1).reshape((-1,) + (1,) * q.ndim)
    return _norm(cfg.rho, ell, n) * q ** (ell + 1) * np.exp(-0.5 * q * q) * lag


def _cosine_seed(cfg: BasisConfig, q, n: int):
    ell = cfg.ell
    # Gamma(ell + 1/2) / pi, with Gamma(1/2) = sqrt(pi)
    pref = np.exp(gammaln(ell + 0.5)) / np.pi
    f = kummer_series(-n - ell - 0.5, -ell + 0.5, q * q)
    return _norm(cfg.rho, ell, n) * pref / q**ell * np.exp(-0.5 * q * q) * f


SERIES_ZONE = 16.0
SERIES_FRACTION = 0.2


def cosine_like(cfg: BasisConfig, q, n_max: int) -> np.ndarray:
    """Irregular solutions C_n(q), n = 0..n_max; array shape (n_max+1,) + shape(q).

    Upward recursion from the n = 0, 1 series values. For Re q^2 > 16 the
    recursion loses accuracy at low n (C_n is not dominant while n < q^2/4),
    so there every n up to 0.2 Re q^2 comes from its own series.
    """
    q = np.asarray(q, dtype=complex)
    if np.any(q == 0):
        raise ValueError("cosine-like solution is undefined at q = 0")
    out = np.empty((n_max + 1,) + q.shape, dtype=complex)
    z = q * q
    n_series = np.where(z.real > SERIES_ZONE,
                        np.maximum(1, (SERIES_FRACTION * z.real).astype(int)), 1)
    n_series = np.minimum(n_series, n_max)
    out[0] = _cosine_seed(cfg, q, 0)
    if n_max >= 1:
        out[1] = _cosine_seed(cfg, q, 1)
    e = 0.5 * z
    ell = cfg.ell
    for n in range(1, n_max):
        rec = ((e - kinetic_diag(ell, n)) * out[n]
               - kinetic_offdiag(ell, n - 1) * out[n - 1]) / kinetic_offdiag(ell, n)
        use = n + 1 <= n_series
        if np.any(use):
            rec = np.where(use, _cosine_seed(cfg, np.where(use, q, 1.0), n + 1), rec)
        out[n + 1] = rec
    return out


def _scaled_upper_gamma(s: float, t):
    """e^t * Gamma(s, t) for t > 0 and non-integer s."""
    t = np.asarray(t, dtype=float)
    small = t < 2.0
    out = np.empty_like(t)
    if np.any(small):
        out[small] = _upper_gamma_series(s, t[small])
    if np.any(~small):
        out[~small] = _upper_gamma_cf(s, t[~small])
    return out


def _upper_gamma_series(s, t):
    # Gamma(s, t) = Gamma(s) - t^s sum_k (-t)^k / (k! (s + k))
    term = np.ones_like(t)
    total = term / s
    for k in range(1, 200):
        term = term * (-t) / k
        total = total + term / (s + k)
        if np.all(np.abs(term) < 1e-17 * np.abs(total)):
            break
    return np.exp(t) * (gamma(s) - t**s * total)


def _upper_gamma_cf(s, t):
    # Legendre continued fraction, modified Lentz
    tiny = 1e-300
    b = t + 1.0 - s
    c = np.full_like(t, 1.0 / tiny)
    d = 1.0 / b
    h = d.copy()
    for i in range(1, 500):
        an = -i * (i - s)
        b = b + 2.0
        d = an * d + b
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = b + an / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        delta = d * c
        h = h * delta
        if np.all(np.abs(delta - 1.0) < 1e-16):
            break
    return t**s * h


MILLER_EXTRA = 80
IMAG_SERIES_MAX = 0.5


def cplus_imaginary(cfg: BasisConfig, t, n_max: int) -> np.ndarray:
    """C^+_n(i sqrt(t)) for t > 0, n = 0..n_max, as the minimal solution in n.

    Backward recursion from far above n_max, normalized by the closed form
    of C^+_0 through the Tricomi function U(a, a, t) = e^t Gamma(1 - a, t).
    Shape (n_max+1,) + shape(t).
    """
    t = np.asarray(t, dtype=float)
    ell = cfg.ell
    e = -0.5 * t
    top = n_max + MILLER_EXTRA + int(8 * np.sqrt(np.max(t, initial=1.0)))
    idx = np.arange(top + 1)
    diag = (e[None, ...] if t.ndim else e) - kinetic_diag(ell, idx).reshape((-1,) + (1,) * t.ndim)
    off = kinetic_offdiag(ell, idx).tolist()
    d_next = np.zeros_like(t)
    d_cur = np.full_like(t, 1e-280)
    out = np.empty((n_max + 1,) + t.shape)
    for n in range(top, 0, -1):
        d_prev = (diag[n] * d_cur - off[n] * d_next) / off[n - 1]
        d_next, d_cur = d_cur, d_prev
        if n - 1 <= n_max:
            out[n - 1] = d_cur
        # keep the unnormalized sequence inside the float range
        if n % 16 == 0 and np.max(np.abs(d_cur)) > 1e200:
            scale = np.where(np.abs(d_cur) > 1e200, 1e-200, 1.0)
            d_cur, d_next, out[n - 1:] = d_cur * scale, d_next * scale, out[n - 1:] * scale
    u0 = _scaled_upper_gamma(-ell - 0.5, t)
    c0 = np.sqrt(cfg.rho * np.exp(gammaln(ell + 1.5)) / np.pi) * t ** ((ell + 1) / 2) * np.exp(-0.5 * t) * u0
    return (1j ** (-ell)) * out * (c0 / out[0])


def cplus(cfg: BasisConfig, q, n_max: int) -> np.ndarray:
    """C^+_n(q) = C_n + i S_n, switching to the minimal-solution path on the
    positive imaginary axis where the direct sum cancels catastrophically."""
    q = np.asarray(q, dtype=complex)
    t = -(q * q).real
    imag_axis = (np.abs(q.real) <= 1e-14 * np.abs(q)) & (q.imag > 0) & (t > IMAG_SERIES_MAX)
    if not np.any(imag_axis):
        return cosine_like(cfg, q, n_max) + 1j * sine_like(cfg, q, n_max)
    out = np.empty((n_max + 1,) + q.shape, dtype=complex)
    rest = ~imag_axis
    if np.any(rest):
        out[:, rest] = cosine_like(cfg, q[rest], n_max) + 1j * sine_like(cfg, q[rest], n_max)
    out[:, imag_axis] = cplus_imaginary(cfg, t[imag_axis], n_max)
    return out


@dataclass(frozen=True)
class ReferenceSolutionTable:
    q: complex
    sine_like: np.ndarray
    cosine_like: np.ndarray
    outgoing: np.ndarray | None = None  # C^+ when computed directly

    @property
    def cplus(self) -> np.ndarray:
        if self.outgoing is not None:
            return self.outgoing
        return self.cosine_like + 1j * self.sine_like

    @property
    def cminus(self) -> np.ndarray:
        return self.cosine_like - 1j * self.sine_like


def reference_solutions(cfg: BasisConfig, q: complex, n_max: int) -> ReferenceSolutionTable:
    """Free solutions at one momentum.

    On the imaginary axis beyond |q|^2 = 1/2 the decaying C^+ is computed
    directly and kept, so ``cplus`` has full relative precision even where
    C_n and i S_n cancel.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    q = complex(q)
    if q == 0:
        raise ValueError("q must be nonzero")
    s = sine_like(cfg, q, n_max).astype(complex)
    if q.real == 0 and q.imag > 0 and q.imag**2 > IMAG_SERIES_MAX:
        plus = cplus(cfg, q, n_max)
        return ReferenceSolutionTable(q, s, plus - 1j * s, plus)
    return ReferenceSolutionTable(q, s, cosine_like(cfg, q, n_max))


def recursion_residual(ell: int, q: complex, d) -> np.ndarray:
    """Residual of the free three-term recursion at interior n = 1..len(d)-2."""
    d = np.asarray(d)
    n = np.arange(1, len(d) - 1)
    return (
        kinetic_offdiag(ell, n - 1) * d[:-2]
        + (kinetic_diag(ell, n) - 0.5 * q * q) * d[1:-1]
        + kinetic_offdiag(ell, n) * d[2:]
    )


def cosine_asymptotic(cfg: BasisConfig, n: int, q: float) -> float:
    """Large-q form of C_n(q); exponentially growing, sign (-1)^(n+1)."""
    ell = cfg.ell
    mag = np.exp(0.5 * (np.log(cfg.rho) + gammaln(n + 1) + gammaln(n + ell + 1.5) - np.log(np.pi)))
    return (-1) ** (n + 1) * mag * q ** (-(2 * n + ell + 2)) * np.exp(0.5 * q * q)


def cplus_imaginary_asymptotic(cfg: BasisConfig, n: int, qabs: float) -> complex:
    """Large-n form of C^+_n(i|q|).

    The decay rate is exp(-2|q| sqrt(n + ell/2 + 3/4)); the turning radius of
    oscillator state n sits at x ~ 2 sqrt(n), which is where the factor 2 comes from.
    """
    ell = cfg.ell
    nu = n + ell / 2 + 0.75
    return 1j ** (-ell) * np.sqrt(cfg.rho) * nu**-0.25 * np.exp(-2.0 * qabs * np.sqrt(nu))


def cosine_asymptotic_check(cfg: BasisConfig, table: ReferenceSolutionTable) -> dict:
    """Ratio of computed C_n to its large-q form, per n.

    Returns ``{"ratio": array, "sign_ok": bool array}``.
    """
    q = table.q
    if abs(q.imag) > 0 or q.real < 3:
        raise ValueError("asymptotic check needs real q >= 3")
    q = q.real
    n = np.arange(len(table.cosine_like))
    asym = np.array([cosine_asymptotic(cfg, int(i), q) for i in n])
    c = table.cosine_like.real
    return {"ratio": c / asym, "sign_ok": np.sign(c) == (-1.0) ** (n + 1)}


def oscillator_fn(cfg: BasisConfig, n: int, r) -> np.ndarray:
    """phi_n(r), normalized to unit norm in r (not in x = r/rho)."""
    x = np.asarray(r, dtype=float) / cfg.rho
    ell = cfg.ell
    lag = laguerre_table(n, ell + 0.5, x * x)[n]
    logc = 0.5 * (np.log(2.0) + gammaln(n + 1) - np.log(cfg.rho) - gammaln(n + ell + 1.5))
    return (-1) ** n * np.exp(logc) * x ** (ell + 1) * np.exp(-0.5 * x * x) * lag
