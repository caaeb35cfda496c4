"""External and bound spectral triplets, and the closed-channel iteration.

Eigenvalues above rho^2 k0^2 / 2 cannot be read off the S-matrix data, and a
bound state shows up only through kappa and two residues. Together they are
nine unknowns (three triplets) fixed by nine equations:

* orthonormality of the last-row eigenvector components (3),
* the last-row Hamiltonian elements a1, a2, u given by the Marchenko solve (3),
* D+(i kappa) = 0 (1),
* the residues of S11 and S12 at k = i kappa (2).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .channels import ChannelSet
from .forward import ForwardSolver, QuasiTridiagonalHamiltonian, SpectralTriplet, triplet_arrays
from .marchenko import last_row_targets
from .refmodel import BoundStateData
from .spectral import find_closed_triplets, find_open_triplets, lanczos_reconstruct

log = logging.getLogger(__name__)

FD_STEP = 1e-7
F_TOL = 1e-10
MAX_NEWTON = 200


class NonConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (|F| = {residual:.3e})")
        self.residual = residual


@dataclass
class ConstraintSystem:
    known: list
    targets: tuple
    bound: BoundStateData
    cs: ChannelSet
    k0: float

    @property
    def known_arrays(self):
        return triplet_arrays(self.known)

    def triplets(self, x) -> list[SpectralTriplet]:
        x = np.asarray(x, dtype=float)
        new = [SpectralTriplet(*x[3 * i:3 * i + 3]) for i in range(3)]
        return sorted(list(self.known) + new, key=lambda t: t.lam)

    @property
    def eps_bound(self) -> float:
        return -0.5 * (self.cs.rho * self.bound.kappa) ** 2

    def in_domain(self, x) -> bool:
        # the lowest eigenvalue of the truncated H lies above the exact bound
        # energy (Rayleigh-Ritz), and below all data eigenvalues
        lam_known = self.known_arrays[0]
        eps0 = float(self.cs.eps(self.k0))
        return bool(self.eps_bound < x[0] < lam_known.min() and x[3] > eps0 and x[6] > eps0
                    and abs(x[3] - x[6]) > 1e-8)


def constraint_residuals(sys: ConstraintSystem, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    trip = sys.triplets(x)
    lam, zn, znn = triplet_arrays(trip)
    a1, a2, u = sys.targets
    fs = ForwardSolver.from_triplets(trip, sys.cs)
    kappa = sys.bound.kappa
    r11, r12 = fs.pole_residues(kappa)
    d11, d12 = sys.bound.res11, sys.bound.res12
    return np.array([
        zn @ zn - 1.0,
        znn @ znn - 1.0,
        zn @ znn,
        lam @ zn**2 - a1,
        lam @ znn**2 - a2,
        lam @ (zn * znn) - u,
        # times (eps_b - lambda_b): removes the nearby pole of the P-functions
        fs.d_plus_normalized(kappa) * (sys.eps_bound - x[0]),
        # residues at k = i kappa are purely imaginary for l = 0
        (r11 - d11).imag / abs(d11),
        (r12 - d12).imag / abs(d12),
    ])


def initial_guess(sys: ConstraintSystem) -> np.ndarray:
    """Externals just above rho^2 k0^2 / 2, the bound eigenvalue just above the
    bound energy, Z from the orthonormality deficits."""
    _, zn, znn = sys.known_arrays
    d1 = max(1.0 - zn @ zn, 1e-6)
    d2 = max(1.0 - znn @ znn, 1e-6)
    d12 = -(zn @ znn)
    eps0 = float(sys.cs.eps(sys.k0))
    lam_b = sys.eps_bound + 1e-3 * max(1.0, abs(sys.eps_bound))
    z9 = np.sqrt(d1)
    z10 = np.sqrt(d2)
    return np.array([lam_b, 0.01, 0.0,
                     eps0 + 0.5, z9, 0.5 * d12 / z9,
                     eps0 + 1.5, 0.5 * d12 / z10, z10])


@dataclass
class NewtonReport:
    iterations: int = 0
    residual: float = np.inf
    history: list = field(default_factory=list)


def _jacobian(fun, x, fx):
    jac = np.empty((fx.size, x.size))
    for i in range(x.size):
        h = FD_STEP * max(1.0, abs(x[i]))
        xp = x.copy()
        xp[i] += h
        jac[:, i] = (fun(xp) - fx) / h
    return jac


def damped_newton(fun, x0, in_domain=lambda x: True, tol: float = F_TOL,
                  max_iter: int = MAX_NEWTON, report: NewtonReport | None = None):
    """Newton with a forward-difference Jacobian and Armijo backtracking."""
    report = report if report is not None else NewtonReport()
    x = np.asarray(x0, dtype=float).copy()
    fx = fun(x)
    for it in range(max_iter):
        norm = float(np.max(np.abs(fx)))
        report.history.append(norm)
        report.iterations, report.residual = it, norm
        if norm <= tol:
            return x
        jac = _jacobian(fun, x, fx)
        try:
            step = np.linalg.solve(jac, -fx)
        except np.linalg.LinAlgError as exc:
            raise NonConvergenceError("singular Jacobian", norm) from exc
        t = 1.0
        phi0 = fx @ fx
        while t > 1e-6:
            xt = x + t * step
            if in_domain(xt):
                ft = fun(xt)
                if ft @ ft <= (1 - 1e-4 * t) * phi0:
                    break
            t *= 0.5
        else:
            raise NonConvergenceError("line search failed", norm)
        x, fx = xt, ft
    norm = float(np.max(np.abs(fx)))
    report.residual = norm
    if norm <= tol:
        return x
    raise NonConvergenceError(f"no convergence in {max_iter} Newton steps", norm)


def solve_external(sys: ConstraintSystem, guess=None, report: NewtonReport | None = None,
                   tol: float = F_TOL) -> list[SpectralTriplet]:
    """The bound triplet and the two external triplets, in that order."""
    x0 = initial_guess(sys) if guess is None else np.asarray(guess, dtype=float)
    x = damped_newton(lambda v: constraint_residuals(sys, v), x0, sys.in_domain,
                      tol=tol, report=report)
    return [SpectralTriplet(*map(float, x[3 * i:3 * i + 3])) for i in range(3)]


def pack(triplets) -> np.ndarray:
    return np.array([[t.lam, t.zN, t.zNN] for t in triplets], dtype=float).ravel()


@dataclass
class IterationState:
    index: int = 0
    h: QuasiTridiagonalHamiltonian | None = None
    history: list = field(default_factory=list)
    unknowns: list = field(default_factory=list)
    known: list = field(default_factory=list)
    converged: bool = False
    initial_h: QuasiTridiagonalHamiltonian | None = None
    initial_unknowns: list = field(default_factory=list)

    def forward(self, cs: ChannelSet) -> ForwardSolver:
        return ForwardSolver(self.h, cs)


def extract_known(provider, cs: ChannelSet, k0: float):
    """Closed- and open-region triplets from the S-matrix data."""
    return find_closed_triplets(provider, cs) + find_open_triplets(provider, cs, k0)


def iterate_closed_channel(provider, cs: ChannelSet, bound: BoundStateData, k0: float,
                           max_iter: int = 20, tol: float = 1e-8, known=None,
                           check_quadrature: bool = True):
    """Closed-channel fixed point: S12 below threshold from the previous H.

    Iteration 0 sets S12 = 0 below threshold. The closed- and open-region
    triplets are extracted once and kept fixed.
    """
    known = extract_known(provider, cs, k0) if known is None else list(known)
    n_expected = 2 * cs.N - 3
    if len(known) != n_expected:
        raise ValueError(f"found {len(known)} triplets in [0, k0], the constraint system "
                         f"needs {n_expected}")
    state = IterationState(known=known)
    guess = None
    closed_s12 = None
    for i in range(max_iter + 1):
        targets, _ = last_row_targets(provider, cs, [bound], k0, closed_s12,
                                      check=check_quadrature)
        state.history.append(tuple(float(t) for t in targets))
        sys = ConstraintSystem(known, targets, bound, cs, k0)
        unknowns = solve_external(sys, guess)
        guess = pack(unknowns)
        state.index = i
        state.unknowns = unknowns
        state.h = lanczos_reconstruct(sys.triplets(guess))
        if i == 0:
            state.initial_h, state.initial_unknowns = state.h, unknowns
        log.info("iteration %d: a1=%.10f a2=%.10f u=%.10f", i, *targets)
        if i > 0:
            change = max(abs(a - b) for a, b in zip(state.history[-1], state.history[-2]))
            if change < tol:
                state.converged = True
                break
        if i >= 5:
            du = np.abs(np.diff([h[2] for h in state.history[-6:]]))
            if np.any(np.diff(du) > 0):
                warnings.warn("u_{N-1} changes are not decreasing monotonically", RuntimeWarning)
        fwd = ForwardSolver(state.h, cs)
        closed_s12 = (lambda f: (lambda k: f.smatrix(k, check=False)[..., 0, 1]))(fwd)
    return state.h, state
