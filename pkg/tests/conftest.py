import time
import warnings

import numpy as np
import pytest

from jminv import reference
from jminv.forward import ForwardSolver
from jminv.outersolve import iterate_closed_channel

CRITERIA = {
    1: "open-region extraction",
    2: "closed-region extraction",
    3: "iteration trace",
    4: "final Hamiltonian",
    5: "bound-state closure",
    6: "roundtrip property suite",
    7: "eigenphase fidelity",
}


@pytest.fixture(scope="session")
def problem():
    return reference.reference_problem()


@pytest.fixture(scope="session")
def model(problem):
    return problem.model()


@pytest.fixture(scope="session")
def cs(problem):
    return problem.cs


@pytest.fixture(scope="session")
def table_a():
    return reference.hamiltonian("a")


@pytest.fixture(scope="session")
def table_b():
    return reference.hamiltonian("b")


@pytest.fixture(scope="session")
def exact_provider(table_b, cs):
    """S-matrix of the tabulated final Hamiltonian, with its own bound state."""
    fwd = ForwardSolver(table_b, cs)

    class Provider:
        delta = cs.delta
        bound = fwd.bound_states()

        def __call__(self, k):
            return fwd.smatrix(k, check=False)

    return Provider(), fwd


@pytest.fixture(scope="session")
def pipeline(problem, model):
    """One full reconstruction with the closed-channel iteration, timed."""
    t = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        h, state = iterate_closed_channel(model, problem.cs, problem.bound, problem.k0,
                                          max_iter=8, tol=1e-8)
    return {"h": h, "state": state, "seconds": time.perf_counter() - t}


# --- acceptance report --------------------------------------------------------

def _store(config):
    if not hasattr(config, "_jminv_criteria"):
        config._jminv_criteria = []
    return config._jminv_criteria


@pytest.fixture
def criterion(request):
    """record(number, label, measured, tolerance): logs one acceptance measurement."""
    store = _store(request.config)

    def record(number, label, measured, tolerance):
        measured = float(measured)
        passed = bool(np.isfinite(measured) and measured <= tolerance)
        xfail = request.node.get_closest_marker("xfail") is not None
        store.append((number, label, passed, measured, tolerance, xfail))
        flag = "PASS" if passed else "FAIL"
        print(f"criterion {number} [{flag}] {label}: measured {measured:.3e}, "
              f"tolerance {tolerance:.1e}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = getattr(config, "_jminv_criteria", [])
    if not rows:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number, title in CRITERIA.items():
        mine = [r for r in rows if r[0] == number]
        if not mine:
            tr.write_line(f"criterion {number} ({title}): not run")
            continue
        ok = all(r[2] for r in mine)
        known = [r for r in mine if not r[2] and r[5]]
        note = f"  [{len(known)} documented xfail part(s)]" if known else ""
        tr.write_line(f"criterion {number} ({title}): {'PASS' if ok else 'FAIL'}{note}")
        for _, label, passed, measured, tol, _ in mine:
            tr.write_line(f"    {'pass' if passed else 'FAIL'}  {label}: "
                          f"{measured:.3e} (tolerance {tol:.1e})")
