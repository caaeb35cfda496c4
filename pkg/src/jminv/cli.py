"""Command-line interface: ``jminv reconstruct|forward|verify|tables``.

Configuration
-------------
A flat JSON object; every key can also be given as ``--key value`` on the
command line, which overrides the file. Unknown keys are rejected.

============================  ==========================================
key                           meaning (default)
============================  ==========================================
rho, N, delta                 oscillator scale, basis size per channel,
                              channel-2 threshold (0.495, 5, 10.0)
ell1, ell2                    partial waves (0, 0)
k0                            upper end of the S-matrix data (6.0)
model_a, model_b, model_x     analytic model parameters (-2.0, 0.6, 3.0)
data_file                     tabulated S-matrix file; replaces the model
bound_kappa, bound_res11_im,  bound state kappa and Im Res S11, Im Res S12
bound_res12_im                at k = i kappa; set bound_kappa to null to
                              use the pole of the data instead
max_iter, tol                 closed-channel iteration controls (8, 1e-8)
quadrature_check              node-doubling check of the kernels (true)
kappa_max                     upper limit of the bound-state scan (10/rho)
k_min, k_max, k_points        curve grid (0.2, 6.0, 581)
seed, roundtrip_cases         random roundtrip checks of ``verify`` (0, 200)
output_dir                    output directory ("jminv-out"); the
                              environment variable JMINV_OUTPUT_DIR
                              overrides it
============================  ==========================================

Tabulated S-matrix file
-----------------------
``{"delta": 10.0, "samples": [{"k": ..., "s11_re": ..., "s11_im": ...,
"s12_re": ..., "s12_im": ..., "s22_re": ..., "s22_im": ...}, ...],
"bound_state": {"kappa": ..., "res11_im": ..., "res12_im": ...}}``.
Samples may carry ``s21_re``/``s21_im``; they must then equal S12. The
bound-state block is optional.

Hamiltonian file
----------------
``{"a1": [...], "b1": [...], "a2": [...], "b2": [...], "u": [...], "v": [...]}``.

Exit codes: 0 ok, 1 configuration or I/O error, 2 solver non-convergence,
3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import reference
from .channels import ChannelSet
from .forward import (ForwardSolver, QuasiTridiagonalHamiltonian, free_hamiltonian,
                      random_hamiltonian, spectral_data)
from .marchenko import full_marchenko_h
from .outersolve import NonConvergenceError, iterate_closed_channel
from .refmodel import (AnalyticModel, AnalyticModelParams, BoundStateData, SMatrixSample,
                       TabulatedProvider, UnitarityError, eigenphase_curves,
                       max_eigenphase_deviation, unitarity_defect)
from .spectral import canonical_signs, lanczos_reconstruct, orthonormality_defects, potential_from_h

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_VERIFY = 0, 1, 2, 3
OUTPUT_ENV = "JMINV_OUTPUT_DIR"
FMT = "{:.12g}"
THRESHOLD_GAP = 1e-6
FIDELITY_WINDOW = (0.2, 6.0)
FIDELITY_GAP = 0.05


class ConfigError(ValueError):
    pass


_REF_BOUND = reference.reference_problem().bound


@dataclass
class RunConfig:
    rho: float = 0.495
    N: int = 5
    delta: float = 10.0
    ell1: int = 0
    ell2: int = 0
    k0: float = 6.0
    model_a: float = -2.0
    model_b: float = 0.6
    model_x: float = 3.0
    data_file: str | None = None
    bound_kappa: float | None = _REF_BOUND.kappa
    bound_res11_im: float | None = _REF_BOUND.res11.imag
    bound_res12_im: float | None = _REF_BOUND.res12.imag
    max_iter: int = 8
    tol: float = 1e-8
    quadrature_check: bool = True
    kappa_max: float | None = None
    k_min: float = 0.2
    k_max: float = 6.0
    k_points: int = 581
    seed: int = 0
    roundtrip_cases: int = 200
    output_dir: str = "jminv-out"

    def validate(self) -> "RunConfig":
        if self.N < 2:
            raise ConfigError(f"N must be at least 2, got {self.N}")
        if self.rho <= 0:
            raise ConfigError("rho must be positive")
        if self.delta <= 0:
            raise ConfigError("delta must be positive (two channels with different thresholds)")
        if min(self.ell1, self.ell2) < 0:
            raise ConfigError("partial waves must be non-negative")
        if self.k0 <= np.sqrt(self.delta):
            raise ConfigError("k0 must lie above the channel-2 threshold sqrt(delta)")
        if self.max_iter < 0 or self.tol <= 0:
            raise ConfigError("max_iter must be >= 0 and tol > 0")
        if not 0 < self.k_min < self.k_max or self.k_points < 2:
            raise ConfigError("curve grid needs 0 < k_min < k_max and k_points >= 2")
        if self.bound_kappa is not None and (self.bound_res11_im is None
                                             or self.bound_res12_im is None):
            raise ConfigError("bound_kappa needs bound_res11_im and bound_res12_im")
        return self

    @property
    def channels(self) -> ChannelSet:
        return ChannelSet(self.rho, self.N, self.delta, (self.ell1, self.ell2))

    def out(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.output_dir)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


_NULLABLE = {"data_file": str, "bound_kappa": float, "bound_res11_im": float,
             "bound_res12_im": float, "kappa_max": float}


def _coerce(name: str, value):
    if value is None or (isinstance(value, str) and value.lower() == "null"):
        return None
    kind = _NULLABLE.get(name) or type(_FIELDS[name].default)
    if kind is bool:
        if isinstance(value, bool):
            return value
        if str(value).lower() not in ("true", "false", "1", "0"):
            raise ConfigError(f"{name}: expected a boolean, got {value!r}")
        return str(value).lower() in ("true", "1")
    try:
        if kind is int and isinstance(value, float) and not value.is_integer():
            raise ValueError
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: cannot interpret {value!r}") from exc


def load_config(path: str | None, overrides: dict) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(raw) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig(**{k: _coerce(k, v) for k, v in raw.items()}).validate()


# --- inputs -------------------------------------------------------------------

def _complex(rec: dict, key: str) -> complex:
    return complex(float(rec[f"{key}_re"]), float(rec[f"{key}_im"]))


def load_data_file(path: str, sym_tol: float = 1e-10):
    """(provider, bound list) from a tabulated S-matrix file.

    Raises UnitarityError when a sample has S12 != S21.
    """
    try:
        raw = json.loads(Path(path).read_text())
        samples = []
        for rec in raw["samples"]:
            s12 = _complex(rec, "s12")
            s21 = _complex(rec, "s21") if "s21_re" in rec else s12
            s = np.array([[_complex(rec, "s11"), s12], [s21, _complex(rec, "s22")]])
            samples.append(SMatrixSample(float(rec["k"]), s))
        delta = float(raw["delta"])
        bs = raw.get("bound_state")
    except OSError as exc:
        raise ConfigError(f"cannot read data file: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed data file {path}: {exc}") from exc
    bound = []
    if bs is not None:
        bound = [BoundStateData(float(bs["kappa"]), 1j * float(bs["res11_im"]),
                                1j * float(bs["res12_im"]), delta=delta)]
    return TabulatedProvider(samples, bound, delta, sym_tol=sym_tol), bound


def build_problem(cfg: RunConfig):
    """(provider, bound state) for the configured data source."""
    if cfg.data_file is not None:
        provider, bound = load_data_file(cfg.data_file)
        if abs(provider.delta - cfg.delta) > 1e-12:
            raise ConfigError("data file threshold differs from the configured delta")
        if provider.k_max < cfg.k0:
            raise ConfigError(f"data end at k = {provider.k_max}, below k0 = {cfg.k0}")
    else:
        provider = AnalyticModel(AnalyticModelParams(cfg.model_a, cfg.model_b, cfg.model_x,
                                                     cfg.delta))
        bound = None
    if cfg.bound_kappa is not None:
        bound = [BoundStateData(cfg.bound_kappa, 1j * cfg.bound_res11_im,
                                1j * cfg.bound_res12_im, delta=cfg.delta,
                                ell=(cfg.ell1, cfg.ell2))]
    elif bound is None:
        bound = provider.bound
    if len(bound) != 1:
        raise ConfigError(f"the constraint system needs exactly one bound state, "
                          f"found {len(bound)}")
    if cfg.data_file is None:
        provider = AnalyticModel(provider.params, bound=bound)
    return provider, bound[0]


def load_hamiltonian(path: str) -> QuasiTridiagonalHamiltonian:
    try:
        raw = json.loads(Path(path).read_text())
        return QuasiTridiagonalHamiltonian(**{k: raw[k] for k in ("a1", "b1", "a2", "b2", "u", "v")})
    except OSError as exc:
        raise ConfigError(f"cannot read Hamiltonian file: {exc}") from exc
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"malformed Hamiltonian file {path}: {exc}") from exc


# --- outputs ------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer, str)):
        return str(x)
    return FMT.format(float(x))


def write_csv(path: Path, header, rows, comment: str | None = None):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _round(x):
    return float(FMT.format(x))


def hamiltonian_json(h: QuasiTridiagonalHamiltonian) -> dict:
    return {k: [_round(x) for x in v] for k, v in h.bands().items()}


def hamiltonian_rows(label: str, h: QuasiTridiagonalHamiltonian):
    for n in range(h.N):
        off = (h.b1[n - 1], h.b2[n - 1], h.v[n - 1]) if n > 0 else (None, None, None)
        yield (label, n, h.a1[n], off[0], h.a2[n], off[1], h.u[n], off[2])


# --- pipeline -----------------------------------------------------------------

@dataclass
class Reconstruction:
    cfg: RunConfig
    h_initial: QuasiTridiagonalHamiltonian
    h_final: QuasiTridiagonalHamiltonian
    state: object
    initial_unknowns: list
    bound: BoundStateData
    provider: object


def run_reconstruction(cfg: RunConfig) -> Reconstruction:
    cs = cfg.channels
    provider, bound = build_problem(cfg)
    h, st = iterate_closed_channel(provider, cs, bound, cfg.k0, max_iter=cfg.max_iter,
                                   tol=cfg.tol, check_quadrature=cfg.quadrature_check)
    return Reconstruction(cfg, st.initial_h, h, st, st.initial_unknowns, bound, provider)


def curve_grid(cfg: RunConfig) -> np.ndarray:
    k = np.linspace(cfg.k_min, cfg.k_max, cfg.k_points)
    return k[np.abs(k - np.sqrt(cfg.delta)) > THRESHOLD_GAP]


def fidelity_mask(k, delta: float) -> np.ndarray:
    lo, hi = FIDELITY_WINDOW
    return (k >= lo) & (k <= hi) & (np.abs(k - np.sqrt(delta)) >= FIDELITY_GAP)


def _forward_curves(h, cs, k):
    return eigenphase_curves(ForwardSolver(h, cs).smatrix(k, check=False), k, cs.delta)


def write_curves(out: Path, cfg: RunConfig, provider, hams: dict):
    """Eigenphase curves for the reference S and each Hamiltonian in ``hams``."""
    cs = cfg.channels
    k = curve_grid(cfg)
    cols = {}
    if provider is not None:
        kr = k if not hasattr(provider, "k_max") else k[k <= provider.k_max]
        ref = np.full((len(k), 3), np.nan)
        ref[:len(kr)] = eigenphase_curves(provider(kr), kr, cs.delta)
        cols["reference"] = ref
    for label, h in hams.items():
        cols[label] = _forward_curves(h, cs, k)
    comment = None
    if "reference" in cols:
        mask = fidelity_mask(k, cs.delta)
        devs = {lab: max_eigenphase_deviation(c[mask], cols["reference"][mask])
                for lab, c in cols.items() if lab != "reference"}
        comment = " ".join(f"max_eigenphase_deviation_{lab}={FMT.format(d)}"
                           for lab, d in devs.items())
        comment = f"{comment} window=[{FIDELITY_WINDOW[0]},{FIDELITY_WINDOW[1]}]"
    header = ["k"] + [f"{lab}_{q}" for lab in cols for q in ("delta1", "delta2", "mix")]
    rows = [[k[i]] + [x for c in cols.values() for x in c[i]] for i in range(len(k))]
    write_csv(out / "curves.csv", header, rows, comment)
    return comment


def write_bound_summary(out: Path, cs: ChannelSet, hams: dict, kappa_max=None):
    rows = []
    for label, h in hams.items():
        for b in ForwardSolver(h, cs).bound_states(kappa_max):
            rows.append((label, b.kappa, b.res11.imag, b.res12.imag, b.anc[0], b.anc[1]))
    write_csv(out / "bound_states.csv",
              ["hamiltonian", "kappa", "res11_im", "res12_im", "anc1", "anc2"], rows)
    return rows


def write_reconstruction(rec: Reconstruction, out: Path) -> dict:
    cfg, cs, st = rec.cfg, rec.cfg.channels, rec.state
    spec_rows = []
    final = sorted(st.known + st.unknowns, key=lambda t: t.lam)
    initial = sorted(st.known + rec.initial_unknowns, key=lambda t: t.lam)
    for label, trip in (("initial", initial), ("final", final)):
        for j, t in enumerate(trip, start=1):
            source = "data" if t in st.known else label
            spec_rows.append((label, j, source, t.lam, t.zN, t.zNN))
    write_csv(out / "spectral_table.csv", ["run", "j", "source", "lambda", "zN", "zNN"],
              spec_rows)
    write_csv(out / "convergence_table.csv", ["i", "a1", "a2", "u"],
              [(i, *row) for i, row in enumerate(st.history)])
    write_csv(out / "hamiltonian_table.csv", ["run", "n", "a1", "b1", "a2", "b2", "u", "v"],
              list(hamiltonian_rows("initial", rec.h_initial))
              + list(hamiltonian_rows("final", rec.h_final)))
    write_json(out / "hamiltonian_initial.json", hamiltonian_json(rec.h_initial))
    write_json(out / "hamiltonian_final.json", hamiltonian_json(rec.h_final))
    write_json(out / "spectral_final.json",
               [{"lambda": _round(t.lam), "zN": _round(t.zN), "zNN": _round(t.zNN)}
                for t in final])
    vm = potential_from_h(rec.h_final, cs)
    write_csv(out / "potential_matrix.csv", ["alpha", "beta", "n", "m", "value"],
              [(a + 1, b + 1, n, m, vm.block(a, b)[n, m])
               for a in range(2) for b in range(2) for n in range(cs.N) for m in range(cs.N)])
    report = reconstruction_report(rec)
    write_json(out / "report.json", report)
    return report


def reconstruction_report(rec: Reconstruction) -> dict:
    cs = rec.cfg.channels
    trip = sorted(rec.state.known + rec.state.unknowns, key=lambda t: t.lam)
    fwd = ForwardSolver(rec.h_final, cs).bound_states(rec.cfg.kappa_max)
    b = rec.bound
    near = min(fwd, key=lambda x: abs(x.kappa - b.kappa)) if fwd else None
    rep = {
        "iterations": rec.state.index,
        "converged": bool(rec.state.converged),
        "orthonormality_defect": _round(max(abs(x) for x in orthonormality_defects(trip))),
        "bound_kappa_data": b.kappa,
        "closed_region_triplets": "extracted once and kept fixed during the iteration",
    }
    if near is not None:
        rep.update(bound_kappa_forward=_round(near.kappa),
                   res11_relative_error=_round(abs(near.res11 - b.res11) / abs(b.res11)),
                   res12_relative_error=_round(abs(near.res12 - b.res12) / abs(b.res12)))
    return rep


# --- verification -------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    measured: float
    tolerance: float
    note: str = ""

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.note})" if self.note else ""
        return f"{flag}  {self.name}: measured {self.measured:.3e}, tolerance {self.tolerance:.1e}{extra}"


def _check(name, measured, tol, note=""):
    return Check(name, bool(np.isfinite(measured) and measured <= tol), float(measured), tol, note)


def lanczos_roundtrip_error(h: QuasiTridiagonalHamiltonian) -> float:
    """Elementwise error after spectral_data -> lanczos_reconstruct, up to band signs."""
    return lanczos_reconstruct(spectral_data(h)).max_abs_diff(canonical_signs(h))


def free_case_error(cs: ChannelSet, k_max: float) -> float:
    """Marchenko chain on S = I without bound states against T + threshold shift."""
    class Free:
        delta = cs.delta
        bound = []

        def __call__(self, k):
            return np.broadcast_to(np.eye(2, dtype=complex), np.shape(k) + (2, 2))

    h = full_marchenko_h(Free(), cs, [], k_max)
    return h.max_abs_diff(free_hamiltonian(cs))


def open_unitarity(h, cs: ChannelSet, k) -> float:
    s = ForwardSolver(h, cs).smatrix(k, check=False)
    return max(unitarity_defect(x) for x in s)


def run_checks(cfg: RunConfig) -> list[Check]:
    cs = cfg.channels
    checks = []
    k_open = np.linspace(np.sqrt(cfg.delta) + 0.05, cfg.k0, 40)
    k_low = np.linspace(0.2, np.sqrt(cfg.delta) - 0.05, 40)

    try:
        provider, bound = build_problem(cfg)
    except UnitarityError as exc:
        return [Check("data symmetry S12 = S21", False, exc.defect, 1e-10, "corrupted data")]
    s_open = provider(k_open)
    checks.append(_check("data symmetry S12 = S21",
                         float(np.max(np.abs(s_open[..., 0, 1] - s_open[..., 1, 0]))), 1e-10))
    checks.append(_check("data unitarity on the open region",
                         max(unitarity_defect(x) for x in s_open), 1e-8))
    checks.append(_check("data |S11| = 1 below threshold",
                         float(np.max(np.abs(np.abs(provider(k_low)[..., 0, 0]) - 1))), 1e-8))

    rng = np.random.default_rng(cfg.seed)
    worst = max(lanczos_roundtrip_error(random_hamiltonian(rng, int(rng.integers(2, 11)))[0])
                for _ in range(cfg.roundtrip_cases))
    checks.append(_check(f"Lanczos roundtrip ({cfg.roundtrip_cases} random H)", worst, 1e-10))
    checks.append(_check("free-case Marchenko chain gives T + shift",
                         free_case_error(cs, cfg.k0), 1e-7))

    try:
        h_march = full_marchenko_h(provider, cs, [bound], cfg.k0)
    except Exception as exc:  # reported, not raised
        checks.append(Check("Marchenko chain", False, np.inf, 0.0, str(exc)))
        h_march = None
    if h_march is not None and cfg.data_file is None and cfg.model_b == 0.0:
        coupling = float(max(np.max(np.abs(h_march.u)), np.max(np.abs(h_march.v))))
        checks.append(_check("decoupled model: coupling bands u, v", coupling, 1e-8))

    try:
        rec = run_reconstruction(cfg)
    except (NonConvergenceError, ValueError, ArithmeticError, RuntimeError) as exc:
        checks.append(Check("constraint-system reconstruction", False, np.inf, 0.0, str(exc)))
        return checks
    trip = sorted(rec.state.known + rec.state.unknowns, key=lambda t: t.lam)
    checks.append(_check("orthonormality of the final triplets",
                         max(abs(x) for x in orthonormality_defects(trip)), 1e-8))
    checks.append(_check("forward unitarity of the final H on the open region",
                         open_unitarity(rec.h_final, cs, k_open), 1e-8))
    rep = reconstruction_report(rec)
    checks.append(_check("bound state of the final H: |kappa - data|",
                         abs(rep.get("bound_kappa_forward", np.inf) - bound.kappa), 1e-6))
    if h_march is not None:
        checks.append(_check("two-path agreement (Marchenko H vs spectral H)",
                             h_march.max_abs_diff(rec.h_final), 1e-4))
    return checks


# --- commands -----------------------------------------------------------------

def cmd_reconstruct(cfg: RunConfig) -> int:
    out = cfg.out()
    t = time.perf_counter()
    try:
        rec = run_reconstruction(cfg)
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    report = write_reconstruction(rec, out)
    write_curves(out, cfg, rec.provider, {"initial": rec.h_initial, "final": rec.h_final})
    print(f"reconstruction written to {out} ({time.perf_counter() - t:.1f} s)")
    for key, val in report.items():
        print(f"  {key}: {val}")
    if not rec.state.converged:
        print(f"error: iteration did not converge in {cfg.max_iter} steps", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def cmd_forward(cfg: RunConfig, hamiltonian: str, initial: str | None) -> int:
    out = cfg.out()
    hams = {}
    if initial is not None:
        hams["initial"] = load_hamiltonian(initial)
    hams["final"] = load_hamiltonian(hamiltonian)
    for h in hams.values():
        if h.N != cfg.N:
            raise ConfigError(f"Hamiltonian has N = {h.N}, config has N = {cfg.N}")
    provider, _ = build_problem(cfg)
    comment = write_curves(out, cfg, provider, hams)
    rows = write_bound_summary(out, cfg.channels, hams, cfg.kappa_max)
    if comment:
        print(comment)
    for r in rows:
        print(f"{r[0]}: bound state kappa = {r[1]:.10f}, Res S11 = {r[2]:.10g}i, "
              f"Res S12 = {r[3]:.10g}i")
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    checks = run_checks(cfg)
    lines = [c.line() for c in checks]
    for line in lines:
        print(line)
    out = cfg.out()
    out.mkdir(parents=True, exist_ok=True)
    (out / "verification.txt").write_text("\n".join(lines) + "\n")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY


def cmd_tables(cfg: RunConfig) -> int:
    """Reconstruction plus side-by-side comparison with the reference tables."""
    code = cmd_reconstruct(cfg)
    if code not in (EXIT_OK, EXIT_NONCONVERGENCE):
        return code
    out = cfg.out()
    conv = _read_rows(out / "convergence_table.csv")
    ref = reference.convergence_table()
    rows = []
    for r in ref:
        i = int(r[0])
        if i < len(conv):
            got = [float(x) for x in conv[i][1:]]
            rows.append((i, *[v for a, b in zip(got, r[1:]) for v in (a, b, abs(a - b))]))
    write_csv(out / "convergence_comparison.csv",
              ["i"] + [f"{q}_{s}" for q in ("a1", "a2", "u") for s in ("computed", "reference", "abs_diff")],
              rows)
    hams = {"initial": json.loads((out / "hamiltonian_initial.json").read_text()),
            "final": json.loads((out / "hamiltonian_final.json").read_text())}
    rows = []
    for label, run in (("initial", "a"), ("final", "b")):
        refh = reference.hamiltonian(run)
        for band in ("a1", "b1", "a2", "b2", "u", "v"):
            for n, (got, want) in enumerate(zip(hams[label][band], getattr(refh, band))):
                n_idx = n if band in ("a1", "a2", "u") else n + 1
                rows.append((label, band, n_idx, got, want, abs(got - want)))
    write_csv(out / "hamiltonian_comparison.csv",
              ["run", "band", "n", "computed", "reference", "abs_diff"], rows)
    print(f"comparison tables written to {out}")
    return code


def _read_rows(path: Path):
    with path.open() as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    return rows[1:]


# --- argument parsing ---------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors; exit code 2 means non-convergence
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jminv", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    cmds = {
        "reconstruct": "Hamiltonian from S-matrix data, with the closed-channel iteration",
        "forward": "eigenphase curves and bound states of Hamiltonian files",
        "verify": "invariant checks with measured tolerances",
        "tables": "reconstruction plus comparison with the reference tables",
    }
    for name, help_text in cmds.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON configuration file")
        for f in dataclasses.fields(RunConfig):
            p.add_argument(f"--{f.name}", dest=f.name, default=None, metavar="VALUE")
        if name == "forward":
            p.add_argument("--hamiltonian", required=True, help="Hamiltonian JSON file")
            p.add_argument("--initial-hamiltonian", help="optional S^(0) Hamiltonian JSON file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(RunConfig)}
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "reconstruct":
            return cmd_reconstruct(cfg)
        if args.command == "forward":
            return cmd_forward(cfg, args.hamiltonian, args.initial_hamiltonian)
        if args.command == "verify":
            return cmd_verify(cfg)
        return cmd_tables(cfg)
    except (ConfigError, UnitarityError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
