"""Reference values for the two-channel test problem, shipped as package data."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .channels import ChannelSet
from .forward import QuasiTridiagonalHamiltonian, SpectralTriplet
from .refmodel import AnalyticModel, AnalyticModelParams, BoundStateData


@lru_cache(maxsize=1)
def _raw() -> dict:
    text = resources.files("jminv").joinpath("data/reference_tables.json").read_text()
    return json.loads(text)


def _triplets(rows) -> list[SpectralTriplet]:
    return [SpectralTriplet(r["lambda"], r["zN"], r["zNN"]) for r in rows]


@dataclass(frozen=True)
class ReferenceProblem:
    cs: ChannelSet
    k0: float
    params: AnalyticModelParams
    bound: BoundStateData

    def model(self) -> AnalyticModel:
        return AnalyticModel(self.params, bound=[self.bound])


def reference_problem() -> ReferenceProblem:
    m = _raw()["model"]
    bs = _raw()["bound_state"]
    params = AnalyticModelParams(m["a"], m["b"], m["x"], m["delta"])
    bound = BoundStateData(bs["kappa"], 1j * bs["res11_im"], 1j * bs["res12_im"],
                           delta=m["delta"], ell=tuple(m["ell"]))
    return ReferenceProblem(ChannelSet(m["rho"], m["N"], m["delta"], tuple(m["ell"])),
                            m["k0"], params, bound)


def known_triplets() -> list[SpectralTriplet]:
    """Eigenvalues inside [0, eps(k0)] with their edge components (j = 2..8)."""
    return _triplets(_raw()["spectral"]["known"])


def external_triplets(run: str) -> list[SpectralTriplet]:
    """Bound and external triplets (j = 1, 9, 10); run 'a' is iteration 0, 'b' the final one."""
    return _triplets(_raw()["spectral"][run])


def convergence_table() -> np.ndarray:
    """Rows (i, a1_{N-1}, a2_{N-1}, u_{N-1})."""
    return np.array(_raw()["convergence"], dtype=float)


def hamiltonian(run: str) -> QuasiTridiagonalHamiltonian:
    return QuasiTridiagonalHamiltonian(**_raw()["hamiltonian"][run])
