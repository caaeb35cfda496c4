"""Two-channel kinematics with thresholds 0 and Delta (hbar = mu = 1)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BasisConfig


@dataclass(frozen=True)
class ChannelSet:
    rho: float
    N: int
    delta: float = 0.0
    ell: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError(f"threshold must be non-negative, got {self.delta}")
        if len(self.ell) != 2:
            raise ValueError("exactly two channels are supported")
        object.__setattr__(self, "ell", tuple(int(l) for l in self.ell))
        # validates rho, N, ell
        for l in self.ell:
            BasisConfig(self.rho, self.N, l)

    @property
    def dim(self) -> int:
        return 2 * self.N

    @property
    def thresholds(self) -> tuple[float, float]:
        return (0.0, float(self.delta))

    @property
    def k_threshold(self) -> float:
        return float(np.sqrt(self.delta))

    @property
    def eps_threshold(self) -> float:
        """Dimensionless energy of the channel-2 threshold, rho^2 Delta / 2."""
        return 0.5 * self.rho**2 * self.delta

    def basis(self, alpha: int) -> BasisConfig:
        """Basis of channel ``alpha`` (0 or 1)."""
        return BasisConfig(self.rho, self.N, self.ell[alpha])

    def eps(self, k):
        return 0.5 * (self.rho * np.asarray(k)) ** 2

    def k_of_eps(self, eps):
        return np.sqrt(2.0 * np.asarray(eps)) / self.rho


def channel_momentum(k, delta):
    """sqrt(k^2 - delta) on the branch Im >= 0 (decaying when closed).

    Works for real k >= 0 and for k on the positive imaginary axis.
    """
    k = np.asarray(k, dtype=complex)
    k2 = np.sqrt(k * k - delta)
    return np.where(k2.imag < 0, -k2, k2)


@dataclass(frozen=True)
class Kinematics:
    k: float
    k_alpha: tuple[complex, complex]
    q_alpha: tuple[complex, complex]
    eps: float


def kinematics_at(cs: ChannelSet, k: float) -> Kinematics:
    if k < 0:
        raise ValueError("k must be non-negative")
    ka = tuple(complex(channel_momentum(k, d)) for d in cs.thresholds)
    return Kinematics(k, ka, tuple(cs.rho * x for x in ka), float(cs.eps(k)))


@dataclass(frozen=True)
class WeightMatrix:
    p11: float
    p22: float

    def as_array(self) -> np.ndarray:
        return np.diag([self.p11, self.p22])


def open_weight(k, delta):
    """p22 = (k / k2) Re(k2) / |k2|: zero below threshold, k / k2 above."""
    k = np.asarray(k, dtype=float)
    if delta == 0:
        return np.ones_like(k)
    above = k * k > delta
    k2 = np.sqrt(np.where(above, k * k - delta, 1.0))
    return np.where(above, k / k2, 0.0)


def weight_at(cs: ChannelSet, k: float) -> WeightMatrix:
    if k < 0:
        raise ValueError("k must be non-negative")
    return WeightMatrix(1.0, float(open_weight(k, cs.delta)))
