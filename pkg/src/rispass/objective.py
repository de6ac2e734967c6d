"""Per-user rates, sum rate, energy efficiency, and the unsupervised losses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import CTensor
from .channel import effective_channel
from .scenario import PAPlacement, Scenario, SystemParams

LN2 = math.log(2.0)
SR_FLOOR = 1e-8

__all__ = [
    "RISConfig",
    "Beamformer",
    "Solution",
    "rates_t",
    "sum_rate_t",
    "power_t",
    "user_rates",
    "user_rate",
    "sum_rate",
    "energy_efficiency",
    "loss_sr",
    "loss_ee",
    "SR_FLOOR",
]


@dataclass
class RISConfig:
    """RIS phase shifts in radians, wrapped into [0, 2*pi)."""

    phases: np.ndarray

    def __post_init__(self):
        self.phases = wrap_phase(np.asarray(self.phases, dtype=float).reshape(-1))

    @property
    def coefficients(self) -> np.ndarray:
        return np.exp(1j * self.phases)

    @classmethod
    def from_coefficients(cls, c) -> "RISConfig":
        return cls(np.angle(np.asarray(c)))


def wrap_phase(phi: np.ndarray) -> np.ndarray:
    phi = np.mod(phi, 2 * np.pi)
    # mod of a tiny negative number rounds up to exactly 2*pi
    return np.where(phi >= 2 * np.pi, 0.0, phi)


@dataclass
class Beamformer:
    """Baseband beamformers, one column per user, shape (N, K)."""

    W: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=complex)

    @property
    def total_power(self) -> float:
        return float(np.sum(np.abs(self.W) ** 2))


@dataclass
class Solution:
    placement: PAPlacement
    ris: RISConfig
    beam: Beamformer
    meta: dict = field(default_factory=dict, compare=False)

    def violations(self, params: SystemParams, tol: float = 1e-9) -> list[str]:
        """Re-check every constraint from the raw values; empty list means feasible."""
        errs = self.placement.violations(params, tol)
        if self.beam.total_power > params.power_budget + tol:
            errs.append(f"transmit power {self.beam.total_power} exceeds budget")
        ph = self.ris.phases
        if ph.shape != (params.n_ris,):
            errs.append(f"phase vector shape {ph.shape}")
        elif np.any(ph < 0) or np.any(ph >= 2 * np.pi) or not np.all(np.isfinite(ph)):
            errs.append("phase outside [0, 2*pi)")
        if not np.all(np.isfinite(self.beam.W)) or not np.all(np.isfinite(self.placement.x)):
            errs.append("non-finite values")
        return errs

    def is_feasible(self, params: SystemParams, tol: float = 1e-9) -> bool:
        return not self.violations(params, tol)


# ---------------------------------------------------------------------------
# differentiable core
# ---------------------------------------------------------------------------


def rates_t(Z, W, noise_power: float) -> CTensor:
    """Rates in bits/s/Hz, shape (B, K), from channel rows Z (B, K, N) and beams W (B, N, K)."""
    Y = ad.matmul(Z, W)  # Y[k, j] = h_k^H w_j
    P = ad.abs2(Y)
    K = P.shape[-1]
    total = ad.sum(P, axis=-1) + noise_power
    interference = ad.sum(P * (1.0 - np.eye(K)), axis=-1) + noise_power
    return (ad.log(total) - ad.log(interference)) * (1.0 / LN2)


def sum_rate_t(Z, W, noise_power: float) -> CTensor:
    return ad.sum(rates_t(Z, W, noise_power), axis=-1)


def power_t(W) -> CTensor:
    return ad.sum(ad.abs2(W), axis=(-2, -1))


# ---------------------------------------------------------------------------
# instance-level API
# ---------------------------------------------------------------------------


def _channel_rows(sol: Solution, scenario: Scenario, params: SystemParams) -> np.ndarray:
    phases = sol.ris.phases if params.use_ris else None
    return effective_channel(sol.placement, phases, scenario, params)


def user_rates(sol: Solution, scenario: Scenario, params: SystemParams) -> np.ndarray:
    Z = _channel_rows(sol, scenario, params)
    return rates_t(Z[None], sol.beam.W[None], params.noise_power).data[0]


def user_rate(k: int, sol: Solution, scenario: Scenario, params: SystemParams) -> float:
    """Rate of user ``k`` (0-based)."""
    return float(user_rates(sol, scenario, params)[k])


def sum_rate(sol: Solution, scenario: Scenario, params: SystemParams) -> float:
    return float(np.sum(user_rates(sol, scenario, params)))


def energy_efficiency(sol: Solution, scenario: Scenario, params: SystemParams) -> float:
    return sum_rate(sol, scenario, params) / (sol.beam.total_power + params.circuit_power)


def loss_sr(sum_rates, eps: float = SR_FLOOR):
    """Batch mean of 1 / SR. Accepts a CTensor (differentiable) or an array."""
    if isinstance(sum_rates, CTensor):
        return ad.mean(ad.reciprocal(ad.maximum(sum_rates, eps)))
    sr = np.maximum(np.asarray(sum_rates, dtype=float), eps)
    return float(np.mean(1.0 / sr))


def loss_ee(sum_rates, powers, circuit_power: float, eps: float = SR_FLOOR):
    """Batch mean of (transmit power + circuit power) / SR."""
    if isinstance(sum_rates, CTensor) or isinstance(powers, CTensor):
        return ad.mean((ad.const(powers) + circuit_power) / ad.maximum(sum_rates, eps))
    sr = np.maximum(np.asarray(sum_rates, dtype=float), eps)
    return float(np.mean((np.asarray(powers, dtype=float) + circuit_power) / sr))
