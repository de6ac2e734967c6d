"""Maps from unconstrained network outputs into the feasible set.

Each function accepts either an ndarray or a :class:`CTensor`; tensor inputs
stay on the autodiff graph, with the conditional rescales differentiated
through whichever branch is active.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import CTensor
from .objective import RISConfig
from .scenario import PAPlacement, SystemParams

__all__ = [
    "raw_to_spacing",
    "spacing_to_positions",
    "positions_to_spacing",
    "normalize_phase",
    "normalize_coefficients",
    "raw_power",
    "normalize_power",
]


def _tensor_in(x) -> tuple[CTensor, bool]:
    return (x, True) if isinstance(x, CTensor) else (ad.const(np.asarray(x, dtype=float)), False)


def _rescale_to_cap(v: CTensor, cap: float) -> CTensor:
    """Scale each last-axis row down to sum ``cap`` when it exceeds it."""
    total = ad.sum(v, axis=-1, keepdims=True)
    over = total.data > cap
    safe_total = ad.where(over, total, 1.0)
    return ad.where(over, v * (cap / safe_total), v)


def raw_to_spacing(raw, params: SystemParams):
    """Per-waveguide spacing variables with nonnegative entries summing to at most ``delta_max``."""
    t, is_t = _tensor_in(raw)
    dmax = params.delta_max
    delta = _rescale_to_cap(dmax * ad.sigmoid_real(t), dmax)
    return delta if is_t else delta.data


def _cumsum_matrix(M: int) -> np.ndarray:
    return np.triu(np.ones((M, M)))


def spacing_to_positions(delta, params: SystemParams):
    """Cumulative sum of spacings plus the mandatory ``min_spacing`` gaps.

    ndarray input returns a :class:`PAPlacement`; tensor input returns a
    tensor of the same shape.
    """
    t, is_t = _tensor_in(delta)
    M = t.shape[-1]
    x = ad.matmul(t, _cumsum_matrix(M)) + np.arange(M) * params.min_spacing
    return x if is_t else PAPlacement(x.data)


def positions_to_spacing(placement: PAPlacement, params: SystemParams) -> np.ndarray:
    x = placement.x
    delta = np.diff(x, axis=-1, prepend=0.0)
    delta[..., 1:] -= params.min_spacing
    return delta


def normalize_coefficients(raw):
    """Project complex values onto the unit circle; exact zeros map to 1."""
    is_t = isinstance(raw, CTensor)
    t = raw if is_t else ad.const(np.asarray(raw, dtype=complex))
    mag = ad.sqrt(ad.abs2(t))
    zero = mag.data == 0
    unit = t / ad.where(zero, 1.0, mag)
    out = ad.where(zero, 1.0 + 0j, unit)
    return out if is_t else out.data


def normalize_phase(raw) -> RISConfig:
    """Unit-modulus normalization returning the RIS phase configuration."""
    c = normalize_coefficients(raw)
    return RISConfig.from_coefficients(c.data if isinstance(c, CTensor) else c)


def raw_power(raw, params: SystemParams):
    t, is_t = _tensor_in(raw)
    p = params.power_budget * ad.sigmoid_real(t)
    return p if is_t else p.data


def normalize_power(p_tilde, params: SystemParams):
    """Pass through when the total fits the budget, otherwise scale to exactly ``P_max``."""
    t, is_t = _tensor_in(p_tilde)
    p = _rescale_to_cap(t, params.power_budget)
    return p if is_t else p.data
