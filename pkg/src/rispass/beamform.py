"""Beamforming constructions and refiners.

Channel rows are passed as a (K, N) matrix ``Z`` whose row k is the
effective channel ``h_k^H`` (as returned by
:func:`rispass.channel.effective_channel`). Beamformers are (N, K) with one
column per user.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import CTensor
from .objective import LN2, Beamformer
from .scenario import SystemParams

__all__ = [
    "IllConditionedWarning",
    "HzmParams",
    "RefineResult",
    "zf_matrix",
    "mrt_directions",
    "hzm_direction",
    "hzm_directions",
    "assemble_hzm",
    "rzf_closed_form",
    "refine_beams",
    "dinkelbach_update",
    "sum_rate_value",
    "zf_t",
    "hzm_t",
    "rzf_t",
]

JITTER_COND = 1e10
JITTER_SCALE = 1e-10


class IllConditionedWarning(RuntimeWarning):
    """The channel Gram matrix needed regularization before inversion."""


@dataclass
class HzmParams:
    alpha: np.ndarray  # (K,) mixing coefficients in (0, 1)
    power: np.ndarray  # (K,) watts

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.power = np.asarray(self.power, dtype=float)


@dataclass
class RefineResult:
    beam: Beamformer
    value: float
    initial_value: float
    iterations: int
    converged: bool


def _gram_jitter(gram: np.ndarray) -> np.ndarray:
    """Per-matrix diagonal loading, nonzero only for ill-conditioned Gram matrices."""
    K = gram.shape[-1]
    cond = np.linalg.cond(gram)
    bad = ~np.isfinite(cond) | (cond > JITTER_COND)
    scale = np.real(np.trace(gram, axis1=-2, axis2=-1)) / K
    scale = np.where(scale > 0, scale, 1e-300)
    return np.where(bad, JITTER_SCALE * scale, 0.0)


def zf_matrix(Z, warn: bool = True) -> np.ndarray:
    """Zero-forcing matrix ``Z^H (Z Z^H)^{-1}``, shape (N, K)."""
    Z = np.asarray(Z, dtype=complex)
    gram = Z @ Z.conj().T
    jitter = _gram_jitter(gram)
    if jitter > 0 and warn:
        warnings.warn(
            f"channel Gram matrix condition number {np.linalg.cond(gram):.3g} exceeds {JITTER_COND:g}; "
            "added diagonal loading",
            IllConditionedWarning,
            stacklevel=2,
        )
    return Z.conj().T @ np.linalg.inv(gram + jitter * np.eye(gram.shape[0]))


def mrt_directions(Z) -> np.ndarray:
    """Unit-norm matched-filter directions, shape (N, K)."""
    Zh = np.asarray(Z, dtype=complex).conj().T
    return Zh / np.linalg.norm(Zh, axis=0, keepdims=True)


def hzm_direction(k: int, alpha_k: float, Z) -> np.ndarray:
    """Unit direction mixing the normalized ZF and MRT beams of user ``k``."""
    U = zf_matrix(Z)
    zf = U[:, k] / np.linalg.norm(U[:, k])
    mrt = mrt_directions(Z)[:, k]
    if alpha_k == 1:
        return zf
    if alpha_k == 0:
        return mrt
    v = alpha_k * zf + (1 - alpha_k) * mrt
    nv = np.linalg.norm(v)
    if nv == 0:
        return mrt
    return v / nv


def hzm_directions(alpha, Z) -> np.ndarray:
    return np.stack([hzm_direction(k, a, Z) for k, a in enumerate(np.asarray(alpha, dtype=float))], axis=1)


def assemble_hzm(hzm: HzmParams, Z) -> Beamformer:
    return Beamformer(hzm_directions(hzm.alpha, Z) * np.sqrt(hzm.power))


def rzf_closed_form(Z, params: SystemParams, p=None, lam=None) -> Beamformer:
    """Regularized ZF beams; power and regularization weights default to ``P_max / K``."""
    Z = np.asarray(Z, dtype=complex)
    K = Z.shape[0]
    p = np.full(K, params.power_budget / K) if p is None else np.asarray(p, dtype=float)
    lam = np.full(K, params.power_budget / K) if lam is None else np.asarray(lam, dtype=float)
    W = rzf_t(ad.const(Z[None]), p[None], lam[None], params.noise_power).data[0]
    return Beamformer(W)


# ---------------------------------------------------------------------------
# differentiable batched versions
# ---------------------------------------------------------------------------


def _unit_columns(V: CTensor) -> CTensor:
    n = ad.norm2(V, axis=-2, keepdims=True)
    return V / ad.where(n.data == 0, 1.0, n)


def zf_t(Z: CTensor) -> CTensor:
    """Batched ZF matrices (B, N, K) with automatic diagonal loading."""
    Z = ad.const(Z)
    Zh = Z.H
    gram = ad.matmul(Z, Zh)
    jitter = _gram_jitter(gram.data)
    if np.any(jitter > 0):
        gram = gram + jitter[..., None, None] * np.eye(gram.shape[-1])
    return ad.matmul(Zh, ad.inv(gram))


def hzm_t(alpha: CTensor, power: CTensor, Z: CTensor) -> CTensor:
    """Beams ``sqrt(p_k) * dir_k(alpha_k)`` for batched alpha, power (B, K) and rows Z (B, K, N)."""
    Z = ad.const(Z)
    alpha = ad.const(alpha)
    B, K, N = Z.shape
    zf = _unit_columns(zf_t(Z))
    mrt = _unit_columns(Z.H)
    a = alpha.reshape(B, 1, K)
    mix = a * zf + (1.0 - a) * mrt
    n = ad.norm2(mix, axis=-2, keepdims=True)
    # endpoints return the pure beams bit for bit; renormalizing would round
    dead = (n.data == 0) | (a.data == 0)
    direction = ad.where(dead, mrt, ad.where(a.data == 1, zf, mix / ad.where(dead, 1.0, n)))
    return direction * ad.sqrt(ad.const(power)).reshape(B, 1, K)


def rzf_t(Z: CTensor, p, lam, noise_power: float) -> CTensor:
    """Batched regularized ZF beams (B, N, K)."""
    Z = ad.const(Z)
    B, K, N = Z.shape
    weights = ad.const(lam) * (1.0 / noise_power)
    Zh = Z.H  # columns h_k
    A = np.eye(N) + ad.matmul(Zh * weights.reshape(-1, 1, K), Z)
    dirs = _unit_columns(ad.matmul(ad.inv(A), Zh))
    return dirs * ad.sqrt(ad.const(p)).reshape(-1, 1, K)


# ---------------------------------------------------------------------------
# first-order refinement
# ---------------------------------------------------------------------------


def _rates(Z: np.ndarray, W: np.ndarray, noise: float):
    Y = Z @ W
    P = np.abs(Y) ** 2
    total = P.sum(axis=1) + noise
    interf = (P * (1.0 - np.eye(P.shape[0]))).sum(axis=1) + noise
    return Y, total, interf


def sum_rate_value(Z, W, noise: float) -> float:
    _, total, interf = _rates(Z, W, noise)
    return float(np.sum(np.log(total) - np.log(interf)) / LN2)


def _sum_rate_and_grad(Z, W, noise):
    """Sum rate and its gradient dSR/dRe(W) + 1j dSR/dIm(W)."""
    Y, total, interf = _rates(Z, W, noise)
    sr = float(np.sum(np.log(total) - np.log(interf)) / LN2)
    K = W.shape[1]
    C = (1.0 / total)[:, None] - (1.0 - np.eye(K)) / interf[:, None]
    G = 2.0 * Z.conj().T @ (C * Y) / LN2
    return sr, G


def _project_power(W: np.ndarray, pmax: float) -> np.ndarray:
    p = float(np.sum(np.abs(W) ** 2))
    return W if p <= pmax else W * math.sqrt(pmax / p)


def dinkelbach_update(sr: float, total_power: float) -> float:
    """Next Dinkelbach parameter: the current ratio SR / (transmit + circuit power)."""
    return sr / total_power


def _ascend(Z, W, noise, pmax, penalty, budget, armijo=1e-4, rtol=1e-12):
    """Projected gradient ascent on ``SR - penalty * ||W||^2`` with backtracking.

    Trial steps are ``2^-i * sqrt(P_max) / ||grad||``: step 1.0 moves the
    beams by the radius of the power ball.
    """

    def f_and_g(W):
        sr, G = _sum_rate_and_grad(Z, W, noise)
        return sr - penalty * float(np.sum(np.abs(W) ** 2)), G - 2.0 * penalty * W

    f, G = f_and_g(W)
    it = 0
    converged = False
    radius = math.sqrt(pmax)
    while it < budget:
        it += 1
        gnorm = float(np.linalg.norm(G))
        if gnorm == 0 or not np.isfinite(gnorm):
            converged = True
            break
        scale = radius / gnorm
        t = 1.0
        accepted = False
        for _ in range(60):
            W_new = _project_power(W + t * scale * G, pmax)
            f_new, G_new = f_and_g(W_new)
            step = W_new - W
            if np.isfinite(f_new) and f_new >= f + armijo * float(np.real(np.vdot(G, step))):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            converged = True
            break
        gain = f_new - f
        W, f, G = W_new, f_new, G_new
        if gain <= rtol * max(abs(f), 1.0):
            converged = True
            break
    return W, f, it, converged


def refine_beams(Z, params: SystemParams, objective: str = "sr", init=None, budget: int = 500) -> RefineResult:
    """Improve beams at fixed placement and RIS phases.

    ``objective="sr"`` runs projected gradient ascent on the sum rate inside
    the power ball. ``objective="ee"`` wraps the same ascent in a Dinkelbach
    loop on SR / (||W||^2 + P_C). The returned objective never falls below
    that of ``init``.
    """
    Z = np.asarray(Z, dtype=complex)
    noise, pmax, pc = params.noise_power, params.power_budget, params.circuit_power
    if init is None:
        init = rzf_closed_form(Z, params)
    W0 = init.W if isinstance(init, Beamformer) else np.asarray(init, dtype=complex)
    W0 = _project_power(W0, pmax)

    def ee(W):
        return sum_rate_value(Z, W, noise) / (float(np.sum(np.abs(W) ** 2)) + pc)

    if objective == "sr":
        value0 = sum_rate_value(Z, W0, noise)
        if budget <= 0:
            return RefineResult(Beamformer(W0), value0, value0, 0, False)
        W, f, it, conv = _ascend(Z, W0, noise, pmax, 0.0, budget)
        if f < value0:
            W, f = W0, value0
        return RefineResult(Beamformer(W), f, value0, it, conv)

    if objective != "ee":
        raise ValueError(f"unknown objective {objective!r}")
    value0 = ee(W0)
    if budget <= 0:
        return RefineResult(Beamformer(W0), value0, value0, 0, False)
    best_W, best = W0, value0
    W = W0
    lam = value0
    used = 0
    converged = False
    while used < budget:
        W, _, it, _ = _ascend(Z, W, noise, pmax, lam, budget - used)
        used += it
        sr = sum_rate_value(Z, W, noise)
        denom = float(np.sum(np.abs(W) ** 2)) + pc
        val = sr / denom
        if val > best:
            best_W, best = W, val
        if abs(sr - lam * denom) < 1e-6:
            converged = True
            break
        lam = dinkelbach_update(sr, denom)
    return RefineResult(Beamformer(best_W), best, value0, used, converged)
