"""Channel model for RIS-assisted multi-waveguide pinching-antenna downlinks.

Every quantity is a differentiable function of the PA x-coordinates. The
``*_t`` functions operate on :class:`~rispass.autodiff.CTensor` batches with a
leading batch axis and are what the learning pipeline uses; the plain
functions take and return ndarrays for a single instance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import CTensor
from .scenario import PAPlacement, Scenario, ScenarioBatch, SystemParams, waveguide_ys

__all__ = [
    "PAPlacement",
    "ChannelSet",
    "pinching_vector",
    "assemble_G",
    "pa_user_channel",
    "steering_vector",
    "pa_ris_channel",
    "ris_user_channel",
    "effective_channel",
    "channel_set",
    "effective_channel_t",
    "ris_user_channel_batch",
]


def _check_distance(d) -> None:
    if np.any(np.asarray(d) == 0):
        raise ValueError("zero link distance: a user or the RIS coincides with a PA")


def pinching_vector(x_row, params: SystemParams) -> np.ndarray:
    """In-waveguide phase of each PA relative to the feed point at x = 0."""
    x_row = np.asarray(x_row, dtype=float)
    return np.exp(-1j * 2 * np.pi / params.guided_wavelength * np.abs(x_row))


def assemble_G(placement: PAPlacement | np.ndarray, params: SystemParams) -> np.ndarray:
    """Block-diagonal (M*N, N) pinching beamforming matrix."""
    x = placement.x if isinstance(placement, PAPlacement) else np.atleast_2d(placement)
    N, M = x.shape
    G = np.zeros((M * N, N), dtype=complex)
    for n in range(N):
        G[n * M : (n + 1) * M, n] = pinching_vector(x[n], params)
    return G


def _pa_xyz(x: np.ndarray, params: SystemParams) -> np.ndarray:
    N, M = x.shape
    xyz = np.empty((N, M, 3))
    xyz[..., 0] = x
    xyz[..., 1] = waveguide_ys(params)[:, None]
    xyz[..., 2] = params.height
    return xyz


def pa_user_channel(placement: PAPlacement | np.ndarray, user_pos, params: SystemParams) -> np.ndarray:
    """Free-space PA-to-user coefficients, stacked waveguide-major into an (M*N,) vector."""
    x = placement.x if isinstance(placement, PAPlacement) else np.atleast_2d(placement)
    d = np.linalg.norm(_pa_xyz(x, params) - np.asarray(user_pos, dtype=float), axis=-1).reshape(-1)
    _check_distance(d)
    return np.sqrt(params.eta) * np.exp(-1j * 2 * np.pi / params.wavelength * d) / d


def steering_vector(cos_aod, params: SystemParams, n_elements: int | None = None) -> np.ndarray:
    """Uniform linear array response for a direction cosine in [-1, 1]."""
    L = params.n_ris if n_elements is None else n_elements
    cos_aod = np.asarray(cos_aod, dtype=float)
    l = np.arange(L)
    return np.exp(-1j * 2 * np.pi / params.wavelength * params.spacing * np.multiply.outer(cos_aod, l))


def _rician(cos_aod, nlos, d, params: SystemParams) -> np.ndarray:
    amp = np.sqrt(params.ref_gain / np.asarray(d) ** params.fading_exponent)
    los = steering_vector(cos_aod, params, nlos.shape[-1])
    return amp[..., None] * (params.los_weight * los + params.nlos_weight * nlos)


def pa_ris_channel(placement: PAPlacement | np.ndarray, scenario: Scenario, params: SystemParams) -> np.ndarray:
    """(L, M*N) matrix whose column (n, m) is the Rician PA-to-RIS link."""
    x = placement.x if isinstance(placement, PAPlacement) else np.atleast_2d(placement)
    diff = params.ris_xyz - _pa_xyz(x, params)
    d = np.linalg.norm(diff, axis=-1)
    _check_distance(d)
    cols = _rician(diff[..., 0] / d, scenario.nlos_pa_ris, d, params)  # (N, M, L)
    N, M, L = cols.shape
    return cols.reshape(N * M, L).T


def ris_user_channel(scenario: Scenario, params: SystemParams) -> np.ndarray:
    """(K, L) Rician RIS-to-user vectors."""
    return ris_user_channel_batch(scenario.user_positions[None], scenario.nlos_ris_user[None], params)[0]


def ris_user_channel_batch(user_positions: np.ndarray, nlos: np.ndarray, params: SystemParams) -> np.ndarray:
    diff = user_positions - params.ris_xyz
    d = np.linalg.norm(diff, axis=-1)
    _check_distance(d)
    return _rician(diff[..., 0] / d, nlos, d, params)


def effective_channel(
    placement: PAPlacement | np.ndarray,
    phases,
    scenario: Scenario,
    params: SystemParams,
) -> np.ndarray:
    """Rows ``(f_k^H + h_k^H Phi H) G`` for every user, shape (K, N).

    ``phases`` is the RIS phase vector in radians, or ``None`` for the
    all-ones initial phase matrix. Without RIS elements (``n_ris == 0``) the
    cascaded term vanishes.
    """
    x = placement.x if isinstance(placement, PAPlacement) else np.atleast_2d(placement)
    batch = ScenarioBatch.of(scenario)
    coeffs = None if phases is None else np.exp(1j * np.asarray(phases, dtype=float))[None]
    out = effective_channel_t(ad.const(x[None]), None if coeffs is None else ad.const(coeffs), batch, params)
    return out.data[0]


@dataclass
class ChannelSet:
    G: np.ndarray  # (M*N, N)
    f: np.ndarray  # (K, M*N)
    H_ris: np.ndarray  # (L, M*N)
    h_user: np.ndarray  # (K, L)


def channel_set(placement: PAPlacement, scenario: Scenario, params: SystemParams) -> ChannelSet:
    return ChannelSet(
        G=assemble_G(placement, params),
        f=np.stack([pa_user_channel(placement, u, params) for u in scenario.user_positions]),
        H_ris=pa_ris_channel(placement, scenario, params),
        h_user=ris_user_channel(scenario, params),
    )


# ---------------------------------------------------------------------------
# differentiable batched core
# ---------------------------------------------------------------------------


def effective_channel_t(
    x: CTensor,
    coeffs: CTensor | None,
    batch: ScenarioBatch,
    params: SystemParams,
    use_ris: bool | None = None,
) -> CTensor:
    """Differentiable effective channels, shape (B, K, N).

    ``x`` is a real (B, N, M) tensor of PA positions and ``coeffs`` a complex
    (B, L) tensor of unit-modulus RIS coefficients (``None`` means all ones).
    Scenario arrays may have batch size 1 and broadcast against ``x``.
    """
    if use_ris is None:
        use_ris = params.use_ris
    x = ad.const(x)
    B, N, M = x.shape
    if (N, M) != (params.n_waveguides, params.n_pas):
        raise ValueError(f"placement shape {(N, M)} does not match params {(params.n_waveguides, params.n_pas)}")
    users = batch.user_positions  # (b, K, 3)
    K = users.shape[1]
    yn = waveguide_ys(params)
    H = params.height
    k_free = 2 * np.pi / params.wavelength

    # direct PA-user paths, conjugated: sqrt(eta) e^{+j k d} / d
    dy2 = (users[:, :, None, 1] - yn[None, None, :]) ** 2 + H**2  # (b, K, N)
    dx = users[:, :, None, None, 0] - x.reshape(B, 1, N, M)  # (B, K, N, M)
    d_user = ad.sqrt(dx * dx + dy2[..., None])
    _check_distance(d_user.data)
    row = np.sqrt(params.eta) * ad.exp_j(k_free * d_user) / d_user

    if use_ris and params.n_ris > 0:
        L = params.n_ris
        ris = params.ris_xyz
        dxr = ris[0] - x  # (B, N, M)
        const_r = ((ris[1] - yn) ** 2 + (ris[2] - H) ** 2)[None, :, None]
        d_ris = ad.sqrt(dxr * dxr + const_r)
        _check_distance(d_ris.data)
        cos_aod = dxr / d_ris
        amp = np.sqrt(params.ref_gain) * ad.power(d_ris, -params.fading_exponent / 2)
        l_idx = np.arange(L)
        los = ad.exp_j((-k_free * params.spacing) * cos_aod.reshape(B, N, M, 1) * l_idx)
        cols = amp.reshape(B, N, M, 1) * (params.los_weight * los + params.nlos_weight * batch.nlos_pa_ris)
        h = ris_user_channel_batch(users, batch.nlos_ris_user, params)  # (b, K, L)
        left = np.conj(h) if coeffs is None else np.conj(h) * ad.const(coeffs).reshape(-1, 1, L)
        cols_t = ad.transpose(cols.reshape(B, N * M, L), (0, 2, 1))  # (B, L, N*M)
        cascade = ad.matmul(left, cols_t).reshape(B, K, N, M)
        row = row + cascade

    g = ad.exp_j((-2 * np.pi / params.guided_wavelength) * x).reshape(B, 1, N, M)
    return ad.sum(row * g, axis=-1)
