"""System constants, deployment geometry, and random problem instances."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

SPEED_OF_LIGHT = 3e8
SCHEMA_VERSION = 1

__all__ = [
    "SPEED_OF_LIGHT",
    "SystemParams",
    "Scenario",
    "ScenarioBatch",
    "PAPlacement",
    "waveguide_y",
    "waveguide_ys",
    "default_ris_position",
    "sample_scenario",
    "sample_batch",
    "fixed_pa_placement",
]


@dataclass(frozen=True)
class SystemParams:
    """Physical constants and problem dimensions.

    Defaults mirror the reference deployment (8 waveguides, 8 PAs each, a
    32-element RIS, 4 users, 10 x 10 m region). Use :meth:`desk` for the
    small configuration the tests and demos train on.

    dB/dBm quantities are stored as given and converted on access, so a
    serialized parameter set round-trips exactly.
    """

    n_waveguides: int = 8
    n_pas: int = 8
    n_users: int = 4
    n_ris: int = 32
    length: float = 10.0  # D, along x
    width: float = 10.0  # S, along y
    height: float = 5.0
    min_spacing: float = 0.1
    power_budget: float = 10.0
    circuit_power: float = 5.0
    noise_power_dbm: float = -60.0
    carrier_freq: float = 6e9
    refractive_index: float = 1.4
    rician_factor_db: float = 3.0
    fading_exponent: float = 2.8
    ref_gain_db: float = -20.0
    element_sep: float | None = None  # defaults to half a wavelength
    ris_position: tuple[float, float, float] | None = None  # defaults to (D/2, 0, H/2)

    def __post_init__(self):
        if self.n_waveguides < 1 or self.n_pas < 1 or self.n_users < 1 or self.n_ris < 0:
            raise ValueError("dimension counts must be positive (n_ris may be 0)")
        if self.n_users > self.n_waveguides:
            raise ValueError(f"need K <= N, got K={self.n_users}, N={self.n_waveguides}")
        if self.min_spacing <= 0:
            raise ValueError("min_spacing must be positive")
        if (self.n_pas - 1) * self.min_spacing > self.length + 1e-12:
            raise ValueError("(M-1) * min_spacing exceeds the waveguide length")
        if self.power_budget <= 0:
            raise ValueError("power_budget must be positive")
        if self.circuit_power <= 0:
            raise ValueError("circuit_power must be positive")
        if self.carrier_freq <= 0 or self.refractive_index <= 0:
            raise ValueError("carrier_freq and refractive_index must be positive")
        if self.ris_position is not None:
            object.__setattr__(self, "ris_position", tuple(float(v) for v in self.ris_position))

    # -- constructors ----------------------------------------------------
    @classmethod
    def desk(cls, **overrides) -> "SystemParams":
        """Small configuration (N=2, M=2, L=8, K=2) used for desk-scale training."""
        base = dict(n_waveguides=2, n_pas=2, n_users=2, n_ris=8)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "SystemParams":
        return dataclasses.replace(self, **changes)

    # -- derived quantities ------------------------------------------------
    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def guided_wavelength(self) -> float:
        return self.wavelength / self.refractive_index

    @property
    def eta(self) -> float:
        return (SPEED_OF_LIGHT / (4 * math.pi * self.carrier_freq)) ** 2

    @property
    def noise_power(self) -> float:
        """Noise power in watts."""
        return 10 ** (self.noise_power_dbm / 10) * 1e-3

    @property
    def kappa(self) -> float:
        return 10 ** (self.rician_factor_db / 10)

    @property
    def los_weight(self) -> float:
        return math.sqrt(1.0 / (1.0 + 1.0 / self.kappa)) if self.kappa > 0 else 0.0

    @property
    def nlos_weight(self) -> float:
        return math.sqrt(1.0 / (1.0 + self.kappa))

    @property
    def ref_gain(self) -> float:
        return 10 ** (self.ref_gain_db / 10)

    @property
    def spacing(self) -> float:
        """RIS element separation."""
        return self.wavelength / 2 if self.element_sep is None else self.element_sep

    @property
    def ris_xyz(self) -> np.ndarray:
        if self.ris_position is None:
            return default_ris_position(self)
        return np.asarray(self.ris_position, dtype=float)

    @property
    def delta_max(self) -> float:
        return self.length - (self.n_pas - 1) * self.min_spacing

    @property
    def use_ris(self) -> bool:
        return self.n_ris > 0

    # -- serialization -------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        if d["ris_position"] is not None:
            d["ris_position"] = list(d["ris_position"])
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SystemParams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SystemParams fields: {sorted(unknown)}")
        return cls(**d)

    def fingerprint(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def waveguide_y(n: int, params: SystemParams) -> float:
    """y-coordinate of waveguide ``n`` (1-based), evenly spread over [-S/2, S/2]."""
    N, S = params.n_waveguides, params.width
    if not 1 <= n <= N:
        raise IndexError(f"waveguide index {n} outside 1..{N}")
    return (n - 1) * S / N - (N - 1) * S / (2 * N)


def waveguide_ys(params: SystemParams) -> np.ndarray:
    return np.array([waveguide_y(n, params) for n in range(1, params.n_waveguides + 1)])


def default_ris_position(params: SystemParams) -> np.ndarray:
    return np.array([params.length / 2, 0.0, params.height / 2])


@dataclass
class PAPlacement:
    """x-coordinates of every PA, shape (N, M); y and z follow from the waveguide."""

    x: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))

    def violations(self, params: SystemParams, tol: float = 1e-9) -> list[str]:
        out = []
        if self.x.shape != (params.n_waveguides, params.n_pas):
            out.append(f"placement shape {self.x.shape}")
            return out
        if np.any(self.x < -tol) or np.any(self.x > params.length + tol):
            out.append("position outside [0, D]")
        if self.x.shape[1] > 1 and np.any(np.diff(self.x, axis=1) < params.min_spacing - tol):
            out.append("adjacent spacing below min_spacing")
        return out


def fixed_pa_placement(params: SystemParams) -> PAPlacement:
    """PAs spaced ``min_spacing`` apart, centered at D/2, identical on every waveguide."""
    M, dmin = params.n_pas, params.min_spacing
    if (M - 1) * dmin > params.length:
        raise ValueError("fixed placement does not fit on the waveguide")
    row = params.length / 2 + (np.arange(M) - (M - 1) / 2) * dmin
    return PAPlacement(np.tile(row, (params.n_waveguides, 1)))


def _cscg(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


@dataclass
class Scenario:
    """One problem instance: user positions plus frozen NLoS fading draws."""

    user_positions: np.ndarray  # (K, 3)
    nlos_pa_ris: np.ndarray  # (N, M, L)
    nlos_ris_user: np.ndarray  # (K, L)
    rng_seed: int | None = None

    @property
    def n_users(self) -> int:
        return self.user_positions.shape[0]

    def to_dict(self) -> dict[str, Any]:
        return {
            "user_positions": self.user_positions.tolist(),
            "nlos_pa_ris": _complex_to_json(self.nlos_pa_ris),
            "nlos_ris_user": _complex_to_json(self.nlos_ris_user),
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Scenario":
        return cls(
            user_positions=np.asarray(d["user_positions"], dtype=float),
            nlos_pa_ris=_complex_from_json(d["nlos_pa_ris"]),
            nlos_ris_user=_complex_from_json(d["nlos_ris_user"]),
            rng_seed=d.get("rng_seed"),
        )

    def to_json(self, params: SystemParams) -> str:
        doc = {"version": SCHEMA_VERSION, "params": params.to_dict(), "scenario": self.to_dict()}
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> tuple["Scenario", SystemParams]:
        doc = json.loads(text)
        if doc.get("version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported scenario document version {doc.get('version')}")
        return cls.from_dict(doc["scenario"]), SystemParams.from_dict(doc["params"])

    def check(self, params: SystemParams, tol: float = 0.0) -> list[str]:
        """Return a list of violated invariants (empty when valid)."""
        errs = []
        u = self.user_positions
        if u.shape != (u.shape[0], 3):
            return ["user_positions must be (K, 3)"]
        if np.any(u[:, 0] < -tol) or np.any(u[:, 0] > params.length + tol):
            errs.append("user x outside [0, D]")
        if np.any(np.abs(u[:, 1]) > params.width / 2 + tol):
            errs.append("user y outside [-S/2, S/2]")
        if np.any(u[:, 2] != 0):
            errs.append("user z must be 0")
        if self.nlos_pa_ris.shape != (params.n_waveguides, params.n_pas, params.n_ris):
            errs.append(f"nlos_pa_ris shape {self.nlos_pa_ris.shape}")
        if self.nlos_ris_user.shape != (u.shape[0], params.n_ris):
            errs.append(f"nlos_ris_user shape {self.nlos_ris_user.shape}")
        return errs


def _complex_to_json(a: np.ndarray) -> dict:
    # the shape is stored because nested lists cannot carry zero-length axes
    return {"shape": list(a.shape), "re_im": np.stack([a.real, a.imag], axis=-1).ravel().tolist()}


def _complex_from_json(v) -> np.ndarray:
    arr = np.asarray(v["re_im"], dtype=float).reshape(*v["shape"], 2)
    return arr[..., 0] + 1j * arr[..., 1]


def sample_scenario(params: SystemParams, seed: int, n_users: int | None = None) -> Scenario:
    """Draw user positions uniformly over the region and CSCG(0, 1) NLoS terms."""
    rng = np.random.default_rng(seed)
    K = params.n_users if n_users is None else n_users
    N, M, L = params.n_waveguides, params.n_pas, params.n_ris
    users = np.zeros((K, 3))
    users[:, 0] = rng.uniform(0.0, params.length, K)
    users[:, 1] = rng.uniform(-params.width / 2, params.width / 2, K)
    return Scenario(users, _cscg(rng, (N, M, L)), _cscg(rng, (K, L)), rng_seed=seed)


@dataclass
class ScenarioBatch:
    """Stacked scenarios with a leading batch axis."""

    user_positions: np.ndarray  # (B, K, 3)
    nlos_pa_ris: np.ndarray  # (B, N, M, L)
    nlos_ris_user: np.ndarray  # (B, K, L)
    seed: int | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return self.user_positions.shape[0]

    @property
    def n_users(self) -> int:
        return self.user_positions.shape[1]

    def __getitem__(self, idx) -> "Scenario | ScenarioBatch":
        if isinstance(idx, (int, np.integer)):
            return Scenario(self.user_positions[idx], self.nlos_pa_ris[idx], self.nlos_ris_user[idx], self.seed)
        return ScenarioBatch(self.user_positions[idx], self.nlos_pa_ris[idx], self.nlos_ris_user[idx], self.seed)

    @classmethod
    def stack(cls, scenarios: list[Scenario]) -> "ScenarioBatch":
        return cls(
            np.stack([s.user_positions for s in scenarios]),
            np.stack([s.nlos_pa_ris for s in scenarios]),
            np.stack([s.nlos_ris_user for s in scenarios]),
        )

    @classmethod
    def of(cls, scenario: "Scenario | ScenarioBatch") -> "ScenarioBatch":
        if isinstance(scenario, ScenarioBatch):
            return scenario
        return cls.stack([scenario])

    def permute_users(self, perm) -> "ScenarioBatch":
        perm = np.asarray(perm)
        return ScenarioBatch(self.user_positions[:, perm], self.nlos_pa_ris, self.nlos_ris_user[:, perm], self.seed)

    def save(self, path, params: SystemParams) -> None:
        np.savez(
            path,
            version=np.array(SCHEMA_VERSION),
            params=np.array(params.fingerprint()),
            user_positions=self.user_positions,
            nlos_pa_ris=self.nlos_pa_ris,
            nlos_ris_user=self.nlos_ris_user,
            seed=np.array(-1 if self.seed is None else self.seed),
        )

    @classmethod
    def load(cls, path) -> tuple["ScenarioBatch", SystemParams]:
        with np.load(path) as z:
            if int(z["version"]) != SCHEMA_VERSION:
                raise ValueError(f"unsupported dataset version {int(z['version'])}")
            params = SystemParams.from_dict(json.loads(str(z["params"])))
            seed = int(z["seed"])
            batch = cls(z["user_positions"], z["nlos_pa_ris"], z["nlos_ris_user"], None if seed < 0 else seed)
        return batch, params


def sample_batch(params: SystemParams, size: int, seed: int, n_users: int | None = None) -> ScenarioBatch:
    """Vectorized equivalent of ``size`` independent :func:`sample_scenario` draws."""
    rng = np.random.default_rng(seed)
    K = params.n_users if n_users is None else n_users
    N, M, L = params.n_waveguides, params.n_pas, params.n_ris
    users = np.zeros((size, K, 3))
    users[..., 0] = rng.uniform(0.0, params.length, (size, K))
    users[..., 1] = rng.uniform(-params.width / 2, params.width / 2, (size, K))
    return ScenarioBatch(users, _cscg(rng, (size, N, M, L)), _cscg(rng, (size, K, L)), seed=seed)
