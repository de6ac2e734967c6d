"""Strategy pipelines, system-configuration baselines, exhaustive oracle and reports."""

from __future__ import annotations

import csv
import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .beamform import rzf_closed_form, refine_beams
from .channel import effective_channel, effective_channel_t
from .feasible import raw_to_spacing, spacing_to_positions
from .gnn import GnnModel, MlpModel, full_forward
from .objective import Beamformer, RISConfig, Solution, energy_efficiency, sum_rate
from .scenario import PAPlacement, Scenario, ScenarioBatch, SystemParams, fixed_pa_placement

__all__ = [
    "StrategyReport",
    "OracleBudgetError",
    "OracleResult",
    "CONFIGS",
    "METHODS",
    "strategy_i",
    "strategy_ii",
    "strategy_iii",
    "random_solution",
    "refine_only",
    "system_params",
    "baseline_eval",
    "run_method",
    "grid_oracle",
    "oracle_size",
    "feasibility_violations",
]

CONFIGS = ("ris+pa", "pa-only", "fixed-pa-only")
METHODS = ("I", "II", "III", "mlp", "refine-only", "random")
REPORT_FIELDS = ("sample_id", "SR", "EE", "time_ms", "feasible")


# ---------------------------------------------------------------------------
# independent feasibility check
# ---------------------------------------------------------------------------


def feasibility_violations(sol: Solution, params: SystemParams, tol: float = 1e-9) -> list[str]:
    """Check positions, spacing, RIS unit modulus and power budget from the raw arrays."""
    errs = []
    x = np.asarray(sol.placement.x, dtype=float)
    if x.shape != (params.n_waveguides, params.n_pas):
        return [f"placement shape {x.shape}"]
    if not np.all(np.isfinite(x)):
        return ["non-finite PA position"]
    if x.min() < -tol or x.max() > params.length + tol:
        errs.append(f"PA outside [0, {params.length}]: min {x.min():.6g}, max {x.max():.6g}")
    gaps = x[:, 1:] - x[:, :-1]
    if gaps.size and gaps.min() < params.min_spacing - tol:
        errs.append(f"adjacent PA gap {gaps.min():.6g} below {params.min_spacing}")
    c = np.exp(1j * np.asarray(sol.ris.phases, dtype=float))
    if c.shape != (params.n_ris,):
        errs.append(f"RIS vector length {c.size}, expected {params.n_ris}")
    elif c.size and np.max(np.abs(np.abs(c) - 1.0)) > 1e-12:
        errs.append("RIS coefficient off the unit circle")
    W = np.asarray(sol.beam.W)
    if not np.all(np.isfinite(W)):
        errs.append("non-finite beamformer")
    else:
        p = float(np.sum(W.real**2 + W.imag**2))
        if p > params.power_budget + tol:
            errs.append(f"transmit power {p:.12g} W exceeds {params.power_budget} W")
    return errs


# ---------------------------------------------------------------------------
# strategies
# ---------------------------------------------------------------------------


def strategy_i(model, scenario: Scenario, params: SystemParams) -> Solution:
    """Fully learned: placement, RIS phases and beams straight from the network."""
    return full_forward(scenario, model, params)


def _refined(sol: Solution, scenario: Scenario, params: SystemParams, budget: int, objective: str, init) -> Solution:
    phases = sol.ris.phases if params.use_ris else None
    Z = effective_channel(sol.placement, phases, scenario, params)
    res = refine_beams(Z, params, objective=objective, init=init, budget=budget)
    meta = {"iterations": res.iterations, "converged": res.converged, "initial_value": res.initial_value}
    return Solution(sol.placement, sol.ris, res.beam, meta)


def strategy_ii(model, scenario: Scenario, params: SystemParams, budget: int = 500, objective: str = "sr") -> Solution:
    """Learned geometry and phases; beams refined starting from the learned HZM beams."""
    sol = full_forward(scenario, model, params)
    if budget <= 0:
        return sol
    return _refined(sol, scenario, params, budget, objective, init=sol.beam)


def strategy_iii(model, scenario: Scenario, params: SystemParams, budget: int = 500, objective: str = "sr") -> Solution:
    """Two-stage network for geometry and phases; beams refined starting from closed-form RZF."""
    if not isinstance(model, GnnModel) or model.config.beam_head != "rzf":
        raise ValueError("strategy III needs a two-stage model (beam_head='rzf')")
    sol = full_forward(scenario, model, params)
    if budget <= 0:
        return sol
    return _refined(sol, scenario, params, budget, objective, init=None)


def random_solution(params: SystemParams, rng: np.random.Generator) -> Solution:
    """Uniformly random phases, random feasible placement, random beams at full power."""
    N, M, K = params.n_waveguides, params.n_pas, params.n_users
    placement = spacing_to_positions(raw_to_spacing(rng.normal(size=(N, M)), params), params)
    phases = rng.uniform(0, 2 * np.pi, params.n_ris)
    W = rng.normal(size=(N, K)) + 1j * rng.normal(size=(N, K))
    W *= math.sqrt(params.power_budget) / np.linalg.norm(W)
    return Solution(placement, RISConfig(phases), Beamformer(W))


def refine_only(scenario: Scenario, params: SystemParams, budget: int = 500, objective: str = "sr") -> Solution:
    """Beam optimization alone with the geometry frozen at the centered placement and unit RIS phases."""
    sol = Solution(fixed_pa_placement(params), RISConfig(np.zeros(params.n_ris)), Beamformer(np.zeros((1, 1))))
    return _refined(sol, scenario, params, budget, objective, init=None)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class StrategyReport:
    strategy: str
    config: str
    sr: np.ndarray
    ee: np.ndarray
    feasible: np.ndarray
    time_ms: np.ndarray
    sample_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.sr = np.asarray(self.sr, dtype=float)
        self.ee = np.asarray(self.ee, dtype=float)
        self.feasible = np.asarray(self.feasible, dtype=bool)
        self.time_ms = np.asarray(self.time_ms, dtype=float)
        if self.sample_ids is None:
            self.sample_ids = np.arange(self.sr.size)

    @property
    def mean_sr(self) -> float:
        return float(np.mean(self.sr))

    @property
    def mean_ee(self) -> float:
        return float(np.mean(self.ee))

    @property
    def median_time_ms(self) -> float:
        return float(np.median(self.time_ms))

    @property
    def all_feasible(self) -> bool:
        return bool(np.all(self.feasible))

    def summary(self) -> dict:
        return {
            "strategy": self.strategy,
            "config": self.config,
            "n": int(self.sr.size),
            "SR": self.mean_sr,
            "EE": self.mean_ee,
            "median_time_ms": self.median_time_ms,
            "all_feasible": self.all_feasible,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_FIELDS)
            for row in zip(self.sample_ids, self.sr, self.ee, self.time_ms, self.feasible):
                w.writerow([int(row[0]), repr(float(row[1])), repr(float(row[2])), f"{row[3]:.3f}", bool(row[4])])


def system_params(config: str, params: SystemParams) -> SystemParams:
    """System parameters of a configuration; both PA-only variants drop the RIS."""
    if config not in CONFIGS:
        raise ValueError(f"unknown configuration {config!r}; choose from {CONFIGS}")
    return params if config == "ris+pa" else params.replace(n_ris=0)


def run_method(
    method: str,
    dataset: ScenarioBatch,
    params: SystemParams,
    model=None,
    budget: int = 500,
    objective: str = "sr",
    seed: int = 0,
    config: str = "",
) -> StrategyReport:
    """Run one method sample by sample (batch size 1) with wall-clock timing."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    if method in ("I", "II", "III", "mlp") and model is None:
        raise ValueError(f"method {method!r} needs a trained model")
    if method == "mlp" and not isinstance(model, MlpModel):
        raise ValueError("method 'mlp' needs an MlpModel")
    rng = np.random.default_rng(seed)
    srs, ees, feas, times = [], [], [], []
    with ad.no_grad():
        for i in range(len(dataset)):
            sc = dataset[i]
            t0 = time.perf_counter()
            if method in ("I", "mlp"):
                sol = strategy_i(model, sc, params)
            elif method == "II":
                sol = strategy_ii(model, sc, params, budget, objective)
            elif method == "III":
                sol = strategy_iii(model, sc, params, budget, objective)
            elif method == "refine-only":
                sol = refine_only(sc, params, budget, objective)
            else:
                sol = random_solution(params, rng)
            times.append((time.perf_counter() - t0) * 1e3)
            srs.append(sum_rate(sol, sc, params))
            ees.append(energy_efficiency(sol, sc, params))
            feas.append(not feasibility_violations(sol, params))
    return StrategyReport(method, config, srs, ees, feas, times)


def baseline_eval(
    config: str,
    method: str,
    dataset: ScenarioBatch,
    params: SystemParams,
    model=None,
    budget: int = 500,
    objective: str = "sr",
    seed: int = 0,
) -> StrategyReport:
    """Evaluate a method under one system configuration.

    ``params`` describes the full RIS+PA system. PA-only variants evaluate
    with the RIS removed; the fixed-PA variant expects a model built with
    ``learn_placement=False`` (refine-only always uses the fixed placement).
    """
    sp = system_params(config, params)
    if config == "fixed-pa-only" and isinstance(model, GnnModel) and model.config.learn_placement:
        raise ValueError("fixed-PA-only evaluation needs a model with learn_placement=False")
    return run_method(method, dataset, sp, model, budget, objective, seed, config)


# ---------------------------------------------------------------------------
# exhaustive oracle
# ---------------------------------------------------------------------------


class OracleBudgetError(RuntimeError):
    """The exhaustive search would exceed the evaluation budget."""

    def __init__(self, size: int, budget: int):
        super().__init__(f"grid oracle needs {size:,} evaluations, budget is {budget:,}")
        self.size = size
        self.budget = budget


@dataclass
class OracleResult:
    solution: Solution
    value: float
    evaluations: int


def _waveguide_grid(params: SystemParams, points: int) -> np.ndarray:
    """Sorted M-tuples of grid positions in [0, D] with gaps of at least ``min_spacing``."""
    grid = np.linspace(0.0, params.length, points)
    M = params.n_pas
    if M == 1:
        return grid[:, None]
    combos = [c for c in itertools.combinations(grid, M) if np.min(np.diff(c)) >= params.min_spacing - 1e-12]
    return np.array(combos).reshape(-1, M)


def oracle_size(params: SystemParams, points: int = 41, phase_levels: int = 8) -> int:
    per_wg = len(_waveguide_grid(params, points)) if params.n_pas <= 3 else math.comb(points, params.n_pas)
    return per_wg**params.n_waveguides * phase_levels**params.n_ris


def _objective_batch(Z: np.ndarray, params: SystemParams) -> np.ndarray:
    """Sum rate for rows Z (B, K, N): full-power MRT for K = 1, default RZF otherwise."""
    K = Z.shape[1]
    if K == 1:
        gain = np.sum(np.abs(Z[:, 0, :]) ** 2, axis=-1)
        return np.log2(1.0 + params.power_budget * gain / params.noise_power)
    out = np.empty(Z.shape[0])
    for b in range(Z.shape[0]):
        W = rzf_closed_form(Z[b], params).W
        Y = Z[b] @ W
        P = np.abs(Y) ** 2
        sig = np.diag(P)
        interf = P.sum(axis=1) - sig + params.noise_power
        out[b] = np.sum(np.log2(1 + sig / interf))
    return out


def _best_beam(Z: np.ndarray, params: SystemParams) -> Beamformer:
    if Z.shape[0] == 1:
        h = Z[0].conj()
        return Beamformer((h / np.linalg.norm(h) * math.sqrt(params.power_budget))[:, None])
    return rzf_closed_form(Z, params)


def grid_oracle(
    scenario: Scenario,
    params: SystemParams,
    points: int = 41,
    phase_levels: int = 8,
    max_evaluations: int = 5_000_000,
    polish: bool = False,
    chunk: int = 4096,
) -> OracleResult:
    """Exhaustive search over grid PA positions and quantized RIS phases.

    Beams are full-power MRT for a single user (optimal there) and default
    RZF otherwise. With ``polish=True`` the best grid point is improved by a
    shrinking coordinate search over continuous positions and phases
    followed by beam refinement.
    """
    size = oracle_size(params, points, phase_levels)
    if size > max_evaluations:
        raise OracleBudgetError(size, max_evaluations)
    N, M, L = params.n_waveguides, params.n_pas, params.n_ris
    per_wg = _waveguide_grid(params, points)
    x_idx = np.array(list(itertools.product(range(len(per_wg)), repeat=N)), dtype=int).reshape(-1, N)
    levels = 2 * np.pi * np.arange(phase_levels) / phase_levels
    ph_all = np.array(list(itertools.product(levels, repeat=L)), dtype=float).reshape(-1, L) if L else np.zeros((1, 0))
    batch = ScenarioBatch.of(scenario)
    n_ph = len(ph_all)

    best_val, best_flat = -np.inf, 0
    total = len(x_idx) * n_ph
    with ad.no_grad():
        for start in range(0, total, chunk):
            flat = np.arange(start, min(start + chunk, total))
            xi, pi = flat // n_ph, flat % n_ph
            X = per_wg[x_idx[xi]]  # (B, N, M)
            coeffs = ad.const(np.exp(1j * ph_all[pi])) if L else None
            Z = effective_channel_t(ad.const(X), coeffs, batch, params).data
            vals = _objective_batch(Z, params)
            j = int(np.argmax(vals))  # first maximizer in enumeration order
            if vals[j] > best_val:
                best_val, best_flat = float(vals[j]), int(flat[j])

    x = per_wg[x_idx[best_flat // n_ph]].copy()
    phases = ph_all[best_flat % n_ph].copy()
    if polish:
        x, phases, best_val = _polish(x, phases, best_val, scenario, params)
    Z = effective_channel(PAPlacement(x), phases if L else None, scenario, params)
    beam = _best_beam(Z, params)
    sol = Solution(PAPlacement(x), RISConfig(phases), beam, {"grid_points": points, "phase_levels": phase_levels})
    value = sum_rate(sol, scenario, params)
    if polish:
        ref = refine_beams(Z, params, "sr", init=beam, budget=500)
        sol = Solution(sol.placement, sol.ris, ref.beam, sol.meta)
        value = max(value, ref.value)
    return OracleResult(sol, float(value), size)


def _polish(x, phases, value, scenario, params, rounds: int = 40):
    """Shrinking-step coordinate search around a grid optimum, keeping feasibility."""

    def score(x, ph):
        Z = effective_channel(PAPlacement(x), ph if params.n_ris else None, scenario, params)
        return float(_objective_batch(Z[None], params)[0])

    def feasible(x):
        return (
            x.min() >= 0
            and x.max() <= params.length
            and (x.shape[1] < 2 or np.diff(x, axis=1).min() >= params.min_spacing)
        )

    step_x = params.length / 40
    step_p = np.pi / 8
    for _ in range(rounds):
        improved = False
        for idx in np.ndindex(*x.shape):
            for s in (step_x, -step_x):
                cand = x.copy()
                cand[idx] += s
                if feasible(cand):
                    v = score(cand, phases)
                    if v > value:
                        x, value, improved = cand, v, True
        for l in range(phases.size):
            for s in (step_p, -step_p):
                cand = phases.copy()
                cand[l] = (cand[l] + s) % (2 * np.pi)
                v = score(x, cand)
                if v > value:
                    phases, value, improved = cand, v, True
        if not improved:
            step_x /= 2
            step_p /= 2
    return x, phases, value
