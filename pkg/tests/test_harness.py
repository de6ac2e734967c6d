import csv
import math

import numpy as np
import pytest

from rispass.gnn import GnnModel, MlpModel, ModelConfig, full_forward
from rispass.harness import (
    OracleBudgetError,
    StrategyReport,
    baseline_eval,
    feasibility_violations,
    grid_oracle,
    oracle_size,
    random_solution,
    refine_only,
    run_method,
    strategy_i,
    strategy_ii,
    strategy_iii,
    system_params,
)
from rispass.objective import Beamformer, RISConfig, Solution, sum_rate
from rispass.scenario import PAPlacement, Scenario, SystemParams, fixed_pa_placement, sample_batch, sample_scenario

DESK = SystemParams.desk()
TINY = SystemParams(n_waveguides=2, n_pas=1, n_users=1, n_ris=2)


def small_model(params=DESK, **kw):
    return GnnModel(params, ModelConfig(hidden=8, seed=1, **kw))


def at_user(x, y, params):
    sc = sample_scenario(params, 0)
    sc.user_positions[0] = [x, y, 0.0]
    return sc


class TestValidator:
    def test_accepts_feasible(self):
        sol = Solution(fixed_pa_placement(DESK), RISConfig(np.zeros(8)), Beamformer(np.eye(2)))
        assert feasibility_violations(sol, DESK) == []

    @pytest.mark.parametrize(
        "x, W, n_ris, needle",
        [
            ([[0.0, 0.05], [1.0, 2.0]], np.eye(2), 8, "gap"),
            ([[-0.5, 1.0], [1.0, 2.0]], np.eye(2), 8, "outside"),
            ([[1.0, 2.0], [3.0, 10.5]], np.eye(2), 8, "outside"),
            ([[1.0, 2.0], [3.0, 4.0]], 3 * np.eye(2), 8, "power"),
            ([[1.0, 2.0], [3.0, 4.0]], np.eye(2), 5, "RIS"),
            ([[1.0, 2.0], [3.0, 4.0]], np.full((2, 2), np.nan), 8, "non-finite"),
        ],
    )
    def test_catches(self, x, W, n_ris, needle):
        sol = Solution(PAPlacement(x), RISConfig(np.zeros(n_ris)), Beamformer(W))
        errs = feasibility_violations(sol, DESK)
        assert any(needle in e for e in errs), errs

    def test_random_solutions_feasible(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            sol = random_solution(DESK, rng)
            assert feasibility_violations(sol, DESK) == []
            assert sol.beam.total_power == pytest.approx(DESK.power_budget)


@pytest.fixture(scope="module")
def model():
    return small_model()


class TestStrategies:
    def test_strategy_i_is_full_forward(self, model):
        sc = sample_scenario(DESK, 3)
        np.testing.assert_array_equal(strategy_i(model, sc, DESK).beam.W, full_forward(sc, model, DESK).beam.W)

    @pytest.mark.parametrize("seed", range(5))
    def test_refinement_never_hurts(self, model, seed):
        sc = sample_scenario(DESK, seed)
        a = strategy_i(model, sc, DESK)
        b = strategy_ii(model, sc, DESK, budget=100)
        assert sum_rate(b, sc, DESK) >= sum_rate(a, sc, DESK) - 1e-9
        np.testing.assert_array_equal(b.placement.x, a.placement.x)
        np.testing.assert_array_equal(b.ris.phases, a.ris.phases)
        assert feasibility_violations(b, DESK) == []

    def test_zero_budget_is_strategy_i(self, model):
        sc = sample_scenario(DESK, 1)
        np.testing.assert_array_equal(strategy_ii(model, sc, DESK, budget=0).beam.W, strategy_i(model, sc, DESK).beam.W)

    def test_ee_refinement(self, model):
        from rispass.objective import energy_efficiency

        sc = sample_scenario(DESK, 2)
        a = strategy_i(model, sc, DESK)
        b = strategy_ii(model, sc, DESK, budget=100, objective="ee")
        assert energy_efficiency(b, sc, DESK) >= energy_efficiency(a, sc, DESK) - 1e-9

    def test_strategy_iii_needs_two_stage_model(self, model):
        with pytest.raises(ValueError):
            strategy_iii(model, sample_scenario(DESK, 0), DESK)

    def test_strategy_iii_single_user_already_optimal(self):
        p = SystemParams(n_waveguides=2, n_pas=2, n_users=1, n_ris=4)
        m = small_model(p, beam_head="rzf")
        sc = sample_scenario(p, 5)
        a = strategy_iii(m, sc, p, budget=0)
        b = strategy_iii(m, sc, p, budget=500)
        assert abs(sum_rate(b, sc, p) - sum_rate(a, sc, p)) < 1e-6

    def test_refine_only_uses_frozen_geometry(self):
        sc = sample_scenario(DESK, 0)
        sol = refine_only(sc, DESK, budget=50)
        np.testing.assert_array_equal(sol.placement.x, fixed_pa_placement(DESK).x)
        assert not sol.ris.phases.any()


class TestReports:
    def test_aggregates_and_csv(self, tmp_path):
        r = StrategyReport("I", "ris+pa", [1.0, 3.0], [0.1, 0.3], [True, True], [2.0, 4.0])
        assert r.mean_sr == 2.0 and r.mean_ee == pytest.approx(0.2) and r.median_time_ms == 3.0
        r.write_csv(tmp_path / "r.csv")
        with open(tmp_path / "r.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["sample_id", "SR", "EE", "time_ms", "feasible"]
        assert float(rows[2][1]) == 3.0
        assert r.summary()["all_feasible"] is True

    def test_run_method_report(self):
        data = sample_batch(DESK, 4, seed=0)
        r = run_method("I", data, DESK, small_model())
        assert r.sr.size == 4 and r.all_feasible
        assert r.mean_sr == pytest.approx(np.mean(r.sr))
        assert np.all(r.time_ms > 0)

    def test_random_method_seeded(self):
        data = sample_batch(DESK, 3, seed=0)
        a = run_method("random", data, DESK, seed=4)
        b = run_method("random", data, DESK, seed=4)
        np.testing.assert_array_equal(a.sr, b.sr)
        np.testing.assert_array_equal(a.ee, b.ee)

    @pytest.mark.parametrize("method", ["I", "II", "III", "mlp"])
    def test_learning_methods_need_a_model(self, method):
        with pytest.raises(ValueError, match="model"):
            baseline_eval("ris+pa", method, sample_batch(DESK, 1, seed=0), DESK)

    def test_unknown_names(self):
        with pytest.raises(ValueError):
            system_params("ris-only", DESK)
        with pytest.raises(ValueError):
            run_method("IV", sample_batch(DESK, 1, seed=0), DESK)

    def test_configurations(self):
        data = sample_batch(DESK, 2, seed=0)
        assert system_params("pa-only", DESK).n_ris == 0
        r = baseline_eval("pa-only", "I", data, DESK, small_model(DESK.replace(n_ris=0)))
        assert r.config == "pa-only" and r.all_feasible
        fixed = small_model(DESK.replace(n_ris=0), learn_placement=False)
        r = baseline_eval("fixed-pa-only", "I", data, DESK, fixed)
        assert r.all_feasible
        with pytest.raises(ValueError, match="learn_placement"):
            baseline_eval("fixed-pa-only", "I", data, DESK, small_model(DESK.replace(n_ris=0)))

    def test_fixed_refine_only_matches_direct_call(self):
        data = sample_batch(DESK, 2, seed=3)
        r = baseline_eval("fixed-pa-only", "refine-only", data, DESK, budget=40)
        p0 = DESK.replace(n_ris=0)
        direct = [sum_rate(refine_only(data[i], p0, budget=40), data[i], p0) for i in range(2)]
        np.testing.assert_allclose(r.sr, direct, rtol=1e-12)

    def test_mlp_method(self):
        data = sample_batch(DESK, 2, seed=0)
        r = baseline_eval("ris+pa", "mlp", data, DESK, MlpModel(DESK, hidden=8))
        assert r.all_feasible


class TestOracle:
    def test_single_pa_moves_over_user(self):
        p = SystemParams(n_waveguides=1, n_pas=1, n_users=1, n_ris=0)
        res = grid_oracle(at_user(5.0, 0.0, p), p, points=41)
        assert res.solution.placement.x[0, 0] == pytest.approx(5.0, abs=10 / 40)
        d = math.hypot(res.solution.placement.x[0, 0] - 5.0, p.height)
        assert res.value == pytest.approx(math.log2(1 + p.power_budget * p.eta / (p.noise_power * d**2)), rel=1e-10)
        assert res.value == pytest.approx(12.62884, abs=1e-4)

    def test_off_grid_user(self):
        p = SystemParams(n_waveguides=1, n_pas=1, n_users=1, n_ris=0)
        res = grid_oracle(at_user(3.1, 2.0, p), p, points=41)
        assert res.solution.placement.x[0, 0] == pytest.approx(3.0)  # nearest node, spacing 0.25

    def test_finer_grid_never_worse(self):
        sc = sample_scenario(TINY, 2)
        coarse = grid_oracle(sc, TINY, points=11, phase_levels=4)
        fine = grid_oracle(sc, TINY, points=21, phase_levels=4)  # contains the coarse grid
        assert fine.value >= coarse.value - 1e-12

    def test_refuses_large_instances(self):
        with pytest.raises(OracleBudgetError) as exc:
            grid_oracle(sample_scenario(DESK, 0), DESK)
        assert exc.value.size == oracle_size(DESK) > exc.value.budget
        assert "evaluations" in str(exc.value)

    def test_solution_feasible_and_consistent(self):
        sc = sample_scenario(TINY, 1)
        res = grid_oracle(sc, TINY, points=21)
        assert feasibility_violations(res.solution, TINY) == []
        assert res.value == pytest.approx(sum_rate(res.solution, sc, TINY), rel=1e-12)

    def test_sandwich(self):
        m = small_model(TINY)
        for seed in range(3):
            sc = sample_scenario(TINY, seed)
            ii = strategy_ii(m, sc, TINY, budget=200)
            top = grid_oracle(sc, TINY, points=41, polish=True)
            assert sum_rate(ii, sc, TINY) <= top.value + 1e-6

    def test_polish_never_worse(self):
        sc = sample_scenario(TINY, 4)
        assert grid_oracle(sc, TINY, points=21, polish=True).value >= grid_oracle(sc, TINY, points=21).value - 1e-12

    def test_two_users_use_rzf(self):
        p = SystemParams(n_waveguides=2, n_pas=1, n_users=2, n_ris=1)
        res = grid_oracle(sample_scenario(p, 0), p, points=11, phase_levels=4)
        assert res.solution.beam.W.shape == (2, 2)
        assert feasibility_violations(res.solution, p) == []


def test_scenario_type_roundtrip_in_reports():
    assert isinstance(sample_batch(DESK, 2, seed=0)[0], Scenario)
