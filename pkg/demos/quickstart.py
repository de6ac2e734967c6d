"""Draw a scenario, run an untrained model and refine its beams.

Run with ``python3 demos/quickstart.py``.
"""

import numpy as np

from rispass.gnn import GnnModel, ModelConfig
from rispass.harness import feasibility_violations, random_solution, strategy_i, strategy_ii
from rispass.objective import energy_efficiency, sum_rate
from rispass.scenario import SystemParams, sample_scenario

params = SystemParams.desk()
scenario = sample_scenario(params, seed=0)
model = GnnModel(params, ModelConfig(seed=0))

print("users (x, y, z):")
print(np.round(scenario.user_positions, 2))

for name, sol in [
    ("random", random_solution(params, np.random.default_rng(0))),
    ("strategy I", strategy_i(model, scenario, params)),
    ("strategy II", strategy_ii(model, scenario, params, budget=200)),
]:
    print(
        f"{name:12s} SR {sum_rate(sol, scenario, params):7.3f} bit/s/Hz  "
        f"EE {energy_efficiency(sol, scenario, params):6.3f}  "
        f"power {sol.beam.total_power:5.2f} W  "
        f"feasible {not feasibility_violations(sol, params)}"
    )

print("PA positions chosen by stage 1:")
print(np.round(strategy_i(model, scenario, params).placement.x, 3))
