"""Compare refined inference against the exhaustive grid oracle on a tiny system.

Run with ``python3 demos/oracle_gap.py``.
"""

import numpy as np

from rispass.gnn import GnnModel, ModelConfig
from rispass.harness import grid_oracle, oracle_size, strategy_ii
from rispass.objective import sum_rate
from rispass.scenario import SystemParams, sample_batch
from rispass.train import TrainConfig, train

params = SystemParams(n_waveguides=2, n_pas=1, n_users=1, n_ris=2)
print(f"oracle evaluates {oracle_size(params):,} candidates per instance")

model = GnnModel(params, ModelConfig(seed=0))
train(model, sample_batch(params, 2000, seed=0), TrainConfig(epochs=20, batch_size=64))

test = sample_batch(params, 20, seed=4242)
ratios = []
for i in range(len(test)):
    sc = test[i]
    ours = sum_rate(strategy_ii(model, sc, params, budget=500), sc, params)
    best = grid_oracle(sc, params, points=41, phase_levels=8)
    ratios.append(ours / best.value)
    print(f"instance {i:2d}: strategy II {ours:7.3f}  oracle {best.value:7.3f}  ratio {ratios[-1]:.3f}")
print(f"mean ratio {np.mean(ratios):.3f}")
