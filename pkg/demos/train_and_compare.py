"""Train the three-stage model on a small dataset and compare system configurations.

Takes a few minutes on one CPU. Run with ``python3 demos/train_and_compare.py``.
"""

from rispass.gnn import GnnModel, ModelConfig
from rispass.harness import baseline_eval, run_method
from rispass.scenario import SystemParams, sample_batch
from rispass.train import TrainConfig, split_dataset, train

params = SystemParams.desk()
data = sample_batch(params, 2000, seed=0)
config = TrainConfig(epochs=20, batch_size=64)
test = split_dataset(data, config.split)[2]

variants = {
    "ris+pa": (params, True),
    "pa-only": (params.replace(n_ris=0), True),
    "fixed-pa-only": (params.replace(n_ris=0), False),
}
for name, (p, learn) in variants.items():
    model = GnnModel(p, ModelConfig(seed=0, learn_placement=learn))
    result = train(model, data, config, params=p)
    report = baseline_eval(name, "I", test, params, model)
    print(
        f"{name:14s} train loss {result.initial_train_loss:.4f} -> best val {result.best_val_loss:.4f} "
        f"(epoch {result.best_epoch}), test SR {report.mean_sr:.3f}, median {report.median_time_ms:.1f} ms"
    )
    if name == "ris+pa":
        refined = run_method("II", test[:20], params, model, budget=500)
        rand = run_method("random", test, params, seed=0)
        print(f"{'':14s} strategy II SR {refined.mean_sr:.3f} on 20 samples, random SR {rand.mean_sr:.3f}")
