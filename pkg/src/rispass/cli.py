"""Command-line entry point: ``rispass {gen-data,train,eval,oracle,bench}``.

Every subcommand reads an optional JSON config (``--config``) whose
top-level sections are ``system``, ``data``, ``model``, ``train``, ``eval``
and ``oracle``; explicit flags and ``--set section.key=value`` override it.
Outputs go to ``--results-dir``, else ``$RISPASS_RESULTS``, else
``./results``.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .gnn import GnnModel, MlpModel, ModelConfig, load_checkpoint, save_checkpoint
from .harness import CONFIGS, METHODS, OracleBudgetError, baseline_eval, grid_oracle, system_params
from .scenario import ScenarioBatch, SystemParams, sample_batch
from .train import TrainConfig, config_dict, split_dataset, train, write_history_csv

RESULTS_ENV = "RISPASS_RESULTS"

DEFAULTS = {
    "system": {},
    "data": {"size": 1000, "seed": 0},
    "model": {"kind": "gnn", "hidden": 64},
    "train": {},
    "eval": {"strategy": "I", "config": "ris+pa", "budget": 500, "objective": "sr", "split": "test"},
    "oracle": {"points": 41, "phase_levels": 8, "max_evaluations": 5_000_000, "polish": False, "limit": None},
}

log = logging.getLogger("rispass")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path: str | None, overrides: list[str]) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        for section, values in user.items():
            if section not in cfg:
                raise ConfigError(f"unknown config section {section!r}; expected one of {sorted(cfg)}")
            if not isinstance(values, dict):
                raise ConfigError(f"section {section!r} must be an object")
            cfg[section].update(values)
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or section not in cfg:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        cfg[section][name] = _parse_value(value)
    return cfg


def _build(kind, values: dict, what: str):
    try:
        return kind(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {what} config: {exc}") from exc


def system_from(cfg: dict) -> SystemParams:
    return _build(SystemParams, cfg["system"], "system")


def train_config_from(cfg: dict) -> TrainConfig:
    return _build(TrainConfig, cfg["train"], "train")


def results_dir(arg: str | None) -> Path:
    d = Path(arg or os.environ.get(RESULTS_ENV) or "results")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _atomic_write(path: Path, write) -> None:
    """Write through a temporary file in the same directory, then rename."""
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.stem + ".", suffix=".tmp" + path.suffix)
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def _write_json(path: Path, obj) -> None:
    def w(tmp):
        with open(tmp, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")

    _atomic_write(path, w)


def _dataset(args, cfg: dict, params: SystemParams, out: Path) -> tuple[ScenarioBatch, SystemParams]:
    path = args.data or (out / "dataset.npz")
    if Path(path).exists():
        data, stored = ScenarioBatch.load(path)
        return data, stored
    if args.data:
        raise ConfigError(f"dataset {path} not found")
    d = cfg["data"]
    return sample_batch(params, int(d["size"]), int(d["seed"])), params


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args, cfg) -> int:
    params = system_from(cfg)
    d = cfg["data"]
    data = sample_batch(params, int(d["size"]), int(d["seed"]))
    out = results_dir(args.results_dir)
    path = Path(args.out) if args.out else out / "dataset.npz"
    _atomic_write(path, lambda tmp: data.save(tmp, params))
    print(f"wrote {len(data)} scenarios to {path}")
    return 0


def _make_model(cfg: dict, params: SystemParams, strategy: str, config: str):
    m = dict(cfg["model"])
    kind = m.pop("kind", "gnn")
    if strategy == "mlp" or kind == "mlp":
        allowed = {k: m[k] for k in ("hidden", "n_layers", "seed") if k in m}
        return _build(lambda **kw: MlpModel(params, **kw), allowed, "model")
    m.setdefault("learn_placement", config != "fixed-pa-only")
    m.setdefault("beam_head", "rzf" if strategy == "III" else "hzm")
    return GnnModel(params, _build(ModelConfig, m, "model"))


def cmd_train(args, cfg) -> int:
    params = system_from(cfg)
    ev = cfg["eval"]
    out = results_dir(args.results_dir)
    data, params = _dataset(args, cfg, params, out)
    sp = system_params(ev["config"], params)
    model = _make_model(cfg, sp, ev["strategy"], ev["config"])
    tc = train_config_from(cfg)
    result = train(model, data, tc, params=sp)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "model.npz"
    _atomic_write(ckpt, lambda tmp: save_checkpoint(model, tmp))
    _atomic_write(out / "history.csv", lambda tmp: write_history_csv(result.history, tmp))
    _write_json(
        out / "train_summary.json",
        {
            "status": result.status,
            "best_epoch": result.best_epoch,
            "best_val_loss": result.best_val_loss,
            "initial_train_loss": result.initial_train_loss,
            "epochs_run": len(result.history),
            "train_config": config_dict(tc),
            "system_config": ev["config"],
            "strategy": ev["strategy"],
        },
    )
    print(f"training {result.status}; best epoch {result.best_epoch}; checkpoint {ckpt}")
    return 0


def _eval_split(data: ScenarioBatch, cfg: dict, which: str) -> ScenarioBatch:
    if which == "all":
        return data
    tc = train_config_from(cfg)
    parts = dict(zip(("train", "val", "test"), split_dataset(data, tc.split)))
    if which not in parts:
        raise ConfigError(f"eval.split must be train, val, test or all, got {which!r}")
    return parts[which]


def _load_model(args, out: Path, strategy: str):
    if strategy in ("refine-only", "random"):
        return None
    path = Path(args.checkpoint) if args.checkpoint else out / "model.npz"
    if not path.exists():
        raise ConfigError(f"strategy {strategy} needs a checkpoint; {path} not found")
    return load_checkpoint(path)


def cmd_eval(args, cfg) -> int:
    ev = cfg["eval"]
    if ev["strategy"] not in METHODS:
        raise ConfigError(f"unknown strategy {ev['strategy']!r}; choose from {METHODS}")
    if ev["config"] not in CONFIGS:
        raise ConfigError(f"unknown system configuration {ev['config']!r}; choose from {CONFIGS}")
    out = results_dir(args.results_dir)
    params = system_from(cfg)
    data, params = _dataset(args, cfg, params, out)
    data = _eval_split(data, cfg, ev.get("split", "test"))
    model = _load_model(args, out, ev["strategy"])
    if model is not None:
        # the checkpoint's own system description wins over the config file
        params = model.params if ev["config"] == "ris+pa" else params
    report = baseline_eval(
        ev["config"], ev["strategy"], data, params, model, int(ev["budget"]), ev["objective"], cfg["data"]["seed"]
    )
    _atomic_write(out / "report.csv", report.write_csv)
    _write_json(out / "report_summary.json", report.summary())
    s = report.summary()
    print(f"{s['strategy']} / {s['config']}: SR {s['SR']:.4f}  EE {s['EE']:.4f}  feasible {s['all_feasible']}")
    return 0


def cmd_oracle(args, cfg) -> int:
    oc = cfg["oracle"]
    out = results_dir(args.results_dir)
    params = system_from(cfg)
    data, params = _dataset(args, cfg, params, out)
    n = len(data) if oc.get("limit") is None else min(len(data), int(oc["limit"]))
    rows = []
    for i in range(n):
        res = grid_oracle(
            data[i],
            params,
            points=int(oc["points"]),
            phase_levels=int(oc["phase_levels"]),
            max_evaluations=int(oc["max_evaluations"]),
            polish=bool(oc["polish"]),
        )
        rows.append(
            {
                "sample_id": i,
                "SR": res.value,
                "x": res.solution.placement.x.tolist(),
                "phases": res.solution.ris.phases.tolist(),
            }
        )
    _write_json(out / "oracle.json", {"oracle": oc, "results": rows})
    print(f"oracle solved {n} instances; mean SR {np.mean([r['SR'] for r in rows]):.4f}")
    return 0


def cmd_bench(args, cfg) -> int:
    ev = cfg["eval"]
    out = results_dir(args.results_dir)
    params = system_from(cfg)
    data, params = _dataset(args, cfg, params, out)
    data = _eval_split(data, cfg, ev.get("split", "test"))
    strategies = args.strategies.split(",") if args.strategies else [ev["strategy"]]
    model = None
    rows = []
    for s in strategies:
        if s not in METHODS:
            raise ConfigError(f"unknown strategy {s!r}")
        model = _load_model(args, out, s) if s not in ("refine-only", "random") else None
        p = model.params if model is not None and ev["config"] == "ris+pa" else params
        rep = baseline_eval(ev["config"], s, data, p, model, int(ev["budget"]), ev["objective"])
        rows.append(rep.summary())
        print(f"{s}: median {rep.median_time_ms:.2f} ms per sample")
    _write_json(out / "bench.json", rows)
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rispass", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="config override")
        p.add_argument("--results-dir", help=f"output directory (default ${RESULTS_ENV} or ./results)")
        p.add_argument("--seed", type=int, help="data seed (data.seed)")
        return p

    g = common(sub.add_parser("gen-data", help="sample a scenario dataset"))
    g.add_argument("--size", type=int)
    g.add_argument("--out", help="dataset path (default <results>/dataset.npz)")

    for name, hlp in (("train", "train a model"), ("eval", "evaluate a strategy"), ("bench", "time strategies")):
        p = common(sub.add_parser(name, help=hlp))
        p.add_argument("--data", help="dataset .npz (default <results>/dataset.npz, else generated)")
        p.add_argument("--checkpoint", help="model checkpoint path (default <results>/model.npz)")
        p.add_argument("--strategy", choices=METHODS)
        p.add_argument("--system", choices=CONFIGS, help="system configuration")
        p.add_argument("--budget", type=int, help="refinement iteration budget")
        p.add_argument("--objective", choices=("sr", "ee"))
        if name == "train":
            p.add_argument("--epochs", type=int)
        if name == "bench":
            p.add_argument("--strategies", help="comma-separated list")

    o = common(sub.add_parser("oracle", help="exhaustive grid search on tiny instances"))
    o.add_argument("--data")
    o.add_argument("--points", type=int)
    o.add_argument("--phase-levels", type=int)
    o.add_argument("--limit", type=int, help="number of instances")
    return parser


def _apply_flags(args, cfg: dict) -> None:
    if args.seed is not None:
        cfg["data"]["seed"] = args.seed
    for flag, section, key in (
        ("size", "data", "size"),
        ("strategy", "eval", "strategy"),
        ("system", "eval", "config"),
        ("budget", "eval", "budget"),
        ("epochs", "train", "epochs"),
        ("points", "oracle", "points"),
        ("phase_levels", "oracle", "phase_levels"),
        ("limit", "oracle", "limit"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            cfg[section][key] = v
    if getattr(args, "objective", None):
        cfg["eval"]["objective"] = args.objective
        cfg["train"]["objective"] = args.objective


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "oracle": cmd_oracle, "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, args.set)
        _apply_flags(args, cfg)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"rispass: error: {exc}", file=sys.stderr)
        return 2
    except OracleBudgetError as exc:
        print(f"rispass: refused: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"rispass: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
