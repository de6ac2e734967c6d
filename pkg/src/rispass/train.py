"""Unsupervised end-to-end training of the staged model."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .gnn import GnnModel, MlpModel, init_params  # noqa: F401  (init_params re-exported)
from .objective import loss_ee, loss_sr, power_t, sum_rate_t
from .scenario import ScenarioBatch, SystemParams

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "TrainResult",
    "Adam",
    "adam_step",
    "batch_loss",
    "evaluate",
    "split_dataset",
    "training_loss",
    "train",
    "write_history_csv",
    "init_params",
]

HISTORY_FIELDS = ("epoch", "train_loss", "val_loss", "val_SR", "val_EE", "lr")


@dataclass
class TrainConfig:
    objective: str = "sr"  # "sr" or "ee"
    batch_size: int = 64
    epochs: int = 20
    lr: float = 1e-3
    milestones: tuple[int, ...] = (50, 80)
    gamma: float = 0.1
    patience: int = 10
    seed: int = 0
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    grad_clip: float = 10.0

    def __post_init__(self):
        if self.objective not in ("sr", "ee"):
            raise ValueError(f"objective must be 'sr' or 'ee', got {self.objective!r}")
        if self.batch_size < 1 or self.epochs < 0 or self.lr <= 0:
            raise ValueError("batch_size >= 1, epochs >= 0 and lr > 0 required")
        if abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise ValueError(f"split ratios must be nonnegative and sum to 1, got {self.split}")
        self.milestones = tuple(int(m) for m in self.milestones)
        self.split = tuple(float(s) for s in self.split)

    def lr_at(self, epoch: int) -> float:
        """Learning rate used during 1-based ``epoch``."""
        return self.lr * self.gamma ** sum(epoch > m for m in self.milestones)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def _real_view(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    return a.view(np.float64) if np.iscomplexobj(a) else a


def adam_step(theta, grad, state: dict, lr: float, t: int, betas=(0.9, 0.999), eps: float = 1e-8) -> np.ndarray:
    """One bias-corrected Adam update; complex arrays are treated as (Re, Im) pairs.

    ``state`` holds the moment estimates and is updated in place. Returns the
    new parameter array.
    """
    theta = np.asarray(theta)
    g = _real_view(np.asarray(grad, dtype=theta.dtype))
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient passed to Adam")
    b1, b2 = betas
    m = state.get("m")
    v = state.get("v")
    if m is None:
        m = np.zeros_like(g)
        v = np.zeros_like(g)
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    state["m"], state["v"] = m, v
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    new = _real_view(theta.copy()) - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new.view(theta.dtype).reshape(theta.shape) if np.iscomplexobj(theta) else new


class Adam:
    def __init__(self, params: dict, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.betas, self.eps = lr, betas, eps
        self.t = 0
        self.state: dict[str, dict] = {k: {} for k in params}

    def step(self) -> None:
        self.t += 1
        for k, p in self.params.items():
            if p.grad is None:
                continue
            p.data = adam_step(p.data, p.grad, self.state[k], self.lr, self.t, self.betas, self.eps)


def _clip_grads(params: dict, max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(np.abs(p.grad) ** 2)) for p in params.values() if p.grad is not None))
    if not math.isfinite(total):
        raise FloatingPointError("non-finite gradient norm")
    if max_norm and total > max_norm:
        scale = max_norm / total
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


# ---------------------------------------------------------------------------
# losses and evaluation
# ---------------------------------------------------------------------------


def batch_loss(model, batch: ScenarioBatch, params: SystemParams, objective: str, train: bool = False):
    """Forward a batch and return (loss tensor, sum-rate tensor, power tensor)."""
    out = model.forward(batch, params, train=train)
    sr = sum_rate_t(out.Z, out.W, params.noise_power)
    pw = power_t(out.W)
    if objective == "sr":
        return loss_sr(sr), sr, pw
    return loss_ee(sr, pw, params.circuit_power), sr, pw


def evaluate(model, batch: ScenarioBatch, params: SystemParams, objective: str = "sr", chunk: int = 1024) -> dict:
    """Inference-mode metrics over a dataset."""
    srs, pws = [], []
    with ad.no_grad():
        for start in range(0, len(batch), chunk):
            _, sr, pw = batch_loss(model, batch[start : start + chunk], params, objective, train=False)
            srs.append(sr.data)
            pws.append(pw.data)
    sr = np.concatenate(srs)
    pw = np.concatenate(pws)
    ee = sr / (pw + params.circuit_power)
    loss = loss_sr(sr) if objective == "sr" else loss_ee(sr, pw, params.circuit_power)
    return {"loss": loss, "SR": float(np.mean(sr)), "EE": float(np.mean(ee)), "sr": sr, "ee": ee}


def training_loss(model, batch: ScenarioBatch, params: SystemParams, objective: str, batch_size: int) -> float:
    """Mean minibatch loss with batch statistics, leaving running statistics untouched.

    This is the quantity the optimizer sees, so it is comparable before and
    after training (inference-mode loss at initialization reflects untrained
    running statistics instead).
    """
    saved = model.state_dict()
    losses = []
    with ad.no_grad():
        for start in range(0, len(batch), batch_size):
            loss, _, _ = batch_loss(model, batch[start : start + batch_size], params, objective, train=True)
            losses.append(float(loss.data))
    model.load_state_dict(saved)
    return float(np.mean(losses))


def split_dataset(batch: ScenarioBatch, split) -> tuple[ScenarioBatch, ScenarioBatch, ScenarioBatch]:
    n = len(batch)
    n_train = int(round(split[0] * n))
    n_val = int(round(split[1] * n))
    return batch[:n_train], batch[n_train : n_train + n_val], batch[n_train + n_val :]


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: object
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf
    initial_train_loss: float = math.nan
    initial_val_loss: float = math.nan
    status: str = "completed"  # "completed", "early_stopped" or "diverged"


def train(
    model: GnnModel | MlpModel,
    dataset: ScenarioBatch,
    config: TrainConfig,
    params: SystemParams | None = None,
    validation: ScenarioBatch | None = None,
) -> TrainResult:
    """Minimize the reciprocal-objective loss with Adam and keep the best validation state.

    When ``validation`` is omitted the dataset is split by ``config.split``
    and the first two parts are used for training and validation.
    """
    params = model.params if params is None else params
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if validation is None:
        train_set, validation, _ = split_dataset(dataset, config.split)
        if len(validation) == 0:
            validation = train_set
    else:
        train_set = dataset
    theta = model.parameters()
    opt = Adam(theta, lr=config.lr)
    rng = np.random.default_rng(config.seed)

    init_train = training_loss(model, train_set, params, config.objective, config.batch_size)
    init_val = evaluate(model, validation, params, config.objective)["loss"]
    result = TrainResult(model, initial_train_loss=init_train, initial_val_loss=init_val, best_val_loss=init_val)
    best_state = model.state_dict()
    stale = 0

    for epoch in range(1, config.epochs + 1):
        opt.lr = config.lr_at(epoch)
        order = rng.permutation(len(train_set))
        losses = []
        try:
            for start in range(0, len(order), config.batch_size):
                idx = np.sort(order[start : start + config.batch_size])
                loss, _, _ = batch_loss(model, train_set[idx], params, config.objective, train=True)
                if not np.isfinite(loss.data):
                    raise FloatingPointError(f"non-finite loss at epoch {epoch}")
                ad.zero_grad(theta.values())
                ad.backward(loss)
                _clip_grads(theta, config.grad_clip)
                opt.step()
                losses.append(float(loss.data))
        except FloatingPointError as exc:
            log.warning("training diverged: %s; restoring best state", exc)
            model.load_state_dict(best_state)
            result.status = "diverged"
            break

        val = evaluate(model, validation, params, config.objective)
        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_loss": val["loss"],
            "val_SR": val["SR"],
            "val_EE": val["EE"],
            "lr": opt.lr,
        }
        result.history.append(row)
        log.info("epoch %d train %.6g val %.6g SR %.4g", epoch, row["train_loss"], row["val_loss"], row["val_SR"])
        if val["loss"] < result.best_val_loss:
            result.best_val_loss = val["loss"]
            result.best_epoch = epoch
            best_state = model.state_dict()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                result.status = "early_stopped"
                break

    model.load_state_dict(best_state)
    return result


def write_history_csv(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        w.writeheader()
        for row in history:
            w.writerow({k: row[k] for k in HISTORY_FIELDS})


def config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["milestones"] = list(d["milestones"])
    d["split"] = list(d["split"])
    return d
