"""Complex-valued graph layers and the staged placement/RIS/beamforming model.

Users are the graph nodes of a fully connected graph with self-loops. Node
features are arrays of shape (B, K, D), so every layer is written once for a
whole batch and is equivariant to permutations of the K axis.
"""

from __future__ import annotations

import io
import json
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import CTensor
from .beamform import hzm_t, rzf_t
from .channel import effective_channel_t
from .feasible import (
    normalize_coefficients,
    normalize_power,
    raw_power,
    raw_to_spacing,
    spacing_to_positions,
)
from .objective import Beamformer, RISConfig, Solution
from .scenario import PAPlacement, Scenario, ScenarioBatch, SystemParams, fixed_pa_placement

CHECKPOINT_VERSION = 1
BN_EPS = 1e-5
BN_MOMENTUM = 0.1

__all__ = [
    "LayerSpec",
    "ModelConfig",
    "ForwardOutput",
    "CGCL",
    "CGAL",
    "CFL",
    "GnnModel",
    "MlpModel",
    "init_params",
    "full_forward",
    "mlp_forward",
    "pagnn",
    "risgnn",
    "beamgnn",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "CGCL", "CGAL" or "CFL"
    in_dim: int
    out_dim: int
    hidden: int | None = None  # CGCL message width
    batch_norm: bool = False  # CFL only
    residual: bool = True  # CGAL only
    activation: bool = True  # complex ReLU on the layer output
    heads: int = 1  # CGAL only
    slope: float = 0.2  # CGAL LeakyReLU negative slope

    def __post_init__(self):
        if self.kind not in ("CGCL", "CGAL", "CFL"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1 or (self.hidden is not None and self.hidden < 1):
            raise ValueError("layer dimensions must be positive")


def _check_table(specs: list[LayerSpec]) -> None:
    for prev, cur in zip(specs, specs[1:]):
        if prev.out_dim != cur.in_dim:
            raise ValueError(f"layer input {cur.in_dim} does not match previous output {prev.out_dim}")


# ---------------------------------------------------------------------------
# parameter initialization
# ---------------------------------------------------------------------------


def _kaiming_complex(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    # Re and Im each carry half of the 2 / fan_in variance
    std = np.sqrt(1.0 / fan_in)
    return std * rng.standard_normal(shape) + 1j * std * rng.standard_normal(shape)


def _kaiming_real(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    return np.sqrt(2.0 / fan_in) * rng.standard_normal(shape)


def init_params(spec: LayerSpec, seed_or_rng) -> "OrderedDict[str, np.ndarray]":
    """Kaiming-normal complex weights and zero biases for one layer."""
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else np.random.default_rng(seed_or_rng)
    D, Do = spec.in_dim, spec.out_dim
    p: OrderedDict[str, np.ndarray] = OrderedDict()
    zeros = lambda n: np.zeros(n, dtype=complex)  # noqa: E731
    if spec.kind == "CGCL":
        J = spec.hidden or Do
        p["q_w_self"] = _kaiming_complex(rng, 2 * D, (D, J))
        p["q_w_nbr"] = _kaiming_complex(rng, 2 * D, (D, J))
        p["q_b1"] = zeros(J)
        p["q_w2"] = _kaiming_complex(rng, J, (J, J))
        p["q_b2"] = zeros(J)
        p["f_w_self"] = _kaiming_complex(rng, D + J, (D, J))
        p["f_w_msg"] = _kaiming_complex(rng, D + J, (J, J))
        p["f_b1"] = zeros(J)
        p["f_w2"] = _kaiming_complex(rng, J, (J, Do))
        p["f_b2"] = zeros(Do)
    elif spec.kind == "CGAL":
        for h in range(spec.heads):
            p[f"w{h}"] = _kaiming_complex(rng, D, (D, Do))
            p[f"a_self{h}"] = _kaiming_complex(rng, 2 * Do, (Do, 1))
            p[f"a_nbr{h}"] = _kaiming_complex(rng, 2 * Do, (Do, 1))
        if spec.residual:
            p["w_res"] = _kaiming_complex(rng, D, (D, Do))
    else:
        p["w"] = _kaiming_complex(rng, D, (D, Do))
        p["b"] = zeros(Do)
        if spec.batch_norm:
            p["bn_gamma"] = np.ones(Do, dtype=complex)
            p["bn_beta"] = zeros(Do)
    return p


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class _Layer:
    def __init__(self, spec: LayerSpec, rng):
        self.spec = spec
        self.params: OrderedDict[str, CTensor] = OrderedDict(
            (k, CTensor(v, requires_grad=True)) for k, v in init_params(spec, rng).items()
        )
        self.buffers: OrderedDict[str, np.ndarray] = OrderedDict()

    def _out(self, v: CTensor) -> CTensor:
        return ad.relu_c(v) if self.spec.activation else v


class CGCL(_Layer):
    """Graph convolution: pairwise processor, sum aggregation with self-loop, combiner."""

    def __call__(self, V: CTensor, train: bool = False) -> CTensor:
        p = self.params
        B, K, _ = V.shape
        J = p["q_b1"].shape[0]
        own = ad.matmul(V, p["q_w_self"]).reshape(B, K, 1, J)
        nbr = ad.matmul(V, p["q_w_nbr"]).reshape(B, 1, K, J)
        msg = ad.relu_c(own + nbr + p["q_b1"])  # msg[:, k, k'] from node k' to node k
        # the processor's second affine map commutes with the neighbour sum
        agg = ad.matmul(ad.sum(msg, axis=2), p["q_w2"]) + K * p["q_b2"]
        hid = ad.relu_c(ad.matmul(V, p["f_w_self"]) + ad.matmul(agg, p["f_w_msg"]) + p["f_b1"])
        return self._out(ad.matmul(hid, p["f_w2"]) + p["f_b2"])


class CGAL(_Layer):
    """Graph attention with real LeakyReLU scores and a residual projection."""

    def attention(self, Zt: CTensor, head: int = 0) -> CTensor:
        """Row-stochastic (B, K, K) attention matrix from transformed features."""
        p = self.params
        s_self = ad.matmul(Zt, p[f"a_self{head}"])  # (B, K, 1)
        s_nbr = ad.matmul(Zt, p[f"a_nbr{head}"])
        logits = ad.real(s_self + ad.transpose(s_nbr, (0, 2, 1)))
        return ad.softmax(ad.leaky_relu_real(logits, self.spec.slope), axis=-1)

    def __call__(self, V: CTensor, train: bool = False) -> CTensor:
        p = self.params
        heads = self.spec.heads
        out = None
        for h in range(heads):
            Zt = ad.matmul(V, p[f"w{h}"])
            term = ad.relu_c(ad.matmul(self.attention(Zt, h), Zt))
            out = term if out is None else out + term
        if heads > 1:
            out = out * (1.0 / heads)
        if self.spec.residual:
            out = out + ad.matmul(V, p["w_res"])
        return out


class CFL(_Layer):
    """Node-wise complex affine map with a bias row shared by all nodes.

    Batch normalization standardizes real and imaginary parts separately,
    with statistics pooled over the batch and node axes.
    """

    def __init__(self, spec: LayerSpec, rng):
        super().__init__(spec, rng)
        if spec.batch_norm:
            d = spec.out_dim
            self.buffers["mean_re"] = np.zeros(d)
            self.buffers["mean_im"] = np.zeros(d)
            self.buffers["var_re"] = np.ones(d)
            self.buffers["var_im"] = np.ones(d)

    def _standardize(self, part: CTensor, tag: str, train: bool) -> CTensor:
        if train:
            mu = ad.mean(part, axis=(0, 1))
            centered = part - mu
            var = ad.mean(centered * centered, axis=(0, 1))
            b = self.buffers
            b[f"mean_{tag}"] = (1 - BN_MOMENTUM) * b[f"mean_{tag}"] + BN_MOMENTUM * mu.data
            b[f"var_{tag}"] = (1 - BN_MOMENTUM) * b[f"var_{tag}"] + BN_MOMENTUM * var.data
            return centered / ad.sqrt(var + BN_EPS)
        b = self.buffers
        return (part - b[f"mean_{tag}"]) * (1.0 / np.sqrt(b[f"var_{tag}"] + BN_EPS))

    def __call__(self, V: CTensor, train: bool = False) -> CTensor:
        p = self.params
        y = ad.matmul(V, p["w"]) + p["b"]
        if self.spec.batch_norm:
            re = self._standardize(ad.real(y), "re", train)
            im = self._standardize(ad.imag(y), "im", train)
            y = p["bn_gamma"] * (re + 1j * im) + p["bn_beta"]
        return self._out(y)


_LAYER_TYPES = {"CGCL": CGCL, "CGAL": CGAL, "CFL": CFL}


class _Stack:
    def __init__(self, specs: list[LayerSpec], rng):
        _check_table(specs)
        self.specs = specs
        self.layers = [_LAYER_TYPES[s.kind](s, rng) for s in specs]

    def __call__(self, V: CTensor, train: bool = False) -> CTensor:
        for layer in self.layers:
            V = layer(V, train)
        return V


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass
class ModelConfig:
    hidden: int = 64
    n_conv: int = 3  # CGCLs per graph-level stage
    n_attn: int = 3  # CGALs per beam branch
    n_fc: int = 5  # CFLs per beam branch
    heads: int = 1
    leaky_slope: float = 0.2
    learn_placement: bool = True  # False gives the fixed-PA configuration
    beam_head: str = "hzm"  # "hzm" (three stages) or "rzf" (two-stage model)
    seed: int = 0

    def __post_init__(self):
        if self.beam_head not in ("hzm", "rzf"):
            raise ValueError(f"beam_head must be 'hzm' or 'rzf', got {self.beam_head!r}")
        if self.hidden < 2 or self.n_conv < 1 or self.n_attn < 1 or self.n_fc < 2 or self.heads < 1:
            raise ValueError("invalid model dimensions")


def _conv_specs(in_dim: int, out_dim: int, cfg: ModelConfig) -> list[LayerSpec]:
    h = cfg.hidden
    dims = [in_dim] + [h] * (cfg.n_conv - 1) + [out_dim]
    last = cfg.n_conv - 1
    return [LayerSpec("CGCL", dims[i], dims[i + 1], hidden=h, activation=i < last) for i in range(cfg.n_conv)]


def _beam_specs(in_dim: int, cfg: ModelConfig) -> list[LayerSpec]:
    h = cfg.hidden
    specs = [
        LayerSpec("CGAL", in_dim if i == 0 else h, h, residual=True, heads=cfg.heads, slope=cfg.leaky_slope)
        for i in range(cfg.n_attn)
    ]
    fc_dims = [h] * (cfg.n_fc - 1) + [max(h // 2, 1), 1]
    for i in range(cfg.n_fc):
        last = i == cfg.n_fc - 1
        specs.append(LayerSpec("CFL", fc_dims[i], fc_dims[i + 1], batch_norm=not last, activation=not last))
    return specs


@dataclass
class ForwardOutput:
    x: CTensor  # (B, N, M) PA positions
    coeffs: CTensor | None  # (B, L) unit-modulus RIS coefficients
    Z: CTensor  # (B, K, N) effective channel rows fed to the beam stage
    W: CTensor  # (B, N, K) beamformers
    alpha: CTensor | None = None
    power: CTensor | None = None
    Z_stage2: CTensor | None = None

    def solutions(self) -> list[Solution]:
        out = []
        for b in range(self.x.shape[0]):
            phases = np.zeros(0) if self.coeffs is None else np.angle(self.coeffs.data[b])
            out.append(Solution(PAPlacement(self.x.data[b].copy()), RISConfig(phases), Beamformer(self.W.data[b].copy())))
        return out


def _position_features(batch: ScenarioBatch, params: SystemParams) -> np.ndarray:
    u = batch.user_positions
    return np.stack([u[..., 0] / params.length, u[..., 1] / params.width, u[..., 2] / params.height], axis=-1)


def channel_reference(params: SystemParams) -> float:
    """Gain of a single PA directly above its user; fixed input scale for channel features."""
    return float(np.sqrt(params.eta) / params.height)


class _BaseModel:
    params: SystemParams

    def parameters(self) -> "OrderedDict[str, CTensor]":
        raise NotImplementedError

    def buffers(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict()

    def n_parameters(self) -> int:
        return int(sum(t.data.size for t in self.parameters().values()))

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        sd = OrderedDict((k, t.data.copy()) for k, t in self.parameters().items())
        for k, v in self.buffers().items():
            sd["buffer:" + k] = v.copy()
        return sd

    def load_state_dict(self, sd) -> None:
        params = self.parameters()
        bufs = self._buffer_slots()
        expected = set(params) | {"buffer:" + k for k in bufs}
        if set(sd) != expected:
            missing = sorted(expected - set(sd))
            extra = sorted(set(sd) - expected)
            raise ValueError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for k, t in params.items():
            if sd[k].shape != t.data.shape:
                raise ValueError(f"shape mismatch for {k}: {sd[k].shape} vs {t.data.shape}")
            t.data = np.array(sd[k], dtype=t.data.dtype, copy=True)
        for k, (owner, name) in bufs.items():
            v = sd["buffer:" + k]
            if v.shape != owner[name].shape:
                raise ValueError(f"shape mismatch for buffer {k}")
            owner[name] = np.array(v, dtype=float, copy=True)

    def _buffer_slots(self) -> dict:
        return {}

    def _check_params(self, params: SystemParams) -> None:
        mine, other = self.params.to_dict(), params.to_dict()
        mine.pop("n_users")
        other.pop("n_users")
        if mine != other:
            raise ValueError("system parameters differ from the ones the model was built for (only K may change)")


class GnnModel(_BaseModel):
    """Placement (stage 1), RIS phase (stage 2) and beam (stage 3) graph networks.

    ``params.n_ris == 0`` drops stage 2 (PA-only system);
    ``config.learn_placement=False`` replaces stage 1 by the fixed centered
    placement; ``config.beam_head="rzf"`` replaces stage 3 by closed-form
    regularized ZF beams with uniform power.
    """

    def __init__(self, params: SystemParams, config: ModelConfig | None = None):
        self.params = params
        self.config = config = config or ModelConfig()
        rng = np.random.default_rng(config.seed)
        N, M, L = params.n_waveguides, params.n_pas, params.n_ris
        self.stage1 = _Stack(_conv_specs(3, N * M, config), rng) if config.learn_placement else None
        self.stage2 = _Stack(_conv_specs(N, L, config), rng) if params.use_ris else None
        if config.beam_head == "hzm":
            self.stage3a = _Stack(_beam_specs(N, config), rng)
            self.stage3b = _Stack(_beam_specs(N, config), rng)
        else:
            self.stage3a = self.stage3b = None

    @property
    def stages(self) -> "OrderedDict[str, _Stack]":
        names = ("stage1", "stage2", "stage3a", "stage3b")
        return OrderedDict((n, getattr(self, n)) for n in names if getattr(self, n) is not None)

    def layer_table(self) -> list[tuple[str, LayerSpec]]:
        return [(name, spec) for name, stack in self.stages.items() for spec in stack.specs]

    def parameters(self) -> "OrderedDict[str, CTensor]":
        out: OrderedDict[str, CTensor] = OrderedDict()
        for name, stack in self.stages.items():
            for i, layer in enumerate(stack.layers):
                for k, t in layer.params.items():
                    out[f"{name}.{i}.{k}"] = t
        return out

    def _buffer_slots(self) -> dict:
        slots = {}
        for name, stack in self.stages.items():
            for i, layer in enumerate(stack.layers):
                for k in layer.buffers:
                    slots[f"{name}.{i}.{k}"] = (layer.buffers, k)
        return slots

    def buffers(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, owner[name]) for k, (owner, name) in self._buffer_slots().items())

    # -- stages --------------------------------------------------------------
    def placement(self, batch: ScenarioBatch, params: SystemParams, train: bool = False) -> CTensor:
        B = len(batch)
        N, M = params.n_waveguides, params.n_pas
        if self.stage1 is None:
            return ad.const(np.broadcast_to(fixed_pa_placement(params).x, (B, N, M)).copy())
        V = self.stage1(ad.const(_position_features(batch, params).astype(complex)), train)
        raw = ad.mean(ad.real(V), axis=1).reshape(B, N, M)
        return spacing_to_positions(raw_to_spacing(raw, params), params)

    def ris(self, Z2: CTensor, params: SystemParams, train: bool = False) -> CTensor:
        V = self.stage2(Z2 * (1.0 / channel_reference(params)), train)
        return normalize_coefficients(ad.mean(V, axis=1))

    def beams(self, Z: CTensor, params: SystemParams, train: bool = False):
        B, K, N = Z.shape
        if self.stage3a is None:
            share = np.full((1, K), params.power_budget / K)
            return None, None, rzf_t(Z, share, share, params.noise_power)
        feats = Z * (1.0 / channel_reference(params))
        alpha = ad.sigmoid_real(ad.real(self.stage3a(feats, train)).reshape(B, K))
        p_raw = ad.real(self.stage3b(feats, train)).reshape(B, K)
        power = normalize_power(raw_power(p_raw, params), params)
        return alpha, power, hzm_t(alpha, power, Z)

    def forward_from_placement(
        self, x: CTensor, batch: ScenarioBatch, params: SystemParams, train: bool = False
    ) -> ForwardOutput:
        Z2 = coeffs = None
        if self.stage2 is not None:
            Z2 = effective_channel_t(x, None, batch, params)
            coeffs = self.ris(Z2, params, train)
        Z = effective_channel_t(x, coeffs, batch, params)
        alpha, power, W = self.beams(Z, params, train)
        return ForwardOutput(x, coeffs, Z, W, alpha, power, Z2)

    def forward(self, batch: ScenarioBatch | Scenario, params: SystemParams | None = None, train: bool = False) -> ForwardOutput:
        params = self.params if params is None else params
        self._check_params(params)
        batch = ScenarioBatch.of(batch)
        x = self.placement(batch, params, train)
        return self.forward_from_placement(x, batch, params, train)


def pagnn(user_positions, model: GnnModel, params: SystemParams) -> PAPlacement:
    """Stage 1 alone: PA placement from user positions of shape (K, 3)."""
    u = np.asarray(user_positions, dtype=float)
    batch = ScenarioBatch(u[None], np.zeros((1, 0, 0, 0), complex), np.zeros((1, u.shape[0], 0), complex))
    return PAPlacement(model.placement(batch, params).data[0])


def risgnn(Z2, model: GnnModel, params: SystemParams) -> RISConfig:
    """Stage 2 alone: RIS phases from stage-2 effective channel rows (K, N)."""
    c = model.ris(ad.const(np.asarray(Z2, dtype=complex)[None]), params)
    return RISConfig.from_coefficients(c.data[0])


def beamgnn(Z, model: GnnModel, params: SystemParams):
    """Stage 3 alone: HZM mixing coefficients and powers from rows (K, N)."""
    from .beamform import HzmParams

    alpha, power, _ = model.beams(ad.const(np.asarray(Z, dtype=complex)[None]), params)
    return HzmParams(alpha.data[0], power.data[0])


def full_forward(scenario: Scenario, model: "GnnModel | MlpModel", params: SystemParams) -> Solution:
    return model.forward(ScenarioBatch.of(scenario), params).solutions()[0]


# ---------------------------------------------------------------------------
# MLP baseline
# ---------------------------------------------------------------------------


class MlpModel(_BaseModel):
    """Real feed-forward network from flattened user positions to every head.

    The input width is tied to the K it was built for, so it cannot be
    evaluated at other user counts.
    """

    def __init__(self, params: SystemParams, hidden: int = 64, n_layers: int = 4, seed: int = 0):
        self.params = params
        self.hidden, self.n_layers, self.seed = hidden, n_layers, seed
        rng = np.random.default_rng(seed)
        N, M, L, K = params.n_waveguides, params.n_pas, params.n_ris, params.n_users
        self.k_train = K
        self.out_dims = OrderedDict(spacing=N * M, phase=2 * L, alpha=K, power=K)
        dims = [3 * K] + [hidden] * (n_layers - 1) + [sum(self.out_dims.values())]
        self._params: OrderedDict[str, CTensor] = OrderedDict()
        for i in range(n_layers):
            self._params[f"w{i}"] = CTensor(_kaiming_real(rng, dims[i], (dims[i], dims[i + 1])), requires_grad=True)
            self._params[f"b{i}"] = CTensor(np.zeros(dims[i + 1]), requires_grad=True)

    def parameters(self):
        return self._params

    def forward(self, batch, params: SystemParams | None = None, train: bool = False) -> ForwardOutput:
        params = self.params if params is None else params
        batch = ScenarioBatch.of(batch)
        if batch.n_users != self.k_train or params.n_users != self.k_train:
            raise ValueError(f"MLP was built for K={self.k_train}, got K={batch.n_users}")
        self._check_params(params)
        B, K = len(batch), self.k_train
        N, M, L = params.n_waveguides, params.n_pas, params.n_ris
        h = ad.const(_position_features(batch, params).reshape(B, 3 * K))
        for i in range(self.n_layers):
            h = ad.matmul(h, self._params[f"w{i}"]) + self._params[f"b{i}"]
            if i < self.n_layers - 1:
                h = ad.relu_c(h)
        cuts = np.cumsum(list(self.out_dims.values()))
        sp, ph, al, pw = h[:, : cuts[0]], h[:, cuts[0] : cuts[1]], h[:, cuts[1] : cuts[2]], h[:, cuts[2] :]
        x = spacing_to_positions(raw_to_spacing(sp.reshape(B, N, M), params), params)
        coeffs = None
        if params.use_ris:
            coeffs = normalize_coefficients(ph[:, :L] + 1j * ph[:, L:])
        Z = effective_channel_t(x, coeffs, batch, params)
        alpha = ad.sigmoid_real(al)
        power = normalize_power(raw_power(pw, params), params)
        return ForwardOutput(x, coeffs, Z, hzm_t(alpha, power, Z), alpha, power)


def mlp_forward(scenario: Scenario, model: MlpModel, params: SystemParams) -> Solution:
    return model.forward(ScenarioBatch.of(scenario), params).solutions()[0]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: _BaseModel, path) -> None:
    """Write parameters, buffers and a JSON header into one ``.npz`` container."""
    if isinstance(model, GnnModel):
        header = {
            "kind": "gnn",
            "config": asdict(model.config),
            "layers": [[stage, asdict(spec)] for stage, spec in model.layer_table()],
        }
    else:
        header = {"kind": "mlp", "config": {"hidden": model.hidden, "n_layers": model.n_layers, "seed": model.seed}}
    header.update(version=CHECKPOINT_VERSION, params=model.params.to_dict())
    arrays = {f"t:{k}": v for k, v in model.state_dict().items()}
    buf = io.BytesIO()
    np.savez(buf, __header__=np.array(json.dumps(header, sort_keys=True)), **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> _BaseModel:
    with np.load(path) as z:
        header = json.loads(str(z["__header__"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        params = SystemParams.from_dict(header["params"])
        if header["kind"] == "gnn":
            model: _BaseModel = GnnModel(params, ModelConfig(**header["config"]))
            stored = [[s, LayerSpec(**d)] for s, d in header["layers"]]
            if stored != [list(t) for t in model.layer_table()]:
                raise ValueError("checkpoint layer table does not match the rebuilt model")
        else:
            model = MlpModel(params, **header["config"])
        sd = OrderedDict((k[2:], z[k]) for k in z.files if k.startswith("t:"))
    model.load_state_dict(sd)
    return model
