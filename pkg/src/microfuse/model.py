"""Expert-fusion network and the MLP baselines.

Both model families expose the same surface to the training loop:
``forward(x_p, x_b, train, rng) -> ForwardTrace``, ``backward(...)``,
``named_parameters()``, ``zero_grad()`` and ``representation(trace)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit, softmax

from .nn import GELU, ConfigError, Dropout, Linear, Sequential, ShapeError, mlp_block

EXPERTS = ("protein", "genome", "agreement", "conflict")
BASELINE_KINDS = ("prostt5-only", "bacformer-only", "concat-mlp")


@dataclass(frozen=True)
class FusionConfig:
    protein_dim: int = 3072
    genome_dim: int = 960
    latent_dim: int = 512
    dropout: float = 0.20
    # 0 means "use latent_dim".
    expert_hidden_dim: int = 0
    router_hidden_dim: int = 0
    classifier_hidden_dim: int = 0
    experts: tuple[str, ...] = EXPERTS
    baseline_hidden: tuple[int, ...] = (1024, 256)

    def __post_init__(self):
        dims = (self.protein_dim, self.genome_dim, self.latent_dim)
        if min(dims) <= 0 or min(self.expert_hidden_dim, self.router_hidden_dim,
                                 self.classifier_hidden_dim) < 0:
            raise ConfigError(f"dimensions must be positive: {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        unknown = set(self.experts) - set(EXPERTS)
        if unknown or not self.experts or len(set(self.experts)) != len(self.experts):
            raise ConfigError(f"bad expert list {self.experts}")
        if any(h <= 0 for h in self.baseline_hidden):
            raise ConfigError(f"baseline hidden sizes must be positive: {self.baseline_hidden}")

    @property
    def expert_hidden(self) -> int:
        return self.expert_hidden_dim or self.latent_dim

    @property
    def router_hidden(self) -> int:
        return self.router_hidden_dim or self.latent_dim

    @property
    def classifier_hidden(self) -> int:
        return self.classifier_hidden_dim or self.latent_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["experts"] = list(self.experts)
        d["baseline_hidden"] = list(self.baseline_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FusionConfig":
        d = dict(d)
        d["experts"] = tuple(d.get("experts", EXPERTS))
        d["baseline_hidden"] = tuple(d.get("baseline_hidden", (1024, 256)))
        return cls(**d)


@dataclass
class ForwardTrace:
    logit: np.ndarray
    prob: np.ndarray
    z_p: np.ndarray | None = None
    z_b: np.ndarray | None = None
    expert_outputs: dict[str, np.ndarray] = field(default_factory=dict)
    weights: np.ndarray | None = None
    h: np.ndarray | None = None


def _check_inputs(x_p: np.ndarray, x_b: np.ndarray, protein_dim: int, genome_dim: int) -> None:
    if x_p.ndim != 2 or x_p.shape[1] != protein_dim:
        raise ShapeError(f"protein input must be (B, {protein_dim}), got {x_p.shape}")
    if x_b.ndim != 2 or x_b.shape[1] != genome_dim:
        raise ShapeError(f"genome input must be (B, {genome_dim}), got {x_b.shape}")
    if x_p.shape[0] != x_b.shape[0]:
        raise ShapeError(f"row counts differ: protein {x_p.shape[0]} vs genome {x_b.shape[0]}")


class _Model:
    kind = "model"

    def __init__(self) -> None:
        self.blocks: dict[str, Sequential] = {}

    def named_parameters(self):
        for name, block in self.blocks.items():
            yield from block.named_parameters(name + ".")

    def parameters(self) -> dict[str, np.ndarray]:
        return {name: p for name, p, _ in self.named_parameters()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {name: g for name, _, g in self.named_parameters()}

    def zero_grad(self) -> None:
        for block in self.blocks.values():
            block.zero_grad()

    def reset_parameters(self, seed: int) -> None:
        self.seed = int(seed)
        for name, block in self.blocks.items():
            block.reset_parameters(seed, name + ".")

    def load_parameters(self, params: dict[str, np.ndarray]) -> None:
        own = self.parameters()
        if set(own) != set(params):
            missing = sorted(set(own) - set(params))
            extra = sorted(set(params) - set(own))
            raise ShapeError(f"parameter names differ; missing={missing} unexpected={extra}")
        for name, value in params.items():
            if own[name].shape != value.shape:
                raise ShapeError(f"{name}: stored shape {value.shape} != model shape {own[name].shape}")
            own[name][...] = value

    def copy_parameters(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.parameters().items()}


class FusionModel(_Model):
    """Two projections, up to four experts, a soft router and a classifier head."""

    kind = "microfuse"

    def __init__(self, config: FusionConfig, seed: int = 0) -> None:
        super().__init__()
        self.config = config
        c = config
        d = c.latent_dim
        self.blocks["proj_p"] = mlp_block(c.protein_dim, d, c.dropout)
        self.blocks["proj_b"] = mlp_block(c.genome_dim, d, c.dropout)
        self.blocks["proj_p"].layers[0].need_input_grad = False
        self.blocks["proj_b"].layers[0].need_input_grad = False
        for name in c.experts:
            in_dim = d if name in ("protein", "genome") else 2 * d
            self.blocks["expert_" + name] = Sequential(
                Linear(in_dim, c.expert_hidden), GELU(), Dropout(c.dropout), Linear(c.expert_hidden, d))
        self.blocks["router"] = Sequential(
            Linear(4 * d, c.router_hidden), GELU(), Linear(c.router_hidden, len(c.experts)))
        self.blocks["head"] = Sequential(
            Linear(d, c.classifier_hidden), GELU(), Linear(c.classifier_hidden, 1))
        self.reset_parameters(seed)
        self._cache: dict = {}

    @property
    def experts(self) -> tuple[str, ...]:
        return self.config.experts

    def set_input_grad(self, enabled: bool) -> None:
        """Toggle gradients w.r.t. the raw embeddings (only needed for checks)."""
        self.blocks["proj_p"].layers[0].need_input_grad = enabled
        self.blocks["proj_b"].layers[0].need_input_grad = enabled

    def project(self, x_p, x_b, train=False, rng=None):
        _check_inputs(x_p, x_b, self.config.protein_dim, self.config.genome_dim)
        z_p = self.blocks["proj_p"].forward(x_p, train, rng)
        z_b = self.blocks["proj_b"].forward(x_b, train, rng)
        return z_p, z_b

    @staticmethod
    def agreement_features(z_p, z_b):
        prod = z_p * z_b
        return np.concatenate([prod, np.abs(prod)], axis=1)

    @staticmethod
    def conflict_features(z_p, z_b):
        diff = z_p - z_b
        return np.concatenate([np.abs(diff), diff], axis=1)

    @staticmethod
    def router_features(z_p, z_b):
        return np.concatenate([z_p, z_b, np.abs(z_p - z_b), z_p * z_b], axis=1)

    def expert_forward(self, z_p, z_b, train=False, rng=None) -> dict[str, np.ndarray]:
        inputs = {"protein": z_p, "genome": z_b}
        if "agreement" in self.experts:
            inputs["agreement"] = self.agreement_features(z_p, z_b)
        if "conflict" in self.experts:
            inputs["conflict"] = self.conflict_features(z_p, z_b)
        return {name: self.blocks["expert_" + name].forward(inputs[name], train, rng)
                for name in self.experts}

    def route(self, z_p, z_b):
        return softmax(self.blocks["router"].forward(self.router_features(z_p, z_b)), axis=1)

    def fuse_and_classify(self, expert_outputs: dict[str, np.ndarray], weights: np.ndarray):
        h = sum(weights[:, [k]] * expert_outputs[name] for k, name in enumerate(self.experts))
        logit = self.blocks["head"].forward(h)[:, 0]
        return h, logit, expit(logit)

    def forward(self, x_p, x_b, train=False, rng=None) -> ForwardTrace:
        z_p, z_b = self.project(x_p, x_b, train, rng)
        outs = self.expert_forward(z_p, z_b, train, rng)
        w = self.route(z_p, z_b)
        h, logit, prob = self.fuse_and_classify(outs, w)
        self._cache = {"z_p": z_p, "z_b": z_b, "outs": outs, "w": w}
        return ForwardTrace(logit=logit, prob=prob, z_p=z_p, z_b=z_b,
                            expert_outputs=outs, weights=w, h=h)

    def backward(self, d_logit, d_h=None, d_zp=None, d_zb=None):
        """Accumulate parameter gradients.  Extra gradients on ``h``, ``z_p``
        and ``z_b`` (from the auxiliary losses) are added at their nodes.
        Returns input gradients ``(d_xp, d_xb)`` when enabled, else ``None``."""
        c = self._cache
        z_p, z_b, outs, w = c["z_p"], c["z_b"], c["outs"], c["w"]
        dh = self.blocks["head"].backward(np.asarray(d_logit, dtype=np.float64).reshape(-1, 1))
        if d_h is not None:
            dh = dh + d_h

        dw = np.stack([np.sum(dh * outs[name], axis=1) for name in self.experts], axis=1)
        dr = w * (dw - np.sum(w * dw, axis=1, keepdims=True))
        dfeat = self.blocks["router"].backward(dr)
        d = self.config.latent_dim
        diff = z_p - z_b
        prod = z_p * z_b
        dzp = dfeat[:, :d].copy()
        dzb = dfeat[:, d:2 * d].copy()
        ddiff = dfeat[:, 2 * d:3 * d] * np.sign(diff)
        dprod = dfeat[:, 3 * d:]

        for k, name in enumerate(self.experts):
            dx = self.blocks["expert_" + name].backward(w[:, [k]] * dh)
            if name == "protein":
                dzp += dx
            elif name == "genome":
                dzb += dx
            elif name == "agreement":
                dprod = dprod + dx[:, :d] + dx[:, d:] * np.sign(prod)
            else:
                ddiff = ddiff + dx[:, :d] * np.sign(diff) + dx[:, d:]
        dzp += ddiff + dprod * z_b
        dzb += -ddiff + dprod * z_p
        if d_zp is not None:
            dzp += d_zp
        if d_zb is not None:
            dzb += d_zb
        dxp = self.blocks["proj_p"].backward(dzp)
        dxb = self.blocks["proj_b"].backward(dzb)
        if dxp is None:
            return None
        return dxp, dxb

    def representation(self, trace: ForwardTrace) -> np.ndarray:
        return trace.h


class BaselineModel(_Model):
    """MLP classifier over one modality or the concatenation of both."""

    def __init__(self, kind: str, config: FusionConfig, seed: int = 0) -> None:
        super().__init__()
        if kind not in BASELINE_KINDS:
            raise ConfigError(f"unknown baseline kind {kind!r}; expected one of {BASELINE_KINDS}")
        self.kind = kind
        self.config = config
        in_dim = {"prostt5-only": config.protein_dim,
                  "bacformer-only": config.genome_dim,
                  "concat-mlp": config.protein_dim + config.genome_dim}[kind]
        layers = []
        for width in config.baseline_hidden:
            layers += [Linear(in_dim, width), GELU(), Dropout(config.dropout)]
            in_dim = width
        self.blocks["mlp"] = Sequential(*layers)
        self.blocks["out"] = Sequential(Linear(in_dim, 1))
        self.blocks["mlp"].layers[0].need_input_grad = False
        self.reset_parameters(seed)

    def set_input_grad(self, enabled: bool) -> None:
        self.blocks["mlp"].layers[0].need_input_grad = enabled

    def _select(self, x_p, x_b):
        _check_inputs(x_p, x_b, self.config.protein_dim, self.config.genome_dim)
        if self.kind == "prostt5-only":
            return x_p
        if self.kind == "bacformer-only":
            return x_b
        return np.concatenate([x_p, x_b], axis=1)

    def forward(self, x_p, x_b, train=False, rng=None) -> ForwardTrace:
        hidden = self.blocks["mlp"].forward(self._select(x_p, x_b), train, rng)
        logit = self.blocks["out"].forward(hidden)[:, 0]
        return ForwardTrace(logit=logit, prob=expit(logit), h=hidden)

    def backward(self, d_logit, d_h=None, d_zp=None, d_zb=None):
        dh = self.blocks["out"].backward(np.asarray(d_logit, dtype=np.float64).reshape(-1, 1))
        if d_h is not None:
            dh = dh + d_h
        dx = self.blocks["mlp"].backward(dh)
        if dx is None:
            return None
        p = self.config.protein_dim
        zeros_p = np.zeros((dx.shape[0], p))
        zeros_b = np.zeros((dx.shape[0], self.config.genome_dim))
        if self.kind == "prostt5-only":
            return dx, zeros_b
        if self.kind == "bacformer-only":
            return zeros_p, dx
        return dx[:, :p], dx[:, p:]

    def representation(self, trace: ForwardTrace) -> np.ndarray:
        return trace.h


def build_baseline(kind: str, config: FusionConfig, seed: int = 0) -> BaselineModel:
    return BaselineModel(kind, config, seed)


def build_model(kind: str, config: FusionConfig, seed: int = 0):
    if kind == "microfuse":
        return FusionModel(config, seed)
    return build_baseline(kind, config, seed)
