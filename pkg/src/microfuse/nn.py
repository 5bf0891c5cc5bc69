"""Dense float64 layers with hand-written backward passes, AdamW, and a
finite-difference gradient checker.

Matrices are plain 2-D ``numpy.float64`` arrays (row = example).  Every layer
caches what it needs during ``forward`` and consumes it in ``backward``;
parameter gradients accumulate into ``layer.grads`` until ``zero_grad``.
"""

from __future__ import annotations

import hashlib
import math
from typing import Callable, Iterable, Iterator

import numpy as np
from scipy.special import erf

DTYPE = np.float64
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def substream(seed: int, *names) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, *names)``.

    Streams with different names are independent, and a given name always
    yields the same draws regardless of what else was drawn before it.
    """
    digest = hashlib.blake2b(repr((int(seed),) + tuple(names)).encode(), digest_size=16).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=DTYPE)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


class Layer:
    """Base class: named parameters plus matching gradient buffers."""

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        # First layer of a network may skip the (unused) input gradient.
        self.need_input_grad = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
        for key, value in self.params.items():
            yield prefix + key, value, self.grads[key]

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def reset_parameters(self, seed: int, prefix: str) -> None:
        pass

    def forward(self, x: np.ndarray, train: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Linear(Layer):
    def __init__(self, in_dim: int, out_dim: int) -> None:
        super().__init__()
        if in_dim <= 0 or out_dim <= 0:
            raise ConfigError(f"Linear dims must be positive, got {in_dim}->{out_dim}")
        self.in_dim, self.out_dim = in_dim, out_dim
        self.params = {"weight": np.zeros((out_dim, in_dim), DTYPE), "bias": np.zeros(out_dim, DTYPE)}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._x: np.ndarray | None = None

    @property
    def weight(self) -> np.ndarray:
        return self.params["weight"]

    @property
    def bias(self) -> np.ndarray:
        return self.params["bias"]

    def reset_parameters(self, seed: int, prefix: str) -> None:
        # Kaiming-uniform, fan-in mode, GELU treated like ReLU (gain sqrt 2).
        bound = math.sqrt(6.0 / self.in_dim)
        rng = substream(seed, "init", prefix + "weight")
        self.params["weight"][...] = rng.uniform(-bound, bound, size=self.params["weight"].shape)
        self.params["bias"].fill(0.0)

    def forward(self, x, train=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"linear layer expects (*, {self.in_dim}) input, got {x.shape} "
                             f"against weight {self.weight.shape}")
        self._x = x
        return x @ self.weight.T + self.bias

    def backward(self, dy):
        x = self._x
        self.grads["weight"] += dy.T @ x
        self.grads["bias"] += dy.sum(axis=0)
        if not self.need_input_grad:
            return None
        return dy @ self.weight


class LayerNorm(Layer):
    def __init__(self, dim: int, eps: float = 1e-5) -> None:
        super().__init__()
        self.dim, self.eps = dim, eps
        self.params = {"gain": np.ones(dim, DTYPE), "shift": np.zeros(dim, DTYPE)}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._xhat = None
        self._inv_std = None

    def reset_parameters(self, seed, prefix):
        self.params["gain"].fill(1.0)
        self.params["shift"].fill(0.0)

    def normalize(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ShapeError(f"layernorm expects (*, {self.dim}) input, got {x.shape}")
        mu = x.mean(axis=1, keepdims=True)
        xc = x - mu
        var = np.mean(xc * xc, axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        return xc * inv_std, inv_std

    def forward(self, x, train=False, rng=None):
        xhat, inv_std = self.normalize(x)
        self._xhat, self._inv_std = xhat, inv_std
        return xhat * self.params["gain"] + self.params["shift"]

    def backward(self, dy):
        xhat, inv_std = self._xhat, self._inv_std
        self.grads["gain"] += np.sum(dy * xhat, axis=0)
        self.grads["shift"] += dy.sum(axis=0)
        if not self.need_input_grad:
            return None
        dxhat = dy * self.params["gain"]
        return inv_std * (dxhat - dxhat.mean(axis=1, keepdims=True)
                          - xhat * np.mean(dxhat * xhat, axis=1, keepdims=True))


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU, ``x * Phi(x)``."""
    return x * 0.5 * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return cdf + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)


class GELU(Layer):
    def forward(self, x, train=False, rng=None):
        self._x = x
        self._cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
        return x * self._cdf

    def backward(self, dy):
        x = self._x
        return dy * (self._cdf + x * _INV_SQRT2PI * np.exp(-0.5 * x * x))


def dropout_forward(x: np.ndarray, p: float, train: bool, rng: np.random.Generator | None):
    """Inverted dropout.  Returns ``(output, mask)``; mask is ``None`` when inactive."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x, None
    if rng is None:
        raise ConfigError("train-mode dropout needs a seeded generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


class Dropout(Layer):
    def __init__(self, p: float) -> None:
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self._mask = None

    def forward(self, x, train=False, rng=None):
        out, self._mask = dropout_forward(x, self.p, train, rng)
        return out

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


class Sequential(Layer):
    def __init__(self, *layers: Layer) -> None:
        super().__init__()
        self.layers = list(layers)

    def named_parameters(self, prefix=""):
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}{i}.")

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def reset_parameters(self, seed, prefix):
        for i, layer in enumerate(self.layers):
            layer.reset_parameters(seed, f"{prefix}{i}.")

    def forward(self, x, train=False, rng=None):
        for layer in self.layers:
            x = layer.forward(x, train, rng)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
            if dy is None:
                return None
        return dy


def mlp_block(in_dim: int, out_dim: int, dropout: float) -> Sequential:
    """LayerNorm -> Linear -> GELU -> Dropout."""
    return Sequential(LayerNorm(in_dim), Linear(in_dim, out_dim), GELU(), Dropout(dropout))


class AdamW:
    """AdamW with decoupled weight decay and bias correction.

    Parameters are updated in place; moment buffers are keyed by parameter
    name so the optimizer can be pointed at any ``named_parameters`` stream.
    """

    def __init__(self, lr: float = 8e-4, weight_decay: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        if lr <= 0 or weight_decay < 0:
            raise ConfigError(f"bad AdamW settings lr={lr} weight_decay={weight_decay}")
        self.lr, self.weight_decay = lr, weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, named: Iterable[tuple[str, np.ndarray, np.ndarray]]) -> None:
        named = list(named)
        for name, p, g in named:
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
            if p.shape != g.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p, g in named:
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero entries from dominating."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def numeric_grad(f: Callable[[], float], x: np.ndarray, step: float = 1e-5,
                 index: Iterable[tuple] | None = None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``x`` (perturbed in place)."""
    out = np.zeros_like(x)
    it = np.ndindex(x.shape) if index is None else index
    for idx in it:
        old = x[idx]
        x[idx] = old + step
        fp = f()
        x[idx] = old - step
        fm = f()
        x[idx] = old
        out[idx] = (fp - fm) / (2.0 * step)
    return out


def grad_check(f: Callable[[], float], tensors: dict[str, tuple[np.ndarray, np.ndarray]],
               step: float = 1e-5, max_entries: int | None = None, seed: int = 0,
               floor: float = 1e-7) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``tensors`` maps a name to ``(array, analytic_grad)``; ``f`` must read the
    arrays by reference.  With ``max_entries`` only a random subset of each
    tensor's entries is probed.
    """
    worst = 0.0
    rng = substream(seed, "grad_check")
    for name, (x, analytic) in tensors.items():
        if max_entries is not None and x.size > max_entries:
            flat = rng.choice(x.size, size=max_entries, replace=False)
            index = [np.unravel_index(i, x.shape) for i in flat]
        else:
            index = list(np.ndindex(x.shape))
        numeric = numeric_grad(f, x, step, index)
        for idx in index:
            err = float(relative_error(analytic[idx], numeric[idx], floor))
            worst = max(worst, err)
    return worst
