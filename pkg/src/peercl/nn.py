"""MLP learners, initialization, optimizers, and the two-learner pair."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .autodiff import GraphError, ShapeError, Tensor, no_grad, relu
from .errors import ConfigError


def rng_from(seed) -> np.random.Generator:
    """PCG64 generator from an int or tuple-of-ints seed key."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a learner: flatten input, relu hidden stack, full-width head."""

    in_shape: tuple[int, ...]
    hidden: tuple[int, ...] = (128, 64)
    n_classes: int = 10

    @property
    def in_dim(self) -> int:
        return int(np.prod(self.in_shape))

    def __post_init__(self):
        if not self.in_shape or any(d <= 0 for d in self.in_shape):
            raise ConfigError(f"in_shape extents must be positive, got {self.in_shape}")
        if any(w <= 0 for w in self.hidden):
            raise ConfigError(f"hidden widths must be positive, got {self.hidden}")
        if self.n_classes <= 0:
            raise ConfigError(f"n_classes must be positive, got {self.n_classes}")


class Linear:
    """y = x @ W + b. W ~ Normal(0, 2/fan_in) (Kaiming-style), b = 0."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator):
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(fan_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    @property
    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]


class Mlp:
    """Feed-forward classifier; the head is sized for every class up front."""

    def __init__(self, spec: MlpSpec, seed):
        self.spec = spec
        rng = rng_from(seed)
        widths = [spec.in_dim, *spec.hidden]
        self.hidden_layers = [Linear(widths[i], widths[i + 1], rng) for i in range(len(widths) - 1)]
        self.head = Linear(widths[-1], spec.n_classes, rng)

    def features(self, x: Tensor) -> Tensor:
        """Penultimate-layer activations (input to the head)."""
        h = x.flatten() if x.data.ndim > 2 else x
        if h.data.shape[1] != self.spec.in_dim:
            raise ShapeError(
                f"input dim {h.data.shape[1]} does not match architecture dim {self.spec.in_dim}"
            )
        for layer in self.hidden_layers:
            h = relu(layer(h))
        return h

    def forward(self, x: Tensor) -> Tensor:
        return self.head(self.features(x))

    __call__ = forward

    def logits(self, images: np.ndarray) -> np.ndarray:
        """Untracked forward pass on a raw image batch."""
        with no_grad():
            return self.forward(Tensor(images)).data

    def feature_array(self, images: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.features(Tensor(images)).data

    def parameters(self) -> list[Tensor]:
        out: list[Tensor] = []
        for layer in [*self.hidden_layers, self.head]:
            out.extend(layer.params)
        return out

    def param_vector(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.parameters()])


@dataclass
class OptimizerSpec:
    variant: str = "sgd"  # "sgd" | "adamw"
    lr: float = 0.02
    momentum: float = 0.0
    weight_decay: float = 0.0

    def validate(self):
        if self.variant not in ("sgd", "adamw"):
            raise ConfigError(f"optimizer.variant must be 'sgd' or 'adamw', got {self.variant!r}")
        if self.lr < 0:
            raise ConfigError(f"optimizer.lr must be >= 0, got {self.lr}")


class Sgd:
    """SGD with classical momentum (v = mu*v + g; w -= lr*v) and L2 decay."""

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self._velocity):
            if p.grad is None:
                raise GraphError("optimizer step before backward: parameter has no gradient")
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            if self.momentum:
                v *= self.momentum
                v += g
                g = v
            p.data -= self.lr * g

    def zero_grad(self):
        for p in self.params:
            p.grad = None


class AdamW:
    """Adaptive moments with decoupled weight decay."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float,
        weight_decay: float = 0.0,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._t = 0

    def step(self):
        b1, b2 = self.betas
        self._t += 1
        c1 = 1.0 - b1 ** self._t
        c2 = 1.0 - b2 ** self._t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                raise GraphError("optimizer step before backward: parameter has no gradient")
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def build_optimizer(spec: OptimizerSpec, params: Sequence[Tensor]):
    spec.validate()
    if spec.variant == "sgd":
        return Sgd(params, spec.lr, spec.momentum, spec.weight_decay)
    return AdamW(params, spec.lr, weight_decay=spec.weight_decay)


class PeerPair:
    """Two learners of identical architecture and optimizer settings.

    Parameter storage is never shared; with distinct seeds the initial
    parameter vectors differ.
    """

    def __init__(self, model1: Mlp, model2: Mlp, optimizer1, optimizer2):
        if model1 is model2:
            raise ConfigError("peer models must not share parameter storage")
        self.model1 = model1
        self.model2 = model2
        self.optimizer1 = optimizer1
        self.optimizer2 = optimizer2

    @classmethod
    def build(cls, spec: MlpSpec, seed1, seed2, opt_spec: OptimizerSpec) -> "PeerPair":
        m1 = Mlp(spec, seed1)
        m2 = Mlp(spec, seed2)
        return cls(m1, m2, build_optimizer(opt_spec, m1.parameters()), build_optimizer(opt_spec, m2.parameters()))

    def ensemble_logits(self, images: np.ndarray) -> np.ndarray:
        """Elementwise mean of the two learners' raw logits."""
        return (self.model1.logits(images) + self.model2.logits(images)) * 0.5


def predict(net_or_pair, images: np.ndarray, mode: str = "independent") -> np.ndarray:
    """Class labels by argmax over logits; ties go to the lowest class index."""
    if mode == "independent":
        model = net_or_pair.model1 if isinstance(net_or_pair, PeerPair) else net_or_pair
        logits = model.logits(images)
    elif mode == "ensemble":
        if not isinstance(net_or_pair, PeerPair):
            raise ValueError("ensemble prediction requires a PeerPair")
        logits = net_or_pair.ensemble_logits(images)
    else:
        raise ValueError(f"unknown prediction mode {mode!r}")
    return np.argmax(logits, axis=1)


# Checkpoint format: JSON object {"format": "peercl-params-v1", "params": [...]}
# where params is a flat list of {"shape": [...], "values": [...]} entries in
# layer order, weight before bias, values row-major float64.


def save_checkpoint(model: Mlp, path) -> None:
    payload = {
        "format": "peercl-params-v1",
        "params": [
            {"shape": list(p.data.shape), "values": p.data.ravel().tolist()} for p in model.parameters()
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(model: Mlp, path) -> None:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "peercl-params-v1":
        raise ConfigError(f"unrecognized checkpoint format in {path}")
    params = model.parameters()
    entries = payload["params"]
    if len(entries) != len(params):
        raise ConfigError(f"checkpoint has {len(entries)} tensors, model expects {len(params)}")
    for p, entry in zip(params, entries):
        arr = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        if arr.shape != p.data.shape:
            raise ConfigError(f"checkpoint tensor shape {arr.shape} does not match model {p.data.shape}")
        p.data = arr
