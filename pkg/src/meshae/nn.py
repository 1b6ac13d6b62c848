"""Dense layers, losses and the momentum SGD optimizer."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class TrainingDivergenceError(RuntimeError):
    pass


@dataclass
class DenseLayer:
    weights: np.ndarray  # D_in x D_out
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ValueError(
                f"inconsistent dense shapes: weights {self.weights.shape}, bias {self.bias.shape}"
            )

    @classmethod
    def glorot(cls, d_in: int, d_out: int, rng: np.random.Generator) -> "DenseLayer":
        s = np.sqrt(6.0 / (d_in + d_out))
        return cls(rng.uniform(-s, s, size=(d_in, d_out)), np.zeros(d_out))


def dense_forward(layer: DenseLayer, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.weights.shape[0]:
        raise ValueError(f"expected {layer.weights.shape[0]} inputs, got {x.shape[-1]}")
    return x @ layer.weights + layer.bias, x


def dense_backward(layer: DenseLayer, cache, grad_y):
    x = cache
    grad_y = np.asarray(grad_y, dtype=np.float64)
    if grad_y.shape[-1] != layer.weights.shape[1]:
        raise ValueError("gradient width does not match layer output")
    x2 = x.reshape(-1, x.shape[-1])
    g2 = grad_y.reshape(-1, grad_y.shape[-1])
    return grad_y @ layer.weights.T, x2.T @ g2, g2.sum(axis=0)


def l1_loss(pred, target):
    """Mean absolute error over all entries, with its (sub)gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size


def kl_divergence(mu, log_var):
    """KL(N(mu, exp(log_var)) || N(0, I)) summed over latent dimensions.

    Batched input (B, d) returns the mean over the batch.
    """
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    var = np.exp(log_var)
    batch = mu.shape[0] if mu.ndim == 2 else 1
    loss = -0.5 * float(np.sum(1.0 + log_var - mu**2 - var)) / batch
    return loss, mu / batch, 0.5 * (var - 1.0) / batch


def l1_weight_penalty(weights: dict, coefficient: float):
    """``coefficient * sum |w|`` over the given tensors; callers pass weights only."""
    if coefficient < 0:
        raise ValueError("penalty coefficient must be non-negative")
    total = 0.0
    grads = {}
    for name, w in weights.items():
        total += float(np.abs(w).sum())
        grads[name] = coefficient * np.sign(w)
    return coefficient * total, grads


@dataclass
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 8e-3
    lr_decay: float = 0.99
    momentum: float = 0.9
    l1_weight_penalty: float = 5e-4
    k_order: int = 6
    batch_size: int = 16
    seed: int = 0
    w_kld: float = 0.001
    z_dim: int = 8
    num_levels: int = 4

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1 or self.k_order < 1 or self.z_dim < 1:
            raise ValueError("batch_size, k_order and z_dim must be positive")
        if not 0 < self.lr_decay <= 1 or not 0 <= self.momentum < 1:
            raise ValueError("lr_decay must be in (0, 1] and momentum in [0, 1)")
        if self.learning_rate < 0 or self.l1_weight_penalty < 0 or self.w_kld < 0:
            raise ValueError("rates and weights must be non-negative")

    @property
    def variational(self) -> bool:
        return self.w_kld > 0

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            values[key] = int(value) if types[key] in (int, "int") else float(value)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def to_text(self) -> str:
        return "".join(f"{k} = {v!r}\n" for k, v in dataclasses.asdict(self).items())


@dataclass
class OptimizerState:
    velocity: dict = field(default_factory=dict)
    current_lr: float = 8e-3
    epoch: int = 0
    momentum: float = 0.9
    lr_decay: float = 0.99

    @classmethod
    def for_params(cls, params: dict, config: TrainConfig) -> "OptimizerState":
        return cls(
            {k: np.zeros_like(v) for k, v in params.items()},
            config.learning_rate,
            0,
            config.momentum,
            config.lr_decay,
        )


def sgd_momentum_step(params: dict, grads: dict, state: OptimizerState) -> None:
    """Classical momentum, in place: v <- mu*v + g; p <- p - lr*v."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f"non-finite gradient for {name!r}")
    for name, p in params.items():
        v = state.velocity[name]
        if v.shape != p.shape:
            raise ValueError(f"velocity shape {v.shape} does not match parameter {name!r} {p.shape}")
        v *= state.momentum
        v += grads[name]
        p -= state.current_lr * v


def decay_learning_rate(state: OptimizerState) -> OptimizerState:
    state.current_lr *= state.lr_decay
    state.epoch += 1
    return state
