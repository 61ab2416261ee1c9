"""Dense layers, analytic backprop and Adam, in float64 numpy.

Matrices are plain 2-D ``np.ndarray`` objects with rows as batch samples.
Layer weights are stored ``[out, in]`` so that ``forward`` computes
``x @ W.T + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, TrainingError, UsageError

ACTIVATIONS = ("identity", "relu", "tanh")


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 2:
            raise ShapeError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape[0] != self.weights.shape[0]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} != weight rows {self.weights.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def init(cls, n_in: int, n_out: int, activation: str, rng: np.random.Generator) -> "DenseLayer":
        """Glorot-uniform weights, zero bias."""
        limit = np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-limit, limit, size=(n_out, n_in))
        return cls(w, np.zeros(n_out), activation)

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.weights, self.bias]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation)


def _activate(a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(a, 0.0)
    if kind == "tanh":
        return np.tanh(a)
    return a


def _activation_grad(a: np.ndarray, out: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (a > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - out * out
    return np.ones_like(a)


@dataclass
class Trace:
    """Activations cached by a forward pass, consumed by ``backward``."""

    inputs: list[np.ndarray] = field(default_factory=list)
    preacts: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)

    def clear(self):
        self.inputs.clear()
        self.preacts.clear()
        self.outputs.clear()


@dataclass
class LayerGrad:
    weights: np.ndarray
    bias: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [self.weights, self.bias]


# One LayerGrad per DenseLayer, same order.
GradientTape = list


def as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {x.shape}")
    return x


def forward(layers, x, trace: Trace | None = None) -> np.ndarray:
    """Evaluate ``layers`` on the batch ``x``; optionally record a trace."""
    h = as_matrix(x)
    if not np.all(np.isfinite(h)):
        raise ValueError("input contains non-finite values")
    if trace is not None:
        trace.clear()
    for i, layer in enumerate(layers):
        if h.shape[1] != layer.n_in:
            raise ShapeError(
                f"layer {i} expects {layer.n_in} inputs, got {h.shape[1]}"
            )
        a = h @ layer.weights.T + layer.bias
        out = _activate(a, layer.activation)
        if trace is not None:
            trace.inputs.append(h)
            trace.preacts.append(a)
            trace.outputs.append(out)
        h = out
    return h


def backward(layers, trace: Trace | None, upstream) -> tuple[GradientTape, np.ndarray]:
    """Backpropagate ``upstream`` (dL/d output) through a traced forward pass.

    Returns the per-layer parameter gradients and dL/d input. Gradients are
    summed over the batch; callers fold any averaging into ``upstream``.
    """
    if trace is None or len(trace.inputs) != len(layers):
        raise UsageError("backward called without a matching forward trace")
    g = as_matrix(upstream)
    if layers and g.shape != trace.outputs[-1].shape:
        raise ShapeError(
            f"upstream gradient shape {g.shape} != output shape {trace.outputs[-1].shape}"
        )
    tape: GradientTape = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        g = g * _activation_grad(trace.preacts[i], trace.outputs[i], layer.activation)
        tape[i] = LayerGrad(g.T @ trace.inputs[i], g.sum(axis=0))
        g = g @ layer.weights
    return tape, g


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> AdamState:
    """Apply one bias-corrected Adam update to ``params`` in place."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient", step=state.t + 1)
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state
