"""Shared-trunk multi-expert regressor.

Every expert head is a single affine map of the trunk embedding producing a
prediction and a log-scale. Heads are stored stacked: ``head_y`` and
``head_s`` are identity-activation layers with one output row per expert.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nncore
from .errors import ConfigError, ShapeError, UsageError
from .nncore import DenseLayer, Trace

S_CLAMP = 15.0
CHECKPOINT_FORMAT = "uvote-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ArchitectureSpec:
    n_features: int
    hidden: tuple = (64, 32)
    n_experts: int = 2
    activation: str = "relu"

    def validate(self):
        if self.n_features < 1:
            raise ConfigError(f"n_features must be >= 1, got {self.n_features}")
        if self.n_experts < 1:
            raise ConfigError(f"n_experts must be >= 1, got {self.n_experts}")
        if any(int(h) < 1 for h in self.hidden):
            raise ConfigError(f"hidden sizes must be >= 1, got {list(self.hidden)}")
        if self.activation not in nncore.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def embedding_dim(self) -> int:
        return int(self.hidden[-1]) if self.hidden else self.n_features


@dataclass
class ExpertOutput:
    y_hat: np.ndarray  # [batch, M]
    s_hat: np.ndarray  # [batch, M], clamped log-scale

    @property
    def n_experts(self) -> int:
        return self.y_hat.shape[1]


@dataclass
class _ForwardState:
    trunk: Trace
    z: np.ndarray
    s_raw: np.ndarray


class UvoteModel:
    def __init__(self, trunk: list[DenseLayer], head_y: DenseLayer, head_s: DenseLayer):
        if head_y.n_out != head_s.n_out or head_y.n_out < 1:
            raise ShapeError("value and scale heads must have the same expert count >= 1")
        dim_z = trunk[-1].n_out if trunk else head_y.n_in
        if head_y.n_in != dim_z or head_s.n_in != dim_z:
            raise ShapeError(
                f"heads consume {head_y.n_in}/{head_s.n_in} features but embedding has {dim_z}"
            )
        for i in range(1, len(trunk)):
            if trunk[i].n_in != trunk[i - 1].n_out:
                raise ShapeError(f"trunk layer {i} input {trunk[i].n_in} != previous output")
        if head_y.activation != "identity" or head_s.activation != "identity":
            raise ShapeError("expert heads must be affine")
        self.trunk = trunk
        self.head_y = head_y
        self.head_s = head_s
        self._state: _ForwardState | None = None

    @property
    def n_experts(self) -> int:
        return self.head_y.n_out

    @property
    def n_features(self) -> int:
        return self.trunk[0].n_in if self.trunk else self.head_y.n_in

    @property
    def embedding_dim(self) -> int:
        return self.head_y.n_in

    def parameters(self) -> list[np.ndarray]:
        """Trunk params first, then value head, then scale head (W, b each)."""
        out = []
        for layer in self.trunk:
            out.extend(layer.params())
        out.extend(self.head_y.params())
        out.extend(self.head_s.params())
        return out

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def head_parameter_count(self) -> int:
        return sum(p.size for p in self.head_y.params() + self.head_s.params())

    def uncertainty_slice(self) -> slice:
        """Position of the scale-head arrays inside ``parameters()``."""
        n = len(self.parameters())
        return slice(n - 2, n)

    def embed(self, x) -> np.ndarray:
        return nncore.forward(self.trunk, x)

    def predict_all(self, x) -> ExpertOutput:
        x = nncore.as_matrix(x)
        if x.shape[1] != self.n_features:
            raise ShapeError(f"model expects {self.n_features} features, got {x.shape[1]}")
        z = nncore.forward(self.trunk, x)
        y = nncore.forward([self.head_y], z)
        s = nncore.forward([self.head_s], z)
        return ExpertOutput(y, np.clip(s, -S_CLAMP, S_CLAMP))

    def expert(self, m: int) -> "UvoteModel":
        """Single-expert model sharing the trunk and head ``m``."""
        def pick(layer):
            return DenseLayer(layer.weights[m:m + 1].copy(), layer.bias[m:m + 1].copy(), "identity")
        return UvoteModel([l.copy() for l in self.trunk], pick(self.head_y), pick(self.head_s))

    # training-time passes -------------------------------------------------

    def forward_train(self, x) -> ExpertOutput:
        x = nncore.as_matrix(x)
        trace = Trace()
        z = nncore.forward(self.trunk, x, trace)
        y = z @ self.head_y.weights.T + self.head_y.bias
        s_raw = z @ self.head_s.weights.T + self.head_s.bias
        self._state = _ForwardState(trace, z, s_raw)
        return ExpertOutput(y, np.clip(s_raw, -S_CLAMP, S_CLAMP))

    def backward(self, grad_y: np.ndarray, grad_s: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients given dL/d y_hat and dL/d s_hat (clamped).

        The clamp saturates: no gradient flows where the raw log-scale lies
        outside ``[-S_CLAMP, S_CLAMP]``.
        """
        st = self._state
        if st is None:
            raise UsageError("backward called before forward_train")
        grad_s = grad_s * (np.abs(st.s_raw) <= S_CLAMP)
        grads_head_y = [grad_y.T @ st.z, grad_y.sum(axis=0)]
        grads_head_s = [grad_s.T @ st.z, grad_s.sum(axis=0)]
        grad_z = grad_y @ self.head_y.weights + grad_s @ self.head_s.weights
        out = []
        if self.trunk:
            tape, _ = nncore.backward(self.trunk, st.trunk, grad_z)
            for g in tape:
                out.extend(g.arrays())
        return out + grads_head_y + grads_head_s

    # serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        def layer(l):
            return {
                "in": l.n_in,
                "out": l.n_out,
                "activation": l.activation,
                "weights": l.weights.tolist(),
                "bias": l.bias.tolist(),
            }
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "n_experts": self.n_experts,
            "trunk": [layer(l) for l in self.trunk],
            "head_y": layer(self.head_y),
            "head_s": layer(self.head_s),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UvoteModel":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError("not a uvote checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {d.get('version')}")

        def layer(e):
            w = np.array(e["weights"], dtype=np.float64).reshape(e["out"], e["in"])
            return DenseLayer(w, np.array(e["bias"], dtype=np.float64), e["activation"])
        return cls([layer(e) for e in d["trunk"]], layer(d["head_y"]), layer(d["head_s"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "UvoteModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_model(arch: ArchitectureSpec, seed: int = 0) -> UvoteModel:
    arch.validate()
    rng = np.random.default_rng(seed)
    sizes = [arch.n_features] + [int(h) for h in arch.hidden]
    trunk = [DenseLayer.init(a, b, arch.activation, rng) for a, b in zip(sizes[:-1], sizes[1:])]
    dim_z = sizes[-1]
    head_y = DenseLayer.init(dim_z, arch.n_experts, "identity", rng)
    head_s = DenseLayer.init(dim_z, arch.n_experts, "identity", rng)
    return UvoteModel(trunk, head_y, head_s)
