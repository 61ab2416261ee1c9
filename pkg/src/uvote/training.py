"""Weighted Laplace-NLL training of all experts under a blending schedule."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .density import WeightTable, expert_weights, sample_frequencies
from .errors import ConfigError, ShapeError, TrainingError, UsageError
from .model import UvoteModel
from .nncore import AdamState, adam_step

log = logging.getLogger(__name__)

LOSSES = ("nll", "l1", "l2")


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 64
    lr: float = 1e-3
    lr_uncertainty: float = 1e-4
    lr_decay: float = 0.1
    # None -> floor(2/3 * epochs), floor(8/9 * epochs)
    milestones: list | None = None
    loss: str = "nll"
    weighting: str = "frequency_power"  # or "uniform"
    schedule: str = "dynamic"  # or "flat"
    expert_sum: str = "sum"  # second term of the dynamic blend: "sum" or "mean"
    density: str = "histogram"  # or "kde"
    bin_width: float = 1.0
    bandwidth: float = 2.0
    # rescale each expert's weight column to mean 1; False keeps raw (1/f)^p
    normalize_weights: bool = True
    seed: int = 0

    def validate(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 < self.lr_uncertainty <= self.lr:
            raise ConfigError("need 0 < lr_uncertainty <= lr")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.weighting not in ("frequency_power", "uniform"):
            raise ConfigError(f"unknown weighting {self.weighting!r}")
        if self.schedule not in ("dynamic", "flat"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.expert_sum not in ("sum", "mean"):
            raise ConfigError(f"unknown expert_sum {self.expert_sum!r}")
        if self.density not in ("histogram", "kde"):
            raise ConfigError(f"unknown density {self.density!r}")
        if not (self.bin_width > 0 and self.bandwidth > 0):
            raise ConfigError("bin_width and bandwidth must be positive")

    def decay_epochs(self) -> list[int]:
        if self.milestones is not None:
            return sorted(int(m) for m in self.milestones)
        return [m for m in (2 * self.epochs // 3, 8 * self.epochs // 9) if m > 0]

    def lr_at(self, epoch: int) -> tuple[float, float]:
        k = sum(1 for m in self.decay_epochs() if epoch >= m)
        f = self.lr_decay**k
        return self.lr * f, self.lr_uncertainty * f


@dataclass
class LossBreakdown:
    epoch: int
    alpha: float | None
    per_expert_loss: list
    total_loss: float
    lr: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def laplace_nll(y, y_hat, s_hat, w):
    """Weighted Laplace negative log-likelihood with log-scale ``s_hat``.

    Returns ``(loss, dL/dy_hat, dL/ds_hat)``; the loss is averaged over the
    samples, and ``sign(0)`` is taken as 0.
    """
    y, y_hat, s_hat, w = (np.asarray(a, dtype=np.float64).reshape(-1) for a in (y, y_hat, s_hat, w))
    n = y.size
    if not (y_hat.size == n and s_hat.size == n and w.size == n):
        raise ShapeError("laplace_nll inputs must have equal lengths")
    if not all(np.all(np.isfinite(a)) for a in (y, y_hat, s_hat, w)):
        raise TrainingError("non-finite input to laplace_nll")
    r = y - y_hat
    inv_b = np.exp(-s_hat)
    loss = float(np.sum(w * (inv_b * np.abs(r) + s_hat)) / n)
    g_y = -(w / n) * inv_b * np.sign(r)
    g_s = (w / n) * (1.0 - inv_b * np.abs(r))
    return loss, g_y, g_s


def l1_loss(y, y_hat, w):
    r = np.asarray(y, dtype=np.float64) - y_hat
    n = r.size
    return float(np.sum(w * np.abs(r)) / n), -(w / n) * np.sign(r)


def l2_loss(y, y_hat, w):
    r = np.asarray(y, dtype=np.float64) - y_hat
    n = r.size
    return float(np.sum(w * r * r) / n), -(2.0 / n) * w * r


def dynamic_alpha(epoch: int, max_epochs: int) -> float:
    """Blend coefficient ``1 - (T / T_max)^2`` for the uniform expert."""
    if max_epochs < 1:
        raise UsageError("max_epochs must be >= 1")
    if not 0 <= epoch <= max_epochs:
        raise UsageError(f"epoch {epoch} outside [0, {max_epochs}]")
    return 1.0 - (epoch / max_epochs) ** 2


def loss_coefficients(n_experts: int, alpha: float, schedule: str = "dynamic",
                      expert_sum: str = "sum") -> np.ndarray:
    """Multipliers applied to each expert's loss in the total objective."""
    if n_experts == 1:
        return np.ones(1)
    if schedule == "flat":
        return np.full(n_experts, 1.0 / n_experts)
    rest = 1.0 - alpha
    if expert_sum == "mean":
        rest /= n_experts - 1
    c = np.full(n_experts, rest)
    c[0] = alpha
    return c


def objective(model: UvoteModel, x, y, weights, coeffs, loss: str = "nll"):
    """Blended loss over all experts and its gradient w.r.t. every parameter.

    ``weights`` is ``[batch, M]``. Returns ``(total, per_expert, grads)`` with
    ``grads`` ordered like ``model.parameters()``.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    weights = np.asarray(weights, dtype=np.float64)
    out = model.forward_train(x)
    m_count = model.n_experts
    if weights.shape != (y.size, m_count):
        raise ShapeError(f"weights shape {weights.shape} != ({y.size}, {m_count})")
    per = np.empty(m_count)
    g_y = np.zeros_like(out.y_hat)
    g_s = np.zeros_like(out.s_hat)
    for m in range(m_count):
        if loss == "nll":
            per[m], gy, gs = laplace_nll(y, out.y_hat[:, m], out.s_hat[:, m], weights[:, m])
            g_s[:, m] = coeffs[m] * gs
        elif loss == "l1":
            per[m], gy = l1_loss(y, out.y_hat[:, m], weights[:, m])
        else:
            per[m], gy = l2_loss(y, out.y_hat[:, m], weights[:, m])
        g_y[:, m] = coeffs[m] * gy
    total = float(np.dot(coeffs, per))
    return total, per, model.backward(g_y, g_s)


def make_weights(targets, n_experts: int, config: TrainConfig) -> WeightTable:
    """Per-expert sample weights for the training targets under ``config``."""
    f = sample_frequencies(targets, config.density, config.bin_width, config.bandwidth)
    table = expert_weights(f, n_experts)
    if config.weighting == "uniform":
        return table.uniform()
    return table.normalized() if config.normalize_weights else table


@dataclass
class TrainResult:
    model: UvoteModel
    log: list = field(default_factory=list)

    def write_log(self, path):
        with open(path, "w") as fh:
            for rec in self.log:
                fh.write(rec.to_json() + "\n")


def train(model: UvoteModel, x, y, weights: WeightTable, config: TrainConfig) -> TrainResult:
    """Train ``model`` in place with Adam; returns it with the per-epoch log."""
    config.validate()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    w = weights.weights if isinstance(weights, WeightTable) else np.asarray(weights, dtype=np.float64)
    n = y.size
    if x.shape[0] != n or w.shape[0] != n:
        raise ShapeError(f"x has {x.shape[0]} rows, y {n}, weights {w.shape[0]}")
    if w.shape[1] != model.n_experts:
        raise ShapeError(f"weights have {w.shape[1]} columns for {model.n_experts} experts")

    params = model.parameters()
    unc = model.uncertainty_slice()
    if config.loss != "nll":
        # point-estimate losses: log-scale frozen at exactly 0
        for p in params[unc]:
            p[...] = 0.0
    unc_idx = list(range(len(params)))[unc]
    main_idx = [i for i in range(len(params)) if i not in unc_idx]
    main_state = AdamState(lr=config.lr)
    unc_state = AdamState(lr=config.lr_uncertainty)

    history = []
    for epoch in range(config.epochs):
        # flat schedule has no blend coefficient; logged as null
        alpha = dynamic_alpha(epoch, config.epochs) if config.schedule == "dynamic" else None
        coeffs = loss_coefficients(model.n_experts, alpha or 0.0, config.schedule, config.expert_sum)
        if model.n_experts == 1:
            alpha = 1.0
        lr_main, lr_unc = config.lr_at(epoch)
        main_state.lr, unc_state.lr = lr_main, lr_unc
        order = np.random.default_rng((config.seed, epoch)).permutation(n)
        per_acc = np.zeros(model.n_experts)
        total_acc = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            try:
                total, per, grads = objective(model, x[idx], y[idx], w[idx], coeffs, config.loss)
                if not np.isfinite(total):
                    raise TrainingError("non-finite loss")
                adam_step([params[i] for i in main_idx], [grads[i] for i in main_idx], main_state)
                if config.loss == "nll":
                    adam_step([params[i] for i in unc_idx], [grads[i] for i in unc_idx], unc_state)
            except TrainingError as exc:
                raise TrainingError(str(exc), epoch=epoch, batch=b) from exc
            frac = idx.size / n
            per_acc += frac * per
            total_acc += frac * total
        rec = LossBreakdown(epoch, alpha, per_acc.tolist(), float(total_acc), lr_main)
        history.append(rec)
        log.debug("epoch %d alpha=%s total=%.5f", epoch, rec.alpha, rec.total_loss)
    return TrainResult(model, history)
