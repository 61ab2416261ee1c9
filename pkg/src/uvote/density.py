"""Target-frequency estimation and per-expert inverse-frequency weights."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError

DENSITY_FLOOR = 1e-12
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def bin_index(values, bin_width: float, origin: float = 0.0) -> np.ndarray:
    """Integer bin id of each value; bins are ``[origin + k*w, origin + (k+1)*w)``."""
    values = np.asarray(values, dtype=np.float64)
    return np.floor((values - origin) / bin_width).astype(np.int64)


@dataclass(frozen=True)
class HistogramDensity:
    bin_edges: np.ndarray
    counts: np.ndarray
    sample_bins: np.ndarray  # b(n), index into counts
    bin_width: float
    origin: float = 0.0

    @property
    def n_bins(self) -> int:
        return len(self.counts)

    def sample_counts(self) -> np.ndarray:
        """f_{b(n)} for every training sample."""
        return self.counts[self.sample_bins]

    def count_at(self, values) -> np.ndarray:
        """Training count of the bin each value falls in; 0 outside the range."""
        k = bin_index(values, self.bin_width, self.origin) - self._first_bin
        inside = (k >= 0) & (k < self.n_bins)
        out = np.zeros(k.shape, dtype=np.int64)
        out[inside] = self.counts[k[inside]]
        return out

    @property
    def _first_bin(self) -> int:
        return int(round((self.bin_edges[0] - self.origin) / self.bin_width))

    def imbalance_factor(self) -> float:
        nz = self.counts[self.counts > 0]
        return float(nz.max() / nz.min())


def histogram_density(targets, bin_width: float = 1.0, origin: float = 0.0) -> HistogramDensity:
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if targets.size == 0:
        raise InputError("histogram_density needs at least one target")
    if not np.all(np.isfinite(targets)):
        raise InputError("targets contain non-finite values")
    if not bin_width > 0:
        raise InputError(f"bin_width must be positive, got {bin_width}")
    k = bin_index(targets, bin_width, origin)
    k0 = int(k.min())
    rel = k - k0
    counts = np.bincount(rel, minlength=int(rel.max()) + 1)
    edges = origin + (k0 + np.arange(len(counts) + 1)) * bin_width
    return HistogramDensity(edges, counts, rel, float(bin_width), float(origin))


def kde_density(targets, h: float, query):
    """Gaussian KDE ``1/(N h) * sum K((q - x_n) / h)``.

    ``query`` may be a scalar or an array; the result has the same shape.
    """
    if not h > 0:
        raise InputError(f"bandwidth must be positive, got {h}")
    x = np.asarray(targets, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise InputError("kde_density needs at least one support point")
    q = np.asarray(query, dtype=np.float64)
    flat = q.reshape(-1)
    out = np.empty(flat.shape)
    # chunk to keep the (queries x support) block small
    step = max(1, 2_000_000 // x.size)
    for s in range(0, flat.size, step):
        u = (flat[s:s + step, None] - x[None, :]) / h
        out[s:s + step] = np.exp(-0.5 * u * u).sum(axis=1)
    out *= _INV_SQRT_2PI / (x.size * h)
    if q.ndim == 0:
        return float(out[0])
    return out.reshape(q.shape)


def expert_powers(n_experts: int) -> np.ndarray:
    if n_experts < 1:
        raise InputError(f"need at least one expert, got {n_experts}")
    if n_experts == 1:
        return np.zeros(1)
    return np.arange(n_experts) / (n_experts - 1)


@dataclass(frozen=True)
class WeightTable:
    weights: np.ndarray  # [N, M]
    powers: np.ndarray

    @property
    def n_experts(self) -> int:
        return self.weights.shape[1]

    def normalized(self) -> "WeightTable":
        """Rescale every column to mean 1 (relative weighting unchanged)."""
        return WeightTable(self.weights / self.weights.mean(axis=0, keepdims=True), self.powers)

    def uniform(self) -> "WeightTable":
        return WeightTable(np.ones_like(self.weights), self.powers)


def expert_weights(freq, n_experts: int) -> WeightTable:
    """w[n, m] = (1 / f_n) ** p_m with p_m = m / (M - 1)."""
    f = np.asarray(freq, dtype=np.float64).reshape(-1)
    if np.any(~np.isfinite(f)) or np.any(f <= 0):
        raise InputError("sample frequencies must be finite and strictly positive")
    p = expert_powers(n_experts)
    f = np.maximum(f, DENSITY_FLOOR)
    w = np.exp(-np.log(f)[:, None] * p[None, :])
    return WeightTable(w, p)


def sample_frequencies(targets, method: str = "histogram", bin_width: float = 1.0,
                       bandwidth: float = 2.0) -> np.ndarray:
    """Per-sample frequency f_n used for weighting, by histogram count or KDE."""
    if method == "histogram":
        return histogram_density(targets, bin_width).sample_counts().astype(np.float64)
    if method == "kde":
        return np.maximum(kde_density(targets, bandwidth, targets), DENSITY_FLOOR)
    raise InputError(f"unknown density method {method!r}")
