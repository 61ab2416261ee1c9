"""Expert aggregation, shot regions and regression / calibration metrics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .density import bin_index, histogram_density
from .errors import InputError, ShapeError, UndefinedCorrelationError, UsageError
from .model import ExpertOutput, UvoteModel

STRATEGIES = ("min_uncertainty", "average", "oracle")
REGIONS = ("all", "many", "medium", "few")
MANY_THRESHOLD = 100
FEW_THRESHOLD = 20
REPORT_SCHEMA_VERSION = 1


@dataclass
class AggregatedPrediction:
    y_hat: np.ndarray
    s_hat: np.ndarray
    chosen: np.ndarray | None
    strategy: str


def aggregate(outputs: ExpertOutput, strategy: str = "min_uncertainty", targets=None) -> AggregatedPrediction:
    """Fuse per-expert outputs into one prediction per sample.

    ``min_uncertainty`` keeps the expert with the smallest log-scale,
    ``average`` takes the mean prediction (scale: log of the mean scale),
    ``oracle`` keeps the expert closest to ``targets``. Ties go to the lowest
    expert index.
    """
    y, s = outputs.y_hat, outputs.s_hat
    if strategy == "oracle":
        if targets is None:
            raise UsageError("oracle aggregation needs targets")
        t = np.asarray(targets, dtype=np.float64).reshape(-1)
        if t.size != y.shape[0]:
            raise ShapeError(f"{t.size} targets for {y.shape[0]} predictions")
        chosen = np.argmin(np.abs(t[:, None] - y), axis=1)
    elif targets is not None:
        raise UsageError(f"{strategy} aggregation does not take targets")
    elif strategy == "min_uncertainty":
        chosen = np.argmin(s, axis=1)
    elif strategy == "average":
        if y.shape[1] == 1:
            return AggregatedPrediction(y[:, 0].copy(), s[:, 0].copy(), None, strategy)
        return AggregatedPrediction(y.mean(axis=1), np.log(np.exp(s).mean(axis=1)), None, strategy)
    else:
        raise UsageError(f"unknown strategy {strategy!r}")
    rows = np.arange(y.shape[0])
    return AggregatedPrediction(y[rows, chosen], s[rows, chosen], chosen, strategy)


@dataclass
class ShotPartition:
    labels: np.ndarray  # "many" / "medium" / "few" per test sample
    train_counts: np.ndarray  # training count of each test sample's bin
    many_threshold: int = MANY_THRESHOLD
    few_threshold: int = FEW_THRESHOLD

    def mask(self, region: str) -> np.ndarray:
        if region == "all":
            return np.ones(self.labels.shape, dtype=bool)
        return self.labels == region


def region_of(count: int | np.ndarray):
    """many if count > 100, few if count < 20, medium otherwise."""
    c = np.asarray(count)
    out = np.where(c > MANY_THRESHOLD, "many", np.where(c < FEW_THRESHOLD, "few", "medium"))
    return out if out.ndim else str(out)


def shot_partition(train_targets, test_targets, bin_width: float = 1.0) -> ShotPartition:
    test = np.asarray(test_targets, dtype=np.float64).reshape(-1)
    if test.size == 0:
        raise InputError("no test targets")
    hist = histogram_density(train_targets, bin_width)
    counts = hist.count_at(test)
    return ShotPartition(region_of(counts).astype(object), counts)


def _pair(y, y_hat):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y.size != y_hat.size:
        raise ShapeError(f"{y.size} targets vs {y_hat.size} predictions")
    if y.size == 0:
        raise InputError("metrics need at least one sample")
    return y, y_hat


def mae(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.mean(np.abs(y - y_hat)))


def rmse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def pearson_pct(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    dy = y - y.mean()
    dp = y_hat - y_hat.mean()
    syy = float(np.dot(dy, dy))
    spp = float(np.dot(dp, dp))
    if syy <= 0.0 or spp <= 0.0:
        raise UndefinedCorrelationError("Pearson correlation undefined for zero variance")
    r = float(np.dot(dy, dp)) / math.sqrt(syy * spp)
    return 100.0 * min(1.0, max(-1.0, r))


def predicted_std(s_hat, kind: str = "laplace_std") -> np.ndarray:
    """Spread implied by a Laplace log-scale: sqrt(2)*b, or b itself for ``scale``."""
    b = np.exp(np.asarray(s_hat, dtype=np.float64))
    if kind == "laplace_std":
        return math.sqrt(2.0) * b
    if kind == "scale":
        return b
    raise InputError(f"unknown std kind {kind!r}")


def uce_from_std(y, y_hat, std, bin_width: float = 1.0) -> float:
    """Bin-weighted gap between per-bin MAE and per-bin mean predicted std."""
    y, y_hat = _pair(y, y_hat)
    std = np.asarray(std, dtype=np.float64).reshape(-1)
    k = bin_index(y, bin_width)
    _, inv = np.unique(k, return_inverse=True)
    n_b = np.bincount(inv)
    err_b = np.bincount(inv, weights=np.abs(y - y_hat)) / n_b
    std_b = np.bincount(inv, weights=std) / n_b
    return float(np.sum(n_b / y.size * np.abs(err_b - std_b)))


def uce(y, y_hat, s_hat, bin_width: float = 1.0, std_kind: str = "laplace_std") -> float:
    return uce_from_std(y, y_hat, predicted_std(s_hat, std_kind), bin_width)


@dataclass
class MetricsReport:
    strategy: str
    regions: dict  # region -> {"count", "mae", "rmse", "pearson", "uce"}

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "regions": self.regions}

    def rows(self) -> list[dict]:
        return [{"strategy": self.strategy, "region": r, **self.regions[r]} for r in REGIONS]


def metrics_report(y, pred: AggregatedPrediction, partition: ShotPartition,
                   bin_width: float = 1.0, std_kind: str = "laplace_std") -> MetricsReport:
    """Metrics on the full set and on every shot region.

    An undefined correlation on the full set is an error; inside a region it
    is reported as ``None`` (tiny regions often hold a single sample).
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    regions = {}
    for region in REGIONS:
        mask = partition.mask(region)
        count = int(mask.sum())
        if count == 0:
            regions[region] = {"count": 0, "mae": None, "rmse": None, "pearson": None, "uce": None}
            continue
        yt, yp, sp = y[mask], pred.y_hat[mask], pred.s_hat[mask]
        try:
            p = pearson_pct(yt, yp)
        except UndefinedCorrelationError:
            if region == "all":
                raise
            p = None
        regions[region] = {
            "count": count,
            "mae": mae(yt, yp),
            "rmse": rmse(yt, yp),
            "pearson": p,
            "uce": uce(yt, yp, sp, bin_width, std_kind),
        }
    return MetricsReport(pred.strategy, regions)


def evaluate_model(model: UvoteModel, x, y, train_targets, strategy: str = "min_uncertainty",
                   bin_width: float = 1.0, std_kind: str = "laplace_std") -> MetricsReport:
    outputs = model.predict_all(x)
    pred = aggregate(outputs, strategy, y if strategy == "oracle" else None)
    return metrics_report(y, pred, shot_partition(train_targets, y, bin_width), bin_width, std_kind)


CSV_FIELDS = ("strategy", "region", "count", "mae", "rmse", "pearson", "uce")


def reports_to_csv(reports, extra: dict | None = None) -> str:
    """Flat CSV, one row per strategy x region."""
    buf = io.StringIO()
    fields = list((extra or {}).keys()) + list(CSV_FIELDS)
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for rep in reports:
        for row in rep.rows():
            row = {k: ("" if v is None else (repr(v) if isinstance(v, float) else v)) for k, v in row.items()}
            writer.writerow({**(extra or {}), **row})
    return buf.getvalue()
