"""Datasets: the synthetic imbalanced benchmark and CSV ingestion.

The synthetic generator ("desk-agedb") fixes the target histogram first and
then builds inputs that explain it:

* per-bin counts follow ``imbalance ** phi_b`` where ``phi_b`` in [0, 1] is a
  skewed bump over the target range, so max/min bin count equals the
  requested imbalance factor up to integer rounding;
* each target ``y`` gets Laplace noise ``eps`` with scale ``b(y)`` that grows
  with ``|y|``; the clean value ``y - eps`` is mapped back through the cubic
  ``g(u) = c + h * (0.6 u + 0.4 u^3)`` to a latent ``u``;
* features are ``x = u * v + sigma_x * N(0, I)`` with a fixed unit vector v.

So ``y = g(u) + eps`` holds exactly for every sample, with heteroscedastic
noise, and the prior over ``y`` is as imbalanced as requested.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError, ParseError

TARGET_COLUMN = "target"


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    feature_names: list = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if self.x.ndim != 2 or self.x.shape[0] != self.y.size:
            raise InputError(f"x shape {self.x.shape} does not match {self.y.size} targets")
        if not self.feature_names:
            self.feature_names = [f"f{i}" for i in range(self.x.shape[1])]

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], list(self.feature_names))


@dataclass
class SplitDataset:
    train: Dataset
    val: Dataset
    test: Dataset
    metadata: dict = field(default_factory=dict)


def split_dataset(ds: Dataset, fractions=(0.7, 0.15, 0.15), seed: int = 0) -> SplitDataset:
    """Disjoint random train/val/test split."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
        raise ConfigError(f"split fractions must be three non-negatives summing to 1, got {fractions}")
    order = np.random.default_rng((seed, 7)).permutation(ds.n)
    n_train = int(round(fractions[0] * ds.n))
    n_val = int(round(fractions[1] * ds.n))
    return SplitDataset(
        ds.subset(np.sort(order[:n_train])),
        ds.subset(np.sort(order[n_train:n_train + n_val])),
        ds.subset(np.sort(order[n_train + n_val:])),
    )


@dataclass
class SyntheticSpec:
    n: int = 5000
    d: int = 4
    imbalance: float = 100.0
    n_bins: int = 60
    bin_width: float = 1.0
    peak: float = 0.35  # location of the densest bin, as a fraction of the range
    spread: float = 0.2  # width of the density bump, as a fraction of the range
    noise_min: float = 0.5
    noise_max: float = 3.0
    feature_noise: float = 0.02
    splits: tuple = (0.7, 0.15, 0.15)

    def validate(self):
        if self.n < 100:
            raise ConfigError(f"need n >= 100, got {self.n}")
        if self.d < 1:
            raise ConfigError(f"need d >= 1, got {self.d}")
        if self.imbalance < 1:
            raise ConfigError(f"imbalance factor must be >= 1, got {self.imbalance}")
        if self.n_bins < 1 or not self.bin_width > 0:
            raise ConfigError("n_bins and bin_width must be positive")
        if not (0 < self.noise_min <= self.noise_max):
            raise ConfigError("need 0 < noise_min <= noise_max")
        if self.feature_noise < 0 or self.spread <= 0:
            raise ConfigError("feature_noise must be >= 0 and spread > 0")

    @property
    def target_range(self) -> float:
        return self.n_bins * self.bin_width


def bin_profile(spec: SyntheticSpec) -> np.ndarray:
    """Integer count per target bin; max/min ratio tracks ``spec.imbalance``."""
    centers = (np.arange(spec.n_bins) + 0.5) / spec.n_bins
    bump = np.exp(-0.5 * ((centers - spec.peak) / spec.spread) ** 2)
    span = bump.max() - bump.min()
    phi = (bump - bump.min()) / span if span > 0 else np.ones_like(bump)
    raw = spec.imbalance**phi
    raw *= spec.n / raw.sum()
    if raw.min() < 1.0:
        raise ConfigError(
            f"imbalance {spec.imbalance} with n={spec.n} over {spec.n_bins} bins "
            f"needs a bin count of {raw.min():.3f} < 1"
        )
    counts = np.floor(raw).astype(np.int64)
    # largest-remainder rounding so the counts sum to n
    short = spec.n - counts.sum()
    if short > 0:
        counts[np.argsort(-(raw - counts), kind="stable")[:short]] += 1
    return counts


def cubic(u, center, half):
    return center + half * (0.6 * u + 0.4 * u**3)


def cubic_inverse(t, center, half):
    """Real root of the monotone cubic; Cardano with a single real root."""
    q = -2.5 * (np.asarray(t, dtype=np.float64) - center) / half
    p = 1.5
    disc = np.sqrt(q * q / 4.0 + p**3 / 27.0)
    return np.cbrt(-q / 2.0 + disc) + np.cbrt(-q / 2.0 - disc)


def noise_scale(y, spec: SyntheticSpec) -> np.ndarray:
    """Laplace noise scale b(y), increasing in |y| across the target range."""
    frac = np.clip(np.abs(np.asarray(y, dtype=np.float64)) / spec.target_range, 0.0, 1.0)
    return spec.noise_min + (spec.noise_max - spec.noise_min) * frac


def generate_synthetic(spec: SyntheticSpec, seed: int = 0) -> SplitDataset:
    spec.validate()
    rng = np.random.default_rng(seed)
    counts = bin_profile(spec)
    lo = np.repeat(np.arange(spec.n_bins) * spec.bin_width, counts)
    y = lo + rng.uniform(0.0, spec.bin_width, size=lo.size)
    y = y[rng.permutation(y.size)]
    b = noise_scale(y, spec)
    eps = rng.laplace(0.0, b)
    center = half = spec.target_range / 2.0
    u = cubic_inverse(y - eps, center, half)
    direction = rng.normal(size=spec.d)
    direction /= np.linalg.norm(direction)
    x = u[:, None] * direction[None, :] + spec.feature_noise * rng.normal(size=(y.size, spec.d))
    full = Dataset(x, y)
    split = split_dataset(full, spec.splits, seed)
    split.metadata = {
        "generator": "desk-agedb",
        "seed": seed,
        "spec": asdict(spec),
        "ground_truth": {
            "g": f"{center!r} + {half!r} * (0.6*u + 0.4*u**3)",
            "b": f"{spec.noise_min!r} + ({spec.noise_max!r} - {spec.noise_min!r}) * clip(|y| / {spec.target_range!r}, 0, 1)",
            "direction": direction.tolist(),
        },
        "bin_counts": counts.tolist(),
        "imbalance_factor": float(counts.max() / counts[counts > 0].min()),
    }
    return split


def realized_imbalance(y, bin_width: float = 1.0) -> float:
    k = np.floor(np.asarray(y) / bin_width).astype(np.int64)
    _, c = np.unique(k, return_counts=True)
    return float(c.max() / c.min())


# CSV ----------------------------------------------------------------------

def dataset_to_csv(ds: Dataset, path):
    header = [f"f{i}" for i in range(ds.d)] + [TARGET_COLUMN]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row, t in zip(ds.x, ds.y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(t))])


def load_csv(path, target_column: str = TARGET_COLUMN) -> Dataset:
    """Read a header-first numeric CSV; every other column becomes a feature."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty file", line=1)
    header = next(csv.reader([lines[0]]))
    if target_column not in header:
        raise ParseError(f"missing target column {target_column!r}", line=1)
    t_idx = header.index(target_column)
    feat_idx = [i for i in range(len(header)) if i != t_idx]
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            raise ParseError("blank line", line=lineno)
        cells = next(csv.reader([line]))
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} cells, got {len(cells)}", line=lineno)
        vals = []
        for name, cell in zip(header, cells):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric value {cell!r}", line=lineno, column=name) from None
            if not math.isfinite(v):
                raise ParseError(f"non-finite value {cell!r}", line=lineno, column=name)
            vals.append(v)
        rows.append(vals)
    if not rows:
        raise ParseError("no data rows", line=2)
    arr = np.array(rows, dtype=np.float64)
    return Dataset(arr[:, feat_idx], arr[:, t_idx], [header[i] for i in feat_idx])


def save_split(split: SplitDataset, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("train", "val", "test"):
        dataset_to_csv(getattr(split, name), out / f"{name}.csv")
    (out / "metadata.json").write_text(json.dumps(split.metadata, indent=2, sort_keys=True) + "\n")


def load_split(in_dir, target_column: str = TARGET_COLUMN) -> SplitDataset:
    d = Path(in_dir)
    meta_path = d / "metadata.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return SplitDataset(*(load_csv(d / f"{n}.csv", target_column) for n in ("train", "val", "test")), meta)
