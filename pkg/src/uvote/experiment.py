"""Config-driven experiments: data, expert-count sweep, evaluation, artifacts."""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import SplitDataset, SyntheticSpec, generate_synthetic, load_csv, load_split, split_dataset
from .density import histogram_density
from .errors import ConfigError, UvoteError
from .evaluate import (
    REGIONS,
    REPORT_SCHEMA_VERSION,
    STRATEGIES,
    aggregate,
    metrics_report,
    shot_partition,
)
from .model import ArchitectureSpec, UvoteModel, build_model
from .training import TrainConfig, make_weights, train

log = logging.getLogger(__name__)

# Each ablation is a set of overrides applied to a base config.
ABLATIONS = {
    "uvote": {},
    "vanilla": {"heads": [1], "train": {"loss": "l1"}},
    "nll": {"heads": [1], "train": {"loss": "nll"}},
    "n_branch": {"train": {"loss": "l1"}, "primary_strategy": "average"},
    "no_weighting": {"train": {"weighting": "uniform"}},
    "no_dyl": {"train": {"schedule": "flat"}},
    "avg_vote": {"primary_strategy": "average"},
    "oracle_vote": {"primary_strategy": "oracle"},
}


@dataclass
class ExperimentConfig:
    # {"synthetic": {...SyntheticSpec}} | {"csv_dir": path} | {"csv": path, "splits": [...]}
    dataset: dict = field(default_factory=lambda: {"synthetic": {}})
    hidden: list = field(default_factory=lambda: [64, 32])
    activation: str = "relu"
    heads: list = field(default_factory=lambda: [2])
    train: dict = field(default_factory=dict)
    strategies: list = field(default_factory=lambda: list(STRATEGIES))
    primary_strategy: str = "min_uncertainty"
    # None -> "mae", or "pearson" when the loss is l2
    selection_metric: str | None = None
    std_kind: str = "laplace_std"
    target_column: str = "target"
    ablation: str | None = None
    workers: int = 1
    output_dir: str = "runs/default"
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**copy.deepcopy(d))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def train_config(self) -> TrainConfig:
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(self.train) - known
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        cfg = TrainConfig(**self.train)
        cfg.seed = self.seed
        return cfg

    def resolved(self) -> "ExperimentConfig":
        """Copy with the ablation preset folded in and every field validated."""
        cfg = copy.deepcopy(self)
        if cfg.ablation is not None:
            if cfg.ablation not in ABLATIONS:
                raise ConfigError(f"unknown ablation {cfg.ablation!r}; choose from {sorted(ABLATIONS)}")
            preset = ABLATIONS[cfg.ablation]
            for key, val in preset.items():
                if key == "train":
                    cfg.train = {**cfg.train, **val}
                else:
                    setattr(cfg, key, copy.deepcopy(val))
        if not cfg.heads or any(int(m) < 1 for m in cfg.heads):
            raise ConfigError(f"heads must be a non-empty list of positive ints, got {cfg.heads}")
        cfg.heads = [int(m) for m in cfg.heads]
        for s in cfg.strategies:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r}")
        if cfg.primary_strategy not in STRATEGIES:
            raise ConfigError(f"unknown primary strategy {cfg.primary_strategy!r}")
        if cfg.primary_strategy not in cfg.strategies:
            cfg.strategies = [cfg.primary_strategy] + list(cfg.strategies)
        tc = cfg.train_config()
        tc.validate()
        if cfg.selection_metric is None:
            cfg.selection_metric = "pearson" if tc.loss == "l2" else "mae"
        if cfg.selection_metric not in ("mae", "rmse", "pearson"):
            raise ConfigError(f"unknown selection metric {cfg.selection_metric!r}")
        return cfg


def load_dataset(cfg: ExperimentConfig) -> SplitDataset:
    src = cfg.dataset
    if "synthetic" in src:
        return generate_synthetic(SyntheticSpec(**src["synthetic"]), cfg.seed)
    if "csv_dir" in src:
        return load_split(src["csv_dir"], cfg.target_column)
    if "csv" in src:
        ds = load_csv(src["csv"], cfg.target_column)
        return split_dataset(ds, tuple(src.get("splits", (0.7, 0.15, 0.15))), cfg.seed)
    raise ConfigError(f"dataset needs one of synthetic/csv_dir/csv, got {sorted(src)}")


def _fit_candidate(cfg: ExperimentConfig, data: SplitDataset, n_experts: int):
    tc = cfg.train_config()
    arch = ArchitectureSpec(data.train.d, tuple(cfg.hidden), n_experts, cfg.activation)
    model = build_model(arch, cfg.seed)
    weights = make_weights(data.train.y, n_experts, tc)
    result = train(model, data.train.x, data.train.y, weights, tc)
    return result


def _score(cfg, model, ds, train_y, bin_width):
    part = shot_partition(train_y, ds.y, bin_width)
    outputs = model.predict_all(ds.x)
    out = {}
    for s in cfg.strategies:
        pred = aggregate(outputs, s, ds.y if s == "oracle" else None)
        out[s] = metrics_report(ds.y, pred, part, bin_width, cfg.std_kind)
    return out


def _selection_key(metric: str, report) -> float:
    v = report.regions["all"][metric]
    return -v if metric == "pearson" else v


def run_experiment(config: ExperimentConfig) -> dict:
    """Train every expert count in ``config.heads`` and write run artifacts.

    The winner is chosen on the validation split (All region, primary
    strategy). Returns the report dictionary that is also written to
    ``report.json``.
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stale = out / "STALE"
    if stale.exists():
        stale.unlink()
    try:
        return _run(config, out)
    except Exception as exc:
        diag = {"error": type(exc).__name__, "message": str(exc)}
        for attr in ("epoch", "batch", "step", "line", "column"):
            if getattr(exc, attr, None) is not None:
                diag[attr] = getattr(exc, attr)
        stale.write_text(json.dumps(diag, sort_keys=True) + "\n")
        raise


def _run(config: ExperimentConfig, out: Path) -> dict:
    cfg = config.resolved()
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    data = load_dataset(cfg)
    tc = cfg.train_config()
    bw = tc.bin_width

    if cfg.workers > 1 and len(cfg.heads) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_fit_candidate, [cfg] * len(cfg.heads), [data] * len(cfg.heads), cfg.heads))
    else:
        results = [_fit_candidate(cfg, data, m) for m in cfg.heads]

    candidates = []
    for m, res in zip(cfg.heads, results):
        cdir = out / "candidates" / f"M{m}"
        cdir.mkdir(parents=True, exist_ok=True)
        res.write_log(cdir / "train_log.jsonl")
        res.model.save(cdir / "model.json")
        val = _score(cfg, res.model, data.val, data.train.y, bw)
        test = _score(cfg, res.model, data.test, data.train.y, bw)
        candidates.append({
            "n_experts": m,
            "final_loss": res.log[-1].total_loss,
            "val": {s: r.regions for s, r in val.items()},
            "test": {s: r.regions for s, r in test.items()},
            "_val_primary": val[cfg.primary_strategy],
            "_result": res,
        })

    scores = {str(c["n_experts"]): _selection_key(cfg.selection_metric, c["_val_primary"]) for c in candidates}
    best = min(range(len(candidates)), key=lambda i: (scores[str(candidates[i]["n_experts"])], i))
    winner = candidates[best]
    winner["_result"].write_log(out / "train_log.jsonl")
    winner["_result"].model.save(out / "model.json")

    hist = histogram_density(data.train.y, bw)
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "dataset": {
            "n_train": data.train.n,
            "n_val": data.val.n,
            "n_test": data.test.n,
            "n_features": data.train.d,
            "train_imbalance_factor": hist.imbalance_factor(),
        },
        "selection": {
            "split": "val",
            "region": "all",
            "strategy": cfg.primary_strategy,
            "metric": cfg.selection_metric,
            "values": {k: (-v if cfg.selection_metric == "pearson" else v) for k, v in scores.items()},
            "winner": winner["n_experts"],
        },
        "winner": {
            "n_experts": winner["n_experts"],
            "strategy": cfg.primary_strategy,
            "test": winner["test"][cfg.primary_strategy],
        },
        "candidates": [{k: v for k, v in c.items() if not k.startswith("_")} for c in candidates],
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "report.csv").write_text(report_csv(report))
    return report


CSV_FIELDS = ("n_experts", "selected", "split", "strategy", "region",
              "count", "mae", "rmse", "pearson", "uce")


def report_csv(report: dict) -> str:
    """One row per candidate x split x strategy x region."""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    win = report["winner"]["n_experts"]
    for c in report["candidates"]:
        for split in ("val", "test"):
            for strategy, regions in c[split].items():
                for region in REGIONS:
                    row = regions[region]
                    w.writerow({
                        "n_experts": c["n_experts"],
                        "selected": int(c["n_experts"] == win),
                        "split": split,
                        "strategy": strategy,
                        "region": region,
                        **{k: ("" if row[k] is None else repr(row[k]) if isinstance(row[k], float) else row[k])
                           for k in ("count", "mae", "rmse", "pearson", "uce")},
                    })
    return buf.getvalue()


def load_report(run_dir) -> dict:
    path = Path(run_dir)
    if path.is_dir():
        if (path / "STALE").exists():
            raise UvoteError(f"{path} is flagged stale: {(path / 'STALE').read_text().strip()}")
        path = path / "report.json"
    return json.loads(path.read_text())


def evaluate_checkpoint(model_path, data, train_targets, strategies, bin_width=1.0,
                        std_kind="laplace_std") -> dict:
    """Metrics for a saved checkpoint on ``data`` (a Dataset)."""
    model = UvoteModel.load(model_path)
    part = shot_partition(train_targets, data.y, bin_width)
    outputs = model.predict_all(data.x)
    res = {}
    for s in strategies:
        pred = aggregate(outputs, s, data.y if s == "oracle" else None)
        res[s] = metrics_report(data.y, pred, part, bin_width, std_kind).regions
    return {"schema_version": REPORT_SCHEMA_VERSION, "n_experts": model.n_experts, "test": res}


def summary_rows(reports: dict, region_keys=REGIONS, metric="mae") -> list[list]:
    """Table rows ``[name, metric per region...]`` for the winners of several runs."""
    rows = []
    for name, rep in reports.items():
        regs = rep["winner"]["test"]
        rows.append([name] + [regs[r][metric] for r in region_keys])
    return rows


def median_over(reports: list[dict], region: str, metric: str) -> float:
    return float(np.median([r["winner"]["test"][region][metric] for r in reports]))
