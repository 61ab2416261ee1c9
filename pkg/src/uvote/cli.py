"""Command-line entry point: ``uvote {generate,train,evaluate,sweep,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .data import SyntheticSpec, generate_synthetic, load_csv, save_split
from .errors import UvoteError
from .evaluate import REGIONS, STRATEGIES
from .experiment import ABLATIONS, ExperimentConfig, evaluate_checkpoint, load_report, run_experiment
from .training import TrainConfig

log = logging.getLogger("uvote")

_TRAIN_FLAGS = {
    "epochs": int,
    "batch_size": int,
    "lr": float,
    "lr_uncertainty": float,
    "loss": str,
    "weighting": str,
    "schedule": str,
    "expert_sum": str,
    "density": str,
    "bin_width": float,
    "bandwidth": float,
}


def _int_list(text):
    return [int(t) for t in text.split(",") if t]


def _str_list(text):
    return [t for t in text.split(",") if t]


def _add_generate(sub):
    p = sub.add_parser("generate", help="write a synthetic imbalanced dataset as train/val/test CSVs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, required=True)
    defaults = SyntheticSpec()
    for f in fields(SyntheticSpec):
        if f.name == "splits":
            continue
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=type(getattr(defaults, f.name)),
                       default=getattr(defaults, f.name))


def _add_experiment_flags(p):
    p.add_argument("--config", help="ExperimentConfig JSON file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", dest="output_dir", help="run directory")
    p.add_argument("--data-dir", help="directory holding train/val/test CSVs")
    p.add_argument("--csv", help="single CSV to split")
    p.add_argument("--target-column")
    p.add_argument("--hidden", type=_int_list, help="trunk widths, e.g. 64,32")
    p.add_argument("--activation", choices=("relu", "tanh", "identity"))
    p.add_argument("--strategies", type=_str_list, help=f"comma list from {','.join(STRATEGIES)}")
    p.add_argument("--primary-strategy", choices=STRATEGIES)
    p.add_argument("--selection-metric", choices=("mae", "rmse", "pearson"))
    p.add_argument("--std-kind", choices=("laplace_std", "scale"))
    p.add_argument("--ablation", choices=sorted(ABLATIONS))
    p.add_argument("--workers", type=int)
    for name, typ in _TRAIN_FLAGS.items():
        p.add_argument(f"--{name.replace('_', '-')}", dest=f"train_{name}", type=typ)
    p.add_argument("--milestones", dest="train_milestones", type=_int_list)
    p.add_argument("--raw-weights", action="store_true", help="do not rescale weight columns to mean 1")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uvote", description="Uncertainty-voting ensemble for imbalanced regression")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_generate(sub)

    p = sub.add_parser("train", help="train one model (first --heads value) and write a run directory")
    _add_experiment_flags(p)
    p.add_argument("--heads", type=int, help="number of experts")

    p = sub.add_parser("sweep", help="train every expert count and keep the best on validation")
    _add_experiment_flags(p)
    p.add_argument("--heads", type=_int_list, help="expert counts, e.g. 1,2,3")

    p = sub.add_parser("evaluate", help="score a saved checkpoint on a CSV dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="CSV to evaluate on")
    p.add_argument("--train-data", required=True, help="training CSV, for shot regions")
    p.add_argument("--target-column", default="target")
    p.add_argument("--strategies", type=_str_list, default=list(STRATEGIES))
    p.add_argument("--bin-width", type=float, default=1.0)
    p.add_argument("--std-kind", choices=("laplace_std", "scale"), default="laplace_std")
    p.add_argument("--out", help="write the JSON report here")

    p = sub.add_parser("report", help="tabulate winners of one or more run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--metric", default="mae", choices=("mae", "rmse", "pearson", "uce"))
    p.add_argument("--csv", help="also write the table as CSV")
    return parser


def config_from_args(args, single: bool) -> ExperimentConfig:
    base = json.loads(Path(args.config).read_text()) if args.config else {}
    cfg = ExperimentConfig.from_dict(base)
    cfg.seed = args.seed
    if args.data_dir:
        cfg.dataset = {"csv_dir": args.data_dir}
    elif args.csv:
        cfg.dataset = {"csv": args.csv}
    for name in ("output_dir", "target_column", "hidden", "activation", "strategies", "primary_strategy",
                 "selection_metric", "std_kind", "ablation", "workers"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    train = dict(cfg.train)
    for name in list(_TRAIN_FLAGS) + ["milestones"]:
        val = getattr(args, f"train_{name}")
        if val is not None:
            train[name] = val
    if args.raw_weights:
        train["normalize_weights"] = False
    cfg.train = train
    if args.heads is not None:
        cfg.heads = [args.heads] if single else args.heads
    elif single:
        cfg.heads = cfg.heads[:1]
    return cfg


def _fmt(v):
    return "-" if v is None else f"{v:.4f}" if isinstance(v, float) else str(v)


def cmd_generate(args):
    spec = SyntheticSpec(**{f.name: getattr(args, f.name) for f in fields(SyntheticSpec) if f.name != "splits"})
    split = generate_synthetic(spec, args.seed)
    save_split(split, args.out)
    print(f"wrote {args.out}: train={split.train.n} val={split.val.n} test={split.test.n} "
          f"imbalance={split.metadata['imbalance_factor']:.2f}")


def cmd_experiment(args, single):
    cfg = config_from_args(args, single)
    report = run_experiment(cfg)
    win = report["winner"]
    print(f"winner M={win['n_experts']} strategy={win['strategy']}  ({cfg.output_dir})")
    print(f"{'region':<8} {'count':>6} {'MAE':>8} {'RMSE':>8} {'P%':>8} {'UCE':>8}")
    for r in REGIONS:
        m = win["test"][r]
        print(f"{r:<8} {m['count']:>6} {_fmt(m['mae']):>8} {_fmt(m['rmse']):>8} "
              f"{_fmt(m['pearson']):>8} {_fmt(m['uce']):>8}")


def cmd_evaluate(args):
    data = load_csv(args.data, args.target_column)
    train = load_csv(args.train_data, args.target_column)
    res = evaluate_checkpoint(args.model, data, train.y, args.strategies, args.bin_width, args.std_kind)
    text = json.dumps(res, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)


def cmd_report(args):
    reports = {run: load_report(run) for run in args.runs}
    header = ["run", "M", "strategy"] + list(REGIONS)
    rows = []
    for run, rep in reports.items():
        win = rep["winner"]
        rows.append([run, win["n_experts"], win["strategy"]] + [win["test"][r][args.metric] for r in REGIONS])
    widths = [max(len(str(h)), *(len(_fmt(r[i])) for r in rows)) for i, h in enumerate(header)]
    print(f"{args.metric} on test")
    print("  ".join(str(h).ljust(w) for h, w in zip(header, widths)))
    for r in rows:
        print("  ".join(_fmt(v).ljust(w) for v, w in zip(r, widths)))
    if args.csv:
        import csv
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow(["" if v is None else v for v in r])


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "generate":
            cmd_generate(args)
        elif args.command in ("train", "sweep"):
            cmd_experiment(args, single=args.command == "train")
        elif args.command == "evaluate":
            cmd_evaluate(args)
        else:
            cmd_report(args)
    except UvoteError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
