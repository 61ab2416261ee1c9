"""End-to-end acceptance checks.

Each test prints one ``PASS``/``FAIL`` line so ``pytest -s`` doubles as a
checklist. The benchmark runs are shared across tests through a module
fixture.
"""

import math
import time

import numpy as np
import pytest

from oracles import brute_kde, central_difference, golden_section, max_relative_error
from problems import random_problem
from uvote.density import kde_density
from uvote.evaluate import aggregate, region_of, shot_partition
from uvote.experiment import ExperimentConfig, median_over, run_experiment
from uvote.model import ArchitectureSpec, ExpertOutput, build_model
from uvote.training import TrainConfig, dynamic_alpha, laplace_nll, loss_coefficients, make_weights, objective, train

BENCH_DATA = {"synthetic": {"n": 5000, "d": 4, "imbalance": 100}}
BENCH_SEEDS = range(5)
BENCH_EPOCHS = 60


def check(label, ok, detail=""):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {label}" + (f": {detail}" if detail else ""))
    assert ok, f"{label}: {detail}"


def test_gradients_match_finite_differences():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        model, x, y, w, rng = random_problem(seed)
        coeffs = loss_coefficients(model.n_experts, float(rng.uniform()))
        _, _, grads = objective(model, x, y, w, coeffs)
        numeric = central_difference(lambda: objective(model, x, y, w, coeffs)[0], model.parameters())
        worst = max(worst, max_relative_error(grads, numeric))
    elapsed = time.perf_counter() - start
    check("gradient check, 20 random models", worst < 1e-4 and elapsed < 30,
          f"max rel err {worst:.2e}, {elapsed:.1f}s")


def test_nll_value_and_minimizer():
    loss, _, _ = laplace_nll([2.0], [0.0], [math.log(2)], [1.0])
    value_err = abs(loss - (1 + math.log(2)))
    argmin_err = max(abs(golden_section(lambda s: laplace_nll([r], [0.0], [s], [1.0])[0], -20, 20) - math.log(r))
                     for r in (1e-3, 0.2, 1.0, 2.0, 7.5, 400.0))
    check("Laplace NLL value and minimizer", value_err < 1e-12 and argmin_err < 1e-6,
          f"value err {value_err:.1e}, argmin err {argmin_err:.1e}")


def test_kde_matches_brute_force():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 201))
        pts = rng.normal(rng.uniform(-50, 50), rng.uniform(0.5, 20), size=n)
        h = float(rng.uniform(0.2, 5))
        q = np.concatenate([pts[:5], rng.uniform(pts.min() - 3 * h, pts.max() + 3 * h, size=10)])
        fast = kde_density(pts, h, q)
        slow = np.array([brute_kde(pts, h, v) for v in q])
        worst = max(worst, float(np.abs(fast - slow).max()))
    check("KDE against brute force, 50 datasets", worst < 1e-12, f"max abs err {worst:.1e}")


def test_schedule_and_breakdown_identity():
    t_max = 25
    alphas = [dynamic_alpha(t, t_max) for t in range(t_max + 1)]
    shape_ok = alphas[0] == 1.0 and alphas[-1] == 0.0 and all(a > b for a, b in zip(alphas, alphas[1:]))
    rng = np.random.default_rng(1)
    x = rng.normal(size=(300, 2))
    y = 10 + 3 * x[:, 0] + rng.laplace(0, 0.5, size=300)
    model = build_model(ArchitectureSpec(2, (16,), 3), seed=0)
    cfg = TrainConfig(epochs=t_max, batch_size=32)
    res = train(model, x, y, make_weights(y, 3, cfg), cfg)
    gap = max(abs(r.total_loss - float(np.dot(loss_coefficients(3, r.alpha), r.per_expert_loss)))
              for r in res.log)
    check("dynamic schedule and loss breakdown", shape_ok and gap < 1e-12, f"max identity gap {gap:.1e}")


def test_oracle_dominates_and_single_expert_coincides():
    rng = np.random.default_rng(2)
    violations = 0
    for _ in range(10_000):
        m = int(rng.integers(1, 6))
        out = ExpertOutput(rng.normal(size=(1, m)), rng.normal(size=(1, m)))
        y = rng.normal(size=1)
        orc = aggregate(out, "oracle", y)
        mu = aggregate(out, "min_uncertainty")
        violations += int(abs(y[0] - orc.y_hat[0]) > abs(y[0] - mu.y_hat[0]))
    one = ExpertOutput(rng.normal(size=(100, 1)), rng.normal(size=(100, 1)))
    y = rng.normal(size=100)
    preds = [aggregate(one, "min_uncertainty"), aggregate(one, "average"), aggregate(one, "oracle", y)]
    same = all(p.y_hat.tobytes() == preds[0].y_hat.tobytes() and p.s_hat.tobytes() == preds[0].s_hat.tobytes()
               for p in preds)
    check("oracle dominance over 10^4 trials, M=1 strategies identical", violations == 0 and same,
          f"{violations} violations")


def test_shot_region_boundaries():
    expected = {100: "medium", 20: "medium", 19: "few", 101: "many"}
    got = {}
    for count in expected:
        direct = region_of(count)
        via_partition = shot_partition(np.full(count, 7.5), [7.2]).labels[0]
        got[count] = direct if direct == via_partition else "mismatch"
    check("shot region boundaries", got == expected, str(got))


def bench_config(tmp_path, ablation, seed):
    return ExperimentConfig(dataset=BENCH_DATA, hidden=[64, 32], heads=[2], ablation=ablation,
                            train={"epochs": BENCH_EPOCHS}, output_dir=str(tmp_path / f"{ablation}-{seed}"),
                            seed=seed)


@pytest.fixture(scope="module")
def benchmark(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    runs = {name: [] for name in ("vanilla", "nll", "uvote")}
    slowest = 0.0
    for name in runs:
        for seed in BENCH_SEEDS:
            start = time.perf_counter()
            runs[name].append(run_experiment(bench_config(root, name, seed)))
            slowest = max(slowest, time.perf_counter() - start)
    return runs, slowest, root


def test_benchmark_accuracy(benchmark):
    runs, slowest, _ = benchmark
    few_v = median_over(runs["vanilla"], "few", "mae")
    few_u = median_over(runs["uvote"], "few", "mae")
    all_v = median_over(runs["vanilla"], "all", "mae")
    all_u = median_over(runs["uvote"], "all", "mae")
    few_gain = 1 - few_u / few_v
    all_change = all_u / all_v - 1
    check("benchmark Few-MAE gain >= 10%, All-MAE loss <= 2%",
          few_gain >= 0.10 and all_change <= 0.02 and slowest < 300,
          f"Few {few_v:.3f} -> {few_u:.3f} ({few_gain:+.1%}), All {all_v:.3f} -> {all_u:.3f} "
          f"({all_change:+.1%}), slowest run {slowest:.1f}s")


def test_benchmark_calibration(benchmark):
    runs, _, _ = benchmark
    uce_n = median_over(runs["nll"], "few", "uce")
    uce_u = median_over(runs["uvote"], "few", "uce")
    check("benchmark Few-UCE no worse than single-head NLL", uce_u <= uce_n, f"{uce_u:.3f} vs {uce_n:.3f}")


def test_report_reproducible(benchmark):
    _, _, root = benchmark
    cfg = bench_config(root, "uvote", 0)
    first = (root / "uvote-0" / "report.json").read_bytes()
    run_experiment(cfg)
    again = (root / "uvote-0" / "report.json").read_bytes()
    check("report.json byte-identical on rerun", first == again, f"{len(first)} bytes")
