"""Aggregate per-trial metrics: bootstrap confidence bands, CSV and SVG curves."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .experiment import CONDITIONS, read_metrics

METRICS = ("success_rate", "thinking_fraction", "mean_length")
BOOTSTRAP_RESAMPLES = 1000
BOOTSTRAP_SEED = 8675309


def bootstrap_ci(values: np.ndarray, rng: np.random.Generator, n_resamples: int = BOOTSTRAP_RESAMPLES,
                 level: float = 0.95) -> tuple[float, float, float]:
    """Mean of ``values`` with a percentile bootstrap interval over resampled trials."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("need at least one value")
    idx = rng.integers(values.size, size=(n_resamples, values.size))
    means = values[idx].mean(axis=1)
    alpha = (1.0 - level) / 2
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    # clamp away float noise so degenerate samples give a zero-width band
    m = float(values.mean())
    return m, min(float(lo), m), max(float(hi), m)


def metric_matrix(rows: list[dict], metric: str) -> tuple[list[int], np.ndarray]:
    """``(iterations, values (n_trials, n_iterations))``; trials must share one iteration grid."""
    by_trial: dict[int, dict[int, float]] = {}
    for r in rows:
        by_trial.setdefault(r["trial"], {})[r["iteration"]] = r[metric]
    grids = {tuple(sorted(d)) for d in by_trial.values()}
    if len(grids) != 1:
        raise ValueError("trials have mismatched iteration grids")
    iters = list(next(iter(grids)))
    return iters, np.array([[by_trial[t][i] for i in iters] for t in sorted(by_trial)])


def trial_auc(rows: list[dict], metric: str = "success_rate") -> dict[int, float]:
    """Per-trial mean of ``metric`` over iterations (area under the curve per iteration)."""
    iters, mat = metric_matrix(rows, metric)
    trials = sorted({r["trial"] for r in rows})
    return {t: float(v) for t, v in zip(trials, mat.mean(axis=1))}


def aggregate(runs: dict[str, list[dict]], seed: int = BOOTSTRAP_SEED,
              n_resamples: int = BOOTSTRAP_RESAMPLES) -> list[dict]:
    out = []
    grids = set()
    for ci, cond in enumerate(sorted(runs, key=_condition_order)):
        for mi, metric in enumerate(METRICS):
            iters, mat = metric_matrix(runs[cond], metric)
            grids.add(tuple(iters))
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(ci, mi)))
            for j, it in enumerate(iters):
                m, lo, hi = bootstrap_ci(mat[:, j], rng, n_resamples)
                out.append({"condition": cond, "metric": metric, "iteration": it, "mean": m,
                            "ci_low": lo, "ci_high": hi, "n_trials": mat.shape[0]})
    if len(grids) > 1:
        raise ValueError("conditions have mismatched iteration grids")
    return out


def _condition_order(c: str) -> tuple[int, str]:
    return (CONDITIONS.index(c) if c in CONDITIONS else len(CONDITIONS), c)


def load_runs(run_dir: str | Path) -> dict[str, list[dict]]:
    """Collect ``<condition>/metrics_trial*.csv`` under ``run_dir``."""
    runs = {}
    for cdir in sorted(Path(run_dir).iterdir()):
        files = sorted(cdir.glob("metrics_trial*.csv")) if cdir.is_dir() else []
        if files:
            runs[cdir.name] = [r for f in files for r in read_metrics(f)]
    if not runs:
        raise FileNotFoundError(f"no metrics files under {run_dir}")
    return runs


def write_aggregate(path: str | Path, agg: list[dict]) -> None:
    cols = ("condition", "metric", "iteration", "mean", "ci_low", "ci_high", "n_trials")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, cols, lineterminator="\n")
        w.writeheader()
        w.writerows(agg)


def plot_metric(path: str | Path, agg: list[dict], metric: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for cond in sorted({r["condition"] for r in agg}, key=_condition_order):
        rs = [r for r in agg if r["condition"] == cond and r["metric"] == metric]
        x = [r["iteration"] for r in rs]
        ax.plot(x, [r["mean"] for r in rs], label=cond)
        ax.fill_between(x, [r["ci_low"] for r in rs], [r["ci_high"] for r in rs], alpha=0.25)
    ax.set_xlabel("iteration")
    ax.set_ylabel(metric.replace("_", " "))
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def report(run_dir: str | Path, out_dir: str | Path | None = None, seed: int = BOOTSTRAP_SEED) -> Path:
    out = Path(out_dir) if out_dir is not None else Path(run_dir)
    out.mkdir(parents=True, exist_ok=True)
    agg = aggregate(load_runs(run_dir), seed)
    write_aggregate(out / "aggregate.csv", agg)
    for metric in METRICS:
        plot_metric(out / f"{metric}.svg", agg, metric)
    return out
