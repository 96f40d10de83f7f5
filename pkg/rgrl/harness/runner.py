"""
Experiment orchestration: multi-seed training, checkpoint evaluation and ablation sweeps.

Every seed writes into its own directory:

    <out>/seed_<k>/config.yaml     fully resolved config and its hash
    <out>/seed_<k>/metrics.csv     one aggregate MetricRecord per evaluation round
    <out>/seed_<k>/curve.csv       epoch, eval reward
    <out>/seed_<k>/checkpoint.pt   final agent
    <out>/summary.yaml             mean/std over seeds of the final records
"""
import csv
import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path
from typing import Any, Optional

import yaml
from rich.console import Console

from rgrl.envs import make_env
from rgrl.errors import ConfigError
from rgrl.harness.config import RunConfig, with_overrides, worker_limit, write_resolved_config
from rgrl.harness.metrics import (
    SUMMARY_FIELDS,
    MetricRecord,
    read_metrics_csv,
    summarize,
    write_curve_csv,
    write_metrics_csv,
)
from rgrl.rl.checkpoint import load_checkpoint, restore_agent, save_checkpoint
from rgrl.rl.train import evaluate, train

logger = logging.getLogger(__name__)
console = Console()

ABLATIONS: dict[str, dict[str, dict[str, Any]]] = {
    "k-sweep": {f"K={k}": {"pipeline": {"K": k}} for k in (0, 10, 50, 200)},
    "fixed-vs-adaptive-penalty": {
        "adaptive": {"penalty_mode": "adaptive"},
        "fixed": {"penalty_mode": "fixed", "fixed_penalty": 100.0},
    },
    "partial-vs-complete-gradient": {
        "complete": {"complete_gradient": True},
        "partial": {"complete_gradient": False},
    },
}


# ============================================================================
# TRAINING
# ============================================================================

def train_seed(run: RunConfig, index: int, progress: bool = False) -> dict[str, Any]:
    """Train the index-th seed of a run and write its files. Top-level so worker processes can pickle it."""
    cfg = run.seed_config(index)
    seed_dir = Path(run.out) / f"seed_{index}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(seed_dir / "config.yaml", run.model_copy(update={"train": cfg}))

    env = make_env(run.benchmark, run.profile_file)
    result = train(env, cfg, progress=progress)
    write_metrics_csv(seed_dir / "metrics.csv", result.log)
    write_curve_csv(seed_dir / "curve.csv", result.log)
    save_checkpoint(seed_dir / "checkpoint.pt", result.agent, cfg, run.benchmark, cfg.epochs)
    return {
        "index": index,
        "seed": cfg.seed,
        "final": result.log[-1].model_dump(),
        "stats": dict(result.stats),
    }


def summary_from_logs(out: str | Path, seeds: int) -> dict[str, dict[str, float]]:
    """Mean/std over seeds of the last row of every seed's metrics.csv."""
    finals = [read_metrics_csv(Path(out) / f"seed_{k}" / "metrics.csv")[-1] for k in range(seeds)]
    return summarize(finals)


def run_train(run: RunConfig, progress: bool = True, workers: Optional[int] = None) -> dict[str, Any]:
    """
    Train every seed of a run, in parallel when RGRL_THREADS allows, and write summary.yaml.

    Returns:
        The summary mapping that was written
    """
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    workers = min(workers or worker_limit(), run.seeds)
    cfg = run.train
    console.print("=" * 60)
    console.print(f"Training {cfg.algorithm.value} on {run.benchmark}: {run.seeds} seed(s), {cfg.epochs} epochs, {workers} worker(s)")
    console.print("=" * 60)

    results: list[dict[str, Any]] = []
    if workers == 1:
        for index in range(run.seeds):
            results.append(train_seed(run, index, progress))
            console.print(f"✅ seed {index} done: reward {results[-1]['final']['reward']:.4f}")
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(train_seed, run, index): index for index in range(run.seeds)}
            for future in as_completed(futures):
                results.append(future.result())
                console.print(f"✅ seed {futures[future]} done: reward {results[-1]['final']['reward']:.4f}")
    results.sort(key=lambda r: r["index"])

    summary = {
        "benchmark": run.benchmark,
        "algorithm": cfg.algorithm.value,
        "seeds": run.seeds,
        "epochs": cfg.epochs,
        # one actor and penalty update per this many critic updates
        "policy_update_interval": cfg.update_interval,
        "config_hash": cfg.config_hash(),
        "final": summarize([MetricRecord.model_validate(r["final"]) for r in results]),
        "fallbacks": {str(r["seed"]): r["stats"] for r in results},
    }
    with open(out / "summary.yaml", "w", encoding="utf-8") as f:
        yaml.safe_dump(summary, f, sort_keys=False)
    print_summary(summary["final"], title="FINAL EVALUATION (mean ± std over seeds)")
    return summary


def print_summary(summary: dict[str, dict[str, float]], title: str) -> None:
    console.print("\n" + "=" * 60)
    console.print(f"🎉 {title}")
    console.print("=" * 60)
    for name, stats in summary.items():
        console.print(f"  {name:<18} {stats['mean']:.6g} ± {stats['std']:.3g}")


# ============================================================================
# EVALUATION
# ============================================================================

def run_eval(
    checkpoint: str | Path,
    episodes: int = 10,
    seed: int = 0,
    benchmark: Optional[str] = None,
    profile_file: Optional[str | Path] = None,
) -> tuple[MetricRecord, list[MetricRecord]]:
    """
    Evaluate a saved agent with the evaluation projection budget.

    Returns:
        Tuple of (aggregate record, per-episode records)
    """
    payload = load_checkpoint(checkpoint, benchmark)
    env = make_env(payload["benchmark"], profile_file)
    model = env.constraint_model()
    agent = restore_agent(payload, env.state_dim, model)
    cfg = payload["config"]
    seeds = [seed + k for k in range(episodes)]
    record, records = evaluate(env, model, agent.actor, cfg, seeds, epoch=int(payload["epoch"]))
    print_summary(summarize(records), title=f"EVALUATION of {cfg.algorithm.value} on {payload['benchmark']} ({episodes} episodes)")
    return record, records


# ============================================================================
# ABLATIONS
# ============================================================================

def run_ablation(ablation: str, run: RunConfig, progress: bool = True) -> list[dict[str, Any]]:
    """
    Train every arm of an ablation under <out>/<arm>/ and write comparison.csv.

    Returns:
        One row per arm: the arm name and the mean of each summary metric
    """
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation '{ablation}', expected one of {sorted(ABLATIONS)}")
    if not run.train.algorithm.uses_pipeline:
        raise ConfigError(f"ablation '{ablation}' needs an RPO algorithm, got {run.train.algorithm.value}")

    out = Path(run.out)
    rows = []
    for arm, overrides in ABLATIONS[ablation].items():
        console.print(f"\n📄 Arm {arm}")
        console.print("-" * 60)
        arm_run = run.model_copy(update={"train": with_overrides(run.train, overrides), "out": out / arm.replace("=", "_")})
        summary = run_train(arm_run, progress=progress)
        rows.append({"arm": arm, **{name: summary["final"][name]["mean"] for name in SUMMARY_FIELDS}})

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "comparison.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["arm", *SUMMARY_FIELDS])
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    console.print(f"✅ Comparison written to {out / 'comparison.csv'}")
    return rows
