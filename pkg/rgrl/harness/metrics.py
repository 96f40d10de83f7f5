"""
Episode metrics: reward plus instantaneous and episodic constraint violations.

Instantaneous violation is the largest single-step violation over the episode;
episodic violation sums each constraint's violations over the episode and
takes the worst constraint.
"""
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

METRIC_FIELDS = (
    "epoch",
    "episode",
    "reward",
    "max_inst_eq",
    "max_inst_ineq",
    "ep_eq",
    "ep_ineq",
    "mean_grg_updates",
    "wall_seconds",
)
# fields summarized across seeds
SUMMARY_FIELDS = METRIC_FIELDS[2:]


class MetricRecord(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    epoch: int = Field(0, ge=0)
    episode: int = Field(0, ge=0)
    reward: float
    max_inst_eq: float = Field(ge=0)
    max_inst_ineq: float = Field(ge=0)
    ep_eq: float = Field(ge=0)
    ep_ineq: float = Field(ge=0)
    mean_grg_updates: float = Field(0.0, ge=0)
    wall_seconds: float = Field(0.0, ge=0)


@dataclass
class EpisodeTrace:
    """Per-step record of the executed actions of one episode."""

    rewards: list[float] = field(default_factory=list)
    eq_residuals: list[float] = field(default_factory=list)
    ineq_violations: list[np.ndarray] = field(default_factory=list)
    grg_updates: list[int] = field(default_factory=list)
    wall_seconds: float = 0.0

    def record(self, reward: float, eq_residual: float, ineq_violation: np.ndarray, updates: int = 0) -> None:
        self.rewards.append(float(reward))
        self.eq_residuals.append(float(eq_residual))
        self.ineq_violations.append(np.asarray(ineq_violation, dtype=np.float64))
        self.grg_updates.append(int(updates))

    def __len__(self) -> int:
        return len(self.rewards)


def compute_metrics(trace: EpisodeTrace, episode: int = 0, epoch: int = 0) -> MetricRecord:
    eq = np.asarray(trace.eq_residuals, dtype=np.float64)
    if trace.ineq_violations:
        ineq = np.maximum(0.0, np.vstack(trace.ineq_violations))
    else:
        ineq = np.zeros((0, 0))
    return MetricRecord(
        epoch=epoch,
        episode=episode,
        reward=float(np.sum(trace.rewards)),
        max_inst_eq=float(np.max(eq, initial=0.0)),
        max_inst_ineq=float(np.max(ineq, initial=0.0)),
        ep_eq=float(np.sum(eq)),
        ep_ineq=float(np.max(ineq.sum(axis=0), initial=0.0)) if ineq.size else 0.0,
        mean_grg_updates=float(np.mean(trace.grg_updates)) if trace.grg_updates else 0.0,
        wall_seconds=float(trace.wall_seconds),
    )


def aggregate(records: Sequence[MetricRecord], epoch: int = 0, episode: int = 0) -> MetricRecord:
    """One record for an evaluation round: mean reward and cost, worst-case violations."""
    if not records:
        raise ValueError("no records to aggregate")
    return MetricRecord(
        epoch=epoch,
        episode=episode,
        reward=float(np.mean([r.reward for r in records])),
        max_inst_eq=max(r.max_inst_eq for r in records),
        max_inst_ineq=max(r.max_inst_ineq for r in records),
        ep_eq=max(r.ep_eq for r in records),
        ep_ineq=max(r.ep_ineq for r in records),
        mean_grg_updates=float(np.mean([r.mean_grg_updates for r in records])),
        wall_seconds=float(np.sum([r.wall_seconds for r in records])),
    )


def summarize(final_records: Sequence[MetricRecord]) -> dict[str, dict[str, float]]:
    """Mean and population std of each metric over the final record of every seed."""
    summary = {}
    for name in SUMMARY_FIELDS:
        values = np.array([getattr(r, name) for r in final_records], dtype=np.float64)
        summary[name] = {"mean": float(values.mean()), "std": float(values.std())}
    return summary


# ============================================================================
# CSV FILES
# ============================================================================

def write_metrics_csv(path: str | Path, records: Sequence[MetricRecord]) -> None:
    """Rows of MetricRecord fields; floats are written with repr so they read back exactly."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRIC_FIELDS)
        for record in records:
            writer.writerow([repr(getattr(record, name)) for name in METRIC_FIELDS])


def read_metrics_csv(path: str | Path) -> list[MetricRecord]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return [MetricRecord.model_validate(row) for row in csv.DictReader(f)]


def write_curve_csv(path: str | Path, records: Sequence[MetricRecord], column: str = "reward") -> None:
    """Two-column plot series: epoch and one metric."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", column])
        for record in records:
            writer.writerow([record.epoch, repr(getattr(record, column))])
