"""Training configuration and the per-benchmark hyper-parameter defaults."""
import enum
import hashlib
import json
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field

from rgrl.action_pipeline import PipelineConfig


class Algorithm(str, enum.Enum):
    RPO_DDPG = "rpo-ddpg"
    RPO_SAC = "rpo-sac"
    # Lagrangian baselines: no construction or projection stage
    DDPG_L = "ddpg-l"
    SAC_L = "sac-l"

    @property
    def is_sac(self) -> bool:
        return self in (Algorithm.RPO_SAC, Algorithm.SAC_L)

    @property
    def uses_pipeline(self) -> bool:
        return self in (Algorithm.RPO_DDPG, Algorithm.RPO_SAC)


class PenaltyMode(str, enum.Enum):
    ADAPTIVE = "adaptive"
    FIXED = "fixed"


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    algorithm: Algorithm = Algorithm.RPO_DDPG
    seed: int = 0
    epochs: int = Field(20_000, ge=1)
    batch_size: int = Field(256, ge=1)
    gamma: float = Field(0.95, ge=0, le=1)
    tau: float = Field(0.005, ge=0, le=1)
    buffer_capacity: int = Field(20_000, ge=1)
    # actor updates per critic update
    policy_frequency: float = Field(0.25, gt=0, le=1)
    # DDPG exploration noise std
    exploration_std: float = Field(1.0, ge=0)
    # SAC temperature, fixed
    temperature: float = Field(0.1, ge=0)
    policy_lr: float = Field(1e-4, gt=0)
    value_lr: float = Field(3e-4, gt=0)
    penalty_lr: float = Field(0.2, ge=0)
    penalty_mode: PenaltyMode = PenaltyMode.ADAPTIVE
    fixed_penalty: float = Field(100.0, ge=0)
    complete_gradient: bool = True
    grad_clip: float = Field(10.0, gt=0)
    hidden: int = Field(256, ge=1)
    # steps of pure collection before updates start; batch_size when unset
    warmup: Optional[int] = Field(None, ge=0)
    eval_every: int = Field(200, ge=1)
    eval_episodes: int = Field(10, ge=1)
    pipeline: PipelineConfig = PipelineConfig()

    @property
    def update_interval(self) -> int:
        return max(1, round(1.0 / self.policy_frequency))

    @property
    def warmup_steps(self) -> int:
        return self.batch_size if self.warmup is None else self.warmup

    def config_hash(self) -> str:
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# exploration std, temperature, penalty lr, projection step, epochs
_BENCHMARK_TABLE: dict[str, dict[str, Any]] = {
    "cartpole": {"exploration_std": 1.0, "temperature": 0.1, "penalty_lr": 0.2, "eta_a": 2e-2, "epochs": 20_000},
    "pendulum": {"exploration_std": 0.5, "temperature": 0.01, "penalty_lr": 0.01, "eta_a": 2e-3, "epochs": 20_000},
    "opf": {"exploration_std": 1e-4, "temperature": 0.001, "penalty_lr": 0.02, "eta_a": 1e-4, "epochs": 40_000},
}


def benchmark_defaults(benchmark: str, algorithm: Algorithm | str = Algorithm.RPO_DDPG, **overrides) -> TrainConfig:
    """Published hyper-parameters of a benchmark, with optional field overrides."""
    if benchmark not in _BENCHMARK_TABLE:
        raise ValueError(f"unknown benchmark '{benchmark}', expected one of {sorted(_BENCHMARK_TABLE)}")
    row = _BENCHMARK_TABLE[benchmark]
    pipeline = PipelineConfig(eta_a=row["eta_a"], eta_a_eval=row["eta_a"], K=10, K_eval=50)
    values: dict[str, Any] = {
        "algorithm": Algorithm(algorithm),
        "epochs": row["epochs"],
        "exploration_std": row["exploration_std"],
        "temperature": row["temperature"],
        "penalty_lr": row["penalty_lr"],
        "pipeline": pipeline.model_dump(),
    }
    pipeline_overrides = overrides.pop("pipeline", None) or {}
    if isinstance(pipeline_overrides, PipelineConfig):
        pipeline_overrides = pipeline_overrides.model_dump()
    values.update(overrides)
    values["pipeline"] = {**values["pipeline"], **pipeline_overrides}
    return TrainConfig.model_validate(values)
