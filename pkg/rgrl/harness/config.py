"""
Run configuration: benchmark, seeds, output directory and the training config.

Config files are YAML with the RunConfig field names as keys; the `train`
mapping is layered over the benchmark's published defaults, and command line
flags are layered over the file.
"""
import os
from pathlib import Path
from typing import Any, Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from rgrl.errors import ConfigError
from rgrl.rl.config import Algorithm, TrainConfig, benchmark_defaults

BENCHMARK_ALIASES = {
    "cartpole": "cartpole",
    "safe-cartpole": "cartpole",
    "pendulum": "pendulum",
    "spring-pendulum": "pendulum",
    "opf": "opf",
    "opf-battery": "opf",
}
RUN_KEYS = ("benchmark", "seeds", "out", "profile_file", "train")


def canonical_benchmark(name: str) -> str:
    try:
        return BENCHMARK_ALIASES[str(name).strip().lower()]
    except KeyError:
        raise ConfigError(f"unknown benchmark '{name}', expected one of {sorted(BENCHMARK_ALIASES)}") from None


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    benchmark: str
    seeds: int = Field(1, ge=1)
    out: Path = Path("runs")
    profile_file: Optional[Path] = None
    train: TrainConfig

    @field_validator("benchmark", mode="before")
    @classmethod
    def _known_benchmark(cls, value: str) -> str:
        if str(value).strip().lower() not in BENCHMARK_ALIASES:
            raise ValueError(f"unknown benchmark '{value}'")
        return BENCHMARK_ALIASES[str(value).strip().lower()]

    def seed_config(self, index: int) -> TrainConfig:
        """Training config of the index-th seed of this run."""
        return self.train.model_copy(update={"seed": self.train.seed + index})

    def resolved(self) -> dict[str, Any]:
        """Every field with defaults materialized, as written to config.yaml."""
        data = self.model_dump(mode="json")
        data["config_hash"] = self.train.config_hash()
        data["update_interval"] = self.train.update_interval
        return data


def _merge(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def with_overrides(cfg: TrainConfig, overrides: dict[str, Any]) -> TrainConfig:
    """Copy of cfg with (possibly nested) field overrides, validated again."""
    try:
        return TrainConfig.model_validate(_merge(cfg.model_dump(mode="json"), overrides))
    except ValidationError as exc:
        raise ConfigError(f"invalid training overrides: {exc}") from exc


def build_run_config(
    benchmark: str,
    algorithm: Optional[Algorithm | str] = None,
    seeds: Optional[int] = None,
    epochs: Optional[int] = None,
    out: Optional[str | Path] = None,
    profile_file: Optional[str | Path] = None,
    train: Optional[dict[str, Any]] = None,
) -> RunConfig:
    """
    RunConfig from the benchmark defaults plus explicit values.

    train holds TrainConfig field overrides; algorithm and epochs take
    precedence over it.
    """
    benchmark = canonical_benchmark(benchmark)
    overrides = dict(train or {})
    if algorithm is not None:
        overrides["algorithm"] = algorithm
    if epochs is not None:
        overrides["epochs"] = epochs
    try:
        algo = Algorithm(overrides.pop("algorithm", Algorithm.RPO_DDPG))
        train_cfg = benchmark_defaults(benchmark, algo, **overrides)
        values: dict[str, Any] = {"benchmark": benchmark, "train": train_cfg}
        if seeds is not None:
            values["seeds"] = seeds
        if out is not None:
            values["out"] = out
        if profile_file is not None:
            values["profile_file"] = profile_file
        return RunConfig.model_validate(values)
    except (ValidationError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_run_config(path: str | Path, **flags) -> RunConfig:
    """
    Read a YAML run config; non-None keyword flags override the file.

    Raises ConfigError for a missing or malformed file and for unknown keys.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    unknown = sorted(set(data) - set(RUN_KEYS))
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    if not isinstance(data.get("train", {}), dict):
        raise ConfigError(f"{path}: 'train' must be a mapping")

    values = {key: data.get(key) for key in RUN_KEYS}
    values.update({key: value for key, value in flags.items() if value is not None})
    if values["benchmark"] is None:
        raise ConfigError(f"{path}: 'benchmark' is required")
    return build_run_config(
        benchmark=values["benchmark"],
        algorithm=values.get("algorithm"),
        seeds=values["seeds"],
        epochs=values.get("epochs"),
        out=values["out"],
        profile_file=values["profile_file"],
        train=values["train"],
    )


def write_resolved_config(path: str | Path, run: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(run.resolved(), f, sort_keys=False)


def worker_limit(env_file: Optional[str | Path] = None) -> int:
    """Parallel seed workers allowed by RGRL_THREADS (from the environment or a .env file)."""
    load_dotenv(env_file)
    raw = os.getenv("RGRL_THREADS", "1")
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigError(f"RGRL_THREADS must be an integer, got '{raw}'") from None
    if threads < 1:
        raise ConfigError(f"RGRL_THREADS must be at least 1, got {threads}")
    return threads
