"""Hard-constrained benchmark environments."""
from pathlib import Path
from typing import Optional

from rgrl.envs.base import EnvState, HardConstrainedEnv, StepResult
from rgrl.envs.cartpole import SafeCartPole
from rgrl.envs.opf import OpfBattery, load_profiles
from rgrl.envs.pendulum import SpringPendulum

BENCHMARKS = ("cartpole", "pendulum", "opf")


def make_env(benchmark: str, profile_file: Optional[str | Path] = None) -> HardConstrainedEnv:
    """Build a benchmark by name; profile_file only applies to the OPF benchmark."""
    if benchmark == "cartpole":
        return SafeCartPole()
    if benchmark == "pendulum":
        return SpringPendulum()
    if benchmark == "opf":
        profiles = load_profiles(profile_file) if profile_file is not None else None
        return OpfBattery(profiles=profiles)
    raise ValueError(f"unknown benchmark '{benchmark}', expected one of {BENCHMARKS}")


__all__ = [
    "BENCHMARKS",
    "EnvState",
    "HardConstrainedEnv",
    "OpfBattery",
    "SafeCartPole",
    "SpringPendulum",
    "StepResult",
    "make_env",
]
