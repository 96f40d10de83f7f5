"""
Common interface of the hard-constrained benchmark environments.

An environment is stateless: reset() builds an EnvState and step() maps a
state and a full action to the next state. The constraint model exposed by
constraint_model() is what the action pipeline and the losses operate on.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from rgrl.constraint_core import ConstraintModel
from rgrl.numkit import RngStream


@dataclass(frozen=True, eq=False)
class EnvState:
    """Observation vector plus the bookkeeping an environment needs to continue an episode."""

    obs: np.ndarray
    step: int = 0
    # multiplicative demand factor drawn at reset (OPF only)
    day_scale: float = 1.0


@dataclass(frozen=True, eq=False)
class StepResult:
    next_state: EnvState
    reward: float
    done: bool
    # inf-norm of F(a;s) for the action taken
    eq_residual: float
    # max{0, g_j(a;s)} per inequality
    ineq_violation: np.ndarray


def as_stream(seed: int | RngStream) -> RngStream:
    return seed if isinstance(seed, RngStream) else RngStream(int(seed))


class HardConstrainedEnv(ABC):
    """Benchmark with state-dependent equality and inequality constraints on the action."""

    name: str = ""
    state_dim: int = 0
    action_dim: int = 0
    horizon: int = 0

    @abstractmethod
    def reset(self, seed: int | RngStream) -> EnvState:
        """Initial state of a new episode."""

    @abstractmethod
    def step(self, state: EnvState, action: np.ndarray) -> StepResult:
        """Apply a full action (basic and nonbasic coordinates) to a state."""

    @abstractmethod
    def constraint_model(self) -> ConstraintModel:
        """Constraint set of this benchmark; callables take (action, observation)."""

    def check_action(self, action) -> np.ndarray:
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.size != self.action_dim:
            raise ValueError(f"{self.name} expects a {self.action_dim}-dim action, got {action.size}")
        return action
