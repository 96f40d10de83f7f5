"""Exact-penalty factors on the inequality constraints and their dual ascent."""
from dataclasses import dataclass

import numpy as np

from rgrl.constraint_core import ConstraintModel


@dataclass(frozen=True)
class PenaltyState:
    # one factor per inequality, never negative
    nu: np.ndarray
    lr: np.ndarray

    @classmethod
    def zeros(cls, n_ineq: int, lr: float) -> "PenaltyState":
        return cls(nu=np.zeros(n_ineq), lr=np.full(n_ineq, float(lr)))

    @classmethod
    def fixed(cls, n_ineq: int, value: float = 100.0) -> "PenaltyState":
        """Constant factors; a zero learning rate freezes them."""
        return cls(nu=np.full(n_ineq, float(value)), lr=np.zeros(n_ineq))


def penalty_term(model: ConstraintModel, s, a_tilde: np.ndarray, nu: np.ndarray) -> float:
    """sum_j nu_j max{0, g_j(a_tilde; s)}."""
    return float(np.asarray(nu) @ np.maximum(0.0, model.ineq(np.asarray(a_tilde, dtype=np.float64), s)))


def dual_update(state: PenaltyState, violations: np.ndarray) -> PenaltyState:
    """
    nu_j <- nu_j + lr_j * mean over the batch of max{0, g_j}.

    violations is a (batch, n_ineq) array of g_j values (or their positive
    parts) at the construction-stage actions.
    """
    violations = np.atleast_2d(np.asarray(violations, dtype=np.float64))
    if violations.shape[0] == 0:
        return state
    if violations.shape[1] != state.nu.size:
        raise ValueError(f"expected {state.nu.size} constraint columns, got {violations.shape[1]}")
    step = state.lr * np.maximum(0.0, violations).mean(axis=0)
    return PenaltyState(nu=state.nu + step, lr=state.lr)
