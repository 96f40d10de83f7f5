"""
Two-stage action decision: construction (equalities) then projection (inequalities).

The projection stage runs reduced-gradient steps on the total inequality
violation, moving the nonbasic actions along the tangent of the equality
manifold so linear equalities stay exactly satisfied.
"""
import enum
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from rgrl.constraint_core import ConstraintModel, implicit_jacobian, newton_solve, reduced_gradient
from rgrl.errors import NumericalDivergence

logger = logging.getLogger(__name__)

EVAL_FEASIBILITY_TOL = 1e-3


class ObjectiveKind(str, enum.Enum):
    # sum_j max{0, g_j}
    MAX_VIOLATION = "max-violation"
    # sum_j max{0, g_j}^2, kept to demonstrate why it never reaches feasibility
    L2 = "l2"


class PipelineConfig(BaseModel):
    """Projection-stage settings: step size and update budgets for training and evaluation."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    eta_a: float = Field(2e-2, gt=0)
    K: int = Field(10, ge=0)
    K_eval: int = Field(50, ge=0)
    eta_a_eval: Optional[float] = Field(None, gt=0)
    objective_kind: ObjectiveKind = ObjectiveKind.MAX_VIOLATION
    newton_tol: float = Field(1e-8, gt=0)
    newton_max_iter: int = Field(50, ge=1)

    @property
    def eval_step(self) -> float:
        return self.eta_a if self.eta_a_eval is None else self.eta_a_eval


@dataclass
class PipelineTrace:
    initial_action: np.ndarray
    action: np.ndarray
    updates_used: int
    # max inequality violation at the start and after every update
    max_violation: list[float] = field(default_factory=list)
    equality_residual: float = 0.0


def construct(
    model: ConstraintModel,
    s,
    a_basic: np.ndarray,
    warm_start: Optional[np.ndarray] = None,
    cfg: Optional[PipelineConfig] = None,
) -> np.ndarray:
    """Complete the basic actions with the nonbasic ones that satisfy F(a;s) = 0."""
    cfg = cfg or PipelineConfig()
    a_basic = np.asarray(a_basic, dtype=np.float64)
    if a_basic.size != model.m:
        raise ValueError(f"expected {model.m} basic actions, got {a_basic.size}")
    if model.solve_nonbasic is not None:
        a_nonbasic = model.solve_nonbasic(s, a_basic, warm_start)
    else:
        init = np.zeros(model.n_eq) if warm_start is None else warm_start
        a_nonbasic = newton_solve(model, s, a_basic, init, cfg.newton_tol, cfg.newton_max_iter)
    return model.partition.assemble(a_basic, a_nonbasic)


def violation(model: ConstraintModel, s, a: np.ndarray) -> tuple[float, np.ndarray]:
    """Equality residual inf-norm and per-inequality violations max{0, g_j}."""
    a = np.asarray(a, dtype=np.float64)
    eq_res = float(np.max(np.abs(model.eq(a, s)), initial=0.0))
    ineq_viol = np.maximum(0.0, model.ineq(a, s))
    return eq_res, ineq_viol


def _objective_gradient(model: ConstraintModel, s, a: np.ndarray, kind: ObjectiveKind) -> np.ndarray:
    g = model.ineq(a, s)
    if kind is ObjectiveKind.L2:
        weights = 2.0 * np.maximum(0.0, g)
    else:
        # subgradient of max{0, g} taken as 0 at g = 0
        weights = (g > 0).astype(np.float64)
    return model.ineq_jac(a, s).T @ weights


def project(
    model: ConstraintModel,
    s,
    a_tilde: np.ndarray,
    cfg: PipelineConfig,
    max_updates: Optional[int] = None,
    step: Optional[float] = None,
) -> tuple[np.ndarray, PipelineTrace]:
    """
    Reduced-gradient projection of a constructed action onto the inequality set.

    Stops after max_updates (cfg.K by default) updates or as soon as every
    inequality holds.
    """
    max_updates = cfg.K if max_updates is None else max_updates
    step = cfg.eta_a if step is None else step
    partition = model.partition
    a = np.array(a_tilde, dtype=np.float64)

    eq_start = float(np.max(np.abs(model.eq(a, s)), initial=0.0))
    if eq_start > 10.0 * cfg.newton_tol:
        raise ValueError(f"projection needs a constructed action, equality residual is {eq_start:.2e}")
    pinned = [partition.basic.index(i) for i in model.pinned]

    _, viol = violation(model, s, a)
    trace = PipelineTrace(initial_action=a.copy(), action=a, updates_used=0, max_violation=[float(np.max(viol, initial=0.0))])
    for _ in range(max_updates):
        if trace.max_violation[-1] <= 0.0:
            break
        grad = _objective_gradient(model, s, a, cfg.objective_kind)
        grad_basic, grad_nonbasic = partition.split(grad)
        jac = implicit_jacobian(model, s, a, manifold_tol=None)
        delta_basic = reduced_gradient(grad_basic, grad_nonbasic, jac)
        delta_basic[pinned] = 0.0
        delta_nonbasic = jac @ delta_basic

        a_basic, a_nonbasic = partition.split(a)
        a = partition.assemble(a_basic - step * delta_basic, a_nonbasic - step * delta_nonbasic)
        if not np.all(np.isfinite(a)):
            raise NumericalDivergence(f"projection iterate became non-finite after {trace.updates_used} updates")
        _, viol = violation(model, s, a)
        trace.updates_used += 1
        trace.max_violation.append(float(np.max(viol, initial=0.0)))

    trace.action = a
    trace.equality_residual = float(np.max(np.abs(model.eq(a, s)), initial=0.0))
    return a, trace


def project_eval(model: ConstraintModel, s, a_tilde: np.ndarray, cfg: PipelineConfig) -> tuple[np.ndarray, PipelineTrace]:
    """Projection with the evaluation budget K_eval and evaluation step size."""
    return project(model, s, a_tilde, cfg, max_updates=cfg.K_eval, step=cfg.eval_step)


def decide(
    model: ConstraintModel,
    s,
    a_basic: np.ndarray,
    cfg: PipelineConfig,
    evaluation: bool = False,
    warm_start: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, PipelineTrace]:
    """Full decision procedure: construct, then project with the training or evaluation budget."""
    a_tilde = construct(model, s, a_basic, warm_start, cfg)
    if evaluation:
        return project_eval(model, s, a_tilde, cfg)
    return project(model, s, a_tilde, cfg)
