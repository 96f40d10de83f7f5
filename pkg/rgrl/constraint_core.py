"""
Constraint modeling, action partitioning, equality solving and reduced gradients.

Convention throughout: basic coordinates are chosen freely (by a policy or an
optimizer), nonbasic coordinates are solved from the equality system F(a;s)=0.
"""
import enum
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Any, Callable, NamedTuple, Optional

import networkx as nx
import numpy as np

from rgrl.errors import (
    InconsistentSystem,
    NoConvergence,
    NoPerfectMatching,
    RestorationFailed,
    SingularJacobian,
    SingularMatrix,
)
from rgrl.numkit import solve_linear

logger = logging.getLogger(__name__)

NEWTON_TOL = 1e-8
NEWTON_MAX_ITER = 50
MAX_HALVINGS = 10
PERTURBATION = 1e-8
RANK_TOL = 1e-10
CONSISTENCY_TOL = 1e-8

# Call and fallback counters, read by tests and the training metric log.
counters: Counter = Counter()

VectorFn = Callable[[np.ndarray, Any], np.ndarray]


# ============================================================================
# TYPES
# ============================================================================

@dataclass(frozen=True)
class ActionPartition:
    """Index split of an n-dim action into basic and nonbasic coordinates."""

    basic: tuple[int, ...]
    nonbasic: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "basic", tuple(int(i) for i in self.basic))
        object.__setattr__(self, "nonbasic", tuple(int(i) for i in self.nonbasic))
        joined = self.basic + self.nonbasic
        if sorted(joined) != list(range(len(joined))):
            raise ValueError(f"basic {self.basic} and nonbasic {self.nonbasic} must partition 0..{len(joined) - 1}")

    @property
    def n(self) -> int:
        return len(self.basic) + len(self.nonbasic)

    @property
    def m(self) -> int:
        return len(self.basic)

    def assemble(self, a_basic: np.ndarray, a_nonbasic: np.ndarray) -> np.ndarray:
        a = np.empty(self.n)
        a[list(self.basic)] = a_basic
        a[list(self.nonbasic)] = a_nonbasic
        return a

    def split(self, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a = np.asarray(a, dtype=np.float64)
        return a[list(self.basic)], a[list(self.nonbasic)]


@dataclass(frozen=True)
class ConstraintModel:
    """
    State-conditioned constraint set of one benchmark.

    eq(a, s) returns F(a;s) of length n-m and eq_jac(a, s) its (n-m) x n Jacobian.
    ineq(a, s) returns every g_j(a;s) stacked into one vector, ineq_jac the p x n
    Jacobian. lower/upper bound the action box (entries may be infinite).
    solve_nonbasic(s, a_basic, warm_start), when given, replaces the generic
    Newton solve. pinned lists basic indices that must never move.
    """

    n: int
    eq: VectorFn
    eq_jac: VectorFn
    ineq: VectorFn
    ineq_jac: VectorFn
    lower: np.ndarray
    upper: np.ndarray
    partition: ActionPartition
    n_ineq: int
    pinned: tuple[int, ...] = ()
    solve_nonbasic: Optional[Callable[[Any, np.ndarray, Optional[np.ndarray]], np.ndarray]] = None
    name: str = ""

    def __post_init__(self):
        lower = np.broadcast_to(np.asarray(self.lower, dtype=np.float64), (self.n,)).copy()
        upper = np.broadcast_to(np.asarray(self.upper, dtype=np.float64), (self.n,)).copy()
        if np.any(lower > upper):
            raise ValueError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if self.partition.n != self.n:
            raise ValueError(f"partition covers {self.partition.n} coordinates, model has {self.n}")
        if not set(self.pinned) <= set(self.partition.basic):
            raise ValueError("pinned coordinates must be basic")

    @property
    def n_eq(self) -> int:
        return len(self.partition.nonbasic)

    @property
    def m(self) -> int:
        return self.partition.m

    def basic_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        index = list(self.partition.basic)
        return self.lower[index], self.upper[index]


@dataclass
class NlpProblem:
    """min f(x) s.t. h(x) = 0, lower <= x <= upper, started from x0."""

    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    eq: Callable[[np.ndarray], np.ndarray]
    eq_jac: Callable[[np.ndarray], np.ndarray]
    lower: np.ndarray
    upper: np.ndarray
    x0: np.ndarray
    partition: Optional[ActionPartition] = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=np.float64)
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=np.float64), self.x0.shape).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=np.float64), self.x0.shape).copy()
        if np.any(self.x0 < self.lower) or np.any(self.x0 > self.upper):
            raise ValueError("initial point violates the box bounds")
        if self.partition is None:
            jacobian = np.atleast_2d(self.eq_jac(self.x0))
            self.partition = divide_actions(jacobian, linear=True)

    def as_model(self) -> ConstraintModel:
        return ConstraintModel(
            n=self.x0.size,
            eq=lambda a, s: np.atleast_1d(self.eq(a)),
            eq_jac=lambda a, s: np.atleast_2d(self.eq_jac(a)),
            ineq=lambda a, s: np.zeros(0),
            ineq_jac=lambda a, s: np.zeros((0, a.size)),
            lower=self.lower,
            upper=self.upper,
            partition=self.partition,
            n_ineq=0,
            name="nlp",
        )


# ============================================================================
# ACTION DIVISION
# ============================================================================

def _independent_rows(matrix: np.ndarray, tol: float = RANK_TOL) -> list[int]:
    """Lowest-index maximal set of linearly independent rows (Gram-Schmidt elimination)."""
    basis: list[np.ndarray] = []
    kept = []
    for i, row in enumerate(np.asarray(matrix, dtype=np.float64)):
        residual = row.copy()
        for _ in range(2):
            for q in basis:
                residual -= (q @ residual) * q
        norm = np.linalg.norm(residual)
        if norm > tol * max(1.0, np.linalg.norm(row)):
            basis.append(residual / norm)
            kept.append(i)
    return kept


def remove_redundant_equalities(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """
    Drop linearly dependent rows of the system A a + b = 0.

    Returns:
        Tuple of (kept A, kept b, kept row indices)
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if b.size != A.shape[0]:
        raise ValueError(f"b has {b.size} entries for {A.shape[0]} rows")
    kept = _independent_rows(A)
    A_kept, b_kept = A[kept], b[kept]
    for i in sorted(set(range(A.shape[0])) - set(kept)):
        coefficients, *_ = np.linalg.lstsq(A_kept.T, A[i], rcond=None)
        if abs(coefficients @ b_kept - b[i]) > CONSISTENCY_TOL * max(1.0, abs(b[i])):
            raise InconsistentSystem(f"row {i} is a combination of kept rows but its constant term disagrees")
    if len(kept) < A.shape[0]:
        logger.info("Removed %d redundant equality rows", A.shape[0] - len(kept))
    return A_kept, b_kept, kept


def _matching_size(graph: nx.Graph, rows: list, columns: list) -> int:
    subgraph = graph.subgraph(rows + columns)
    matching = nx.bipartite.hopcroft_karp_matching(subgraph, top_nodes=rows)
    return len(matching) // 2


def divide_actions(relationship: np.ndarray, linear: bool = False) -> ActionPartition:
    """
    Choose the nonbasic actions of an equality system.

    relationship is the (n-m) x n 0/1 matrix with entry (i, j) = 1 iff constraint i
    depends on action j; with linear=True it is the coefficient matrix (or a
    Jacobian at an operating point) and the nonbasic set is a maximal linearly
    independent column set. Ties go to the lowest indices in both cases.
    """
    matrix = np.atleast_2d(np.asarray(relationship, dtype=np.float64))
    n_rows, n = matrix.shape

    if linear:
        chosen = _independent_rows(matrix.T)
    else:
        if not np.all(np.isin(matrix, (0.0, 1.0))):
            raise ValueError("relationship matrix must be 0/1")
        graph = nx.Graph()
        rows = [("f", i) for i in range(n_rows)]
        graph.add_nodes_from(rows, bipartite=0)
        graph.add_nodes_from((("a", j) for j in range(n)), bipartite=1)
        graph.add_edges_from((("f", i), ("a", j)) for i, j in zip(*np.nonzero(matrix)))

        # greedy over a transversal matroid yields the lexicographically smallest basis
        chosen = []
        for j in range(n):
            if len(chosen) == n_rows:
                break
            candidate = chosen + [j]
            if _matching_size(graph, rows, [("a", c) for c in candidate]) == len(candidate):
                chosen = candidate

    if len(chosen) < n_rows:
        raise NoPerfectMatching(len(chosen), n_rows)
    nonbasic = tuple(chosen[:n_rows])
    basic = tuple(j for j in range(n) if j not in nonbasic)
    return ActionPartition(basic=basic, nonbasic=nonbasic)


def relationship_matrix(model: ConstraintModel, s, a: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """0/1 dependency matrix read off the Jacobian sparsity at (a, s)."""
    return (np.abs(model.eq_jac(a, s)) > tol).astype(int)


# ============================================================================
# EQUALITY SOLVING
# ============================================================================

def solve_block(J: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve with the nonbasic Jacobian block, perturbing it once if it is singular."""
    try:
        return solve_linear(J, rhs)
    except SingularMatrix:
        counters["jacobian_perturbation"] += 1
        logger.warning("Singular nonbasic Jacobian, retrying with a %.0e perturbation", PERTURBATION)
    try:
        return solve_linear(J + PERTURBATION * np.eye(J.shape[0]), rhs)
    except SingularMatrix as exc:
        raise SingularJacobian(f"nonbasic Jacobian block is singular: {exc}") from exc


def damped_newton(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
    max_halvings: int = MAX_HALVINGS,
) -> tuple[np.ndarray, float, int]:
    """
    Newton iteration x <- x - t J^-1 r with step halving.

    The step is halved up to max_halvings times while the residual inf-norm does
    not decrease; the last halved step is taken if none decreases it.

    Returns:
        Tuple of (solution, final residual inf-norm, iterations used)
    """
    x = np.array(x0, dtype=np.float64)
    r = np.asarray(residual(x), dtype=np.float64)
    norm = float(np.max(np.abs(r), initial=0.0))
    for iteration in range(max_iter):
        if norm <= tol:
            return x, norm, iteration
        step = solve_block(jacobian(x), r)
        t = 1.0
        for _ in range(max_halvings + 1):
            candidate = x - t * step
            r_candidate = np.asarray(residual(candidate), dtype=np.float64)
            norm_candidate = float(np.max(np.abs(r_candidate), initial=0.0))
            if np.isfinite(norm_candidate) and norm_candidate < norm:
                break
            t *= 0.5
        if not np.isfinite(norm_candidate):
            raise NoConvergence("Newton iterate became non-finite", norm, iteration + 1)
        x, r, norm = candidate, r_candidate, norm_candidate
    if norm <= tol:
        return x, norm, max_iter
    raise NoConvergence("Newton did not reach tolerance", norm, max_iter)


def newton_solve(
    model: ConstraintModel,
    s,
    a_basic: np.ndarray,
    init_nonbasic: np.ndarray,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> np.ndarray:
    """Solve F(a^B, a^N; s) = 0 for the nonbasic actions given the basic ones."""
    counters["newton_solve"] += 1
    partition = model.partition
    a_basic = np.asarray(a_basic, dtype=np.float64)
    init_nonbasic = np.asarray(init_nonbasic, dtype=np.float64)
    if a_basic.size != partition.m or init_nonbasic.size != model.n_eq:
        raise ValueError(f"expected {partition.m} basic and {model.n_eq} nonbasic values")
    if not np.all(np.isfinite(init_nonbasic)):
        raise ValueError("initial nonbasic values must be finite")
    if model.n_eq == 0:
        return np.zeros(0)
    nonbasic = list(partition.nonbasic)

    def residual(x):
        return model.eq(partition.assemble(a_basic, x), s)

    def jacobian(x):
        return model.eq_jac(partition.assemble(a_basic, x), s)[:, nonbasic]

    solution, _, _ = damped_newton(residual, jacobian, init_nonbasic, tol, max_iter)
    return solution


# ============================================================================
# GRADIENTS
# ============================================================================

def implicit_jacobian(model: ConstraintModel, s, a: np.ndarray, manifold_tol: Optional[float] = 1e-6) -> np.ndarray:
    """
    Sensitivity of the solved nonbasic actions to the basic ones.

    Returns -(J_N)^-1 J_B with shape (n-m) x m, columns in partition.basic order.
    Pass manifold_tol=None to skip the on-manifold check (projection iterates drift).
    """
    counters["implicit_jacobian"] += 1
    partition = model.partition
    if model.n_eq == 0:
        return np.zeros((0, partition.m))
    a = np.asarray(a, dtype=np.float64)
    if manifold_tol is not None:
        residual = float(np.max(np.abs(model.eq(a, s))))
        if residual > manifold_tol:
            raise ValueError(f"point is off the constraint manifold (residual {residual:.2e})")
    J = model.eq_jac(a, s)
    return -solve_block(J[:, list(partition.nonbasic)], J[:, list(partition.basic)])


def reduced_gradient(grad_basic: np.ndarray, grad_nonbasic: np.ndarray, implicit_jac: np.ndarray) -> np.ndarray:
    """r = grad_B + (d phi_N / d a^B)^T grad_N."""
    grad_basic = np.asarray(grad_basic, dtype=np.float64)
    grad_nonbasic = np.asarray(grad_nonbasic, dtype=np.float64)
    implicit_jac = np.asarray(implicit_jac, dtype=np.float64).reshape(grad_nonbasic.size, grad_basic.size)
    return grad_basic + implicit_jac.T @ grad_nonbasic


# ============================================================================
# REFORMULATIONS
# ============================================================================

def as_inequalities(model: ConstraintModel) -> ConstraintModel:
    """
    Same action space with every equality split into F <= 0 and -F <= 0.

    Used by the Lagrangian baselines, which have no construction stage: every
    coordinate becomes basic.
    """

    def ineq(a, s):
        F = model.eq(a, s)
        return np.concatenate([model.ineq(a, s), F, -F])

    def ineq_jac(a, s):
        J = model.eq_jac(a, s)
        return np.vstack([model.ineq_jac(a, s), J, -J])

    return ConstraintModel(
        n=model.n,
        eq=lambda a, s: np.zeros(0),
        eq_jac=lambda a, s: np.zeros((0, model.n)),
        ineq=ineq,
        ineq_jac=ineq_jac,
        lower=model.lower,
        upper=model.upper,
        partition=ActionPartition(basic=tuple(range(model.n)), nonbasic=()),
        n_ineq=model.n_ineq + 2 * model.n_eq,
        pinned=tuple(sorted(set(model.pinned))),
        name=f"{model.name}-inequalities",
    )


def with_slack_variables(model: ConstraintModel) -> ConstraintModel:
    """
    Rewrite g(a;s) <= 0 as g(a;s) + a_aug = 0 with box a_aug <= 0.

    The slack coordinates are appended to the action and become nonbasic.
    """
    n, p = model.n, model.n_ineq
    partition = model.partition
    slack = tuple(range(n, n + p))

    def eq(a, s):
        return np.concatenate([model.eq(a[:n], s), model.ineq(a[:n], s) + a[n:]])

    def eq_jac(a, s):
        top = np.hstack([model.eq_jac(a[:n], s), np.zeros((model.n_eq, p))])
        bottom = np.hstack([model.ineq_jac(a[:n], s), np.eye(p)])
        return np.vstack([top, bottom])

    def solve_nonbasic(s, a_basic, warm_start=None):
        if model.solve_nonbasic is not None:
            original = model.solve_nonbasic(s, a_basic, None if warm_start is None else warm_start[: model.n_eq])
        else:
            init = np.zeros(model.n_eq) if warm_start is None else warm_start[: model.n_eq]
            original = newton_solve(model, s, a_basic, init)
        return np.concatenate([original, -model.ineq(partition.assemble(a_basic, original), s)])

    return ConstraintModel(
        n=n + p,
        eq=eq,
        eq_jac=eq_jac,
        ineq=lambda a, s: a[n:].copy(),
        ineq_jac=lambda a, s: np.hstack([np.zeros((p, n)), np.eye(p)]),
        lower=np.concatenate([model.lower, np.full(p, -np.inf)]),
        upper=np.concatenate([model.upper, np.zeros(p)]),
        partition=ActionPartition(basic=partition.basic, nonbasic=partition.nonbasic + slack),
        n_ineq=p,
        pinned=model.pinned,
        solve_nonbasic=solve_nonbasic,
        name=f"{model.name}-slack",
    )


# ============================================================================
# STANDALONE GRG OPTIMIZER
# ============================================================================

class GrgStatus(str, enum.Enum):
    CONVERGED = "converged"
    MAX_OUTER = "max-outer"
    STALLED = "stalled"


class GrgResult(NamedTuple):
    x: np.ndarray
    f: float
    status: GrgStatus
    iterations: int


def _max_step(x: np.ndarray, d: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> float:
    """Largest alpha keeping lower <= x + alpha d <= upper."""
    alpha = np.inf
    for xi, di, lo, hi in zip(x, d, lower, upper):
        if di > 0:
            alpha = min(alpha, (hi - xi) / di)
        elif di < 0:
            alpha = min(alpha, (lo - xi) / di)
    return max(float(alpha), 0.0)


def grg_minimize(
    problem: NlpProblem,
    max_outer: int = 500,
    tol: float = 1e-6,
    newton_tol: float = 1e-10,
    armijo: float = 1e-4,
) -> GrgResult:
    """
    Generalized reduced gradient descent over the equality manifold.

    Each outer iteration takes the reduced-gradient direction on the basic
    coordinates (zeroed where a bound is active), moves the nonbasic ones along
    the tangent, backtracks from the bound-feasible maximum step and restores
    equality feasibility with Newton. Accepted iterates never increase f.
    """
    model = problem.as_model()
    partition = model.partition
    basic, nonbasic = list(partition.basic), list(partition.nonbasic)
    lower_B, upper_B = problem.lower[basic], problem.upper[basic]
    lower_N, upper_N = problem.lower[nonbasic], problem.upper[nonbasic]

    x_B, x_N = partition.split(problem.x0)
    try:
        x_N = newton_solve(model, None, x_B, x_N, tol=newton_tol)
    except (NoConvergence, SingularJacobian) as exc:
        raise RestorationFailed(f"initial equality restoration failed: {exc}") from exc
    x = partition.assemble(x_B, x_N)
    fx = float(problem.objective(x))
    alpha_hint = 1.0

    for iteration in range(max_outer):
        grad = np.asarray(problem.gradient(x), dtype=np.float64)
        jac = implicit_jacobian(model, None, x, manifold_tol=None)
        r = reduced_gradient(grad[basic], grad[nonbasic], jac)

        d_B = -r
        blocked = ((r > 0) & (x_B <= lower_B)) | ((r < 0) & (x_B >= upper_B))
        d_B[blocked] = 0.0
        if np.max(np.abs(d_B), initial=0.0) <= tol:
            return GrgResult(x, fx, GrgStatus.CONVERGED, iteration)
        d_N = jac @ d_B

        alpha = min(_max_step(x_B, d_B, lower_B, upper_B), _max_step(x_N, d_N, lower_N, upper_N), 2.0 * alpha_hint)
        slope = float(r @ d_B)
        accepted = restored_any = False
        alpha_tried = alpha > 1e-16
        while alpha > 1e-16:
            trial_B = np.clip(x_B + alpha * d_B, lower_B, upper_B)
            try:
                trial_N = newton_solve(model, None, trial_B, x_N + alpha * d_N, tol=newton_tol)
            except (NoConvergence, SingularJacobian):
                alpha *= 0.5
                continue
            restored_any = True
            trial = partition.assemble(trial_B, trial_N)
            in_box = np.all(trial_N >= lower_N - 1e-12) and np.all(trial_N <= upper_N + 1e-12)
            f_trial = float(problem.objective(trial)) if in_box else np.inf
            if f_trial <= fx + armijo * alpha * slope:
                accepted = True
                break
            alpha *= 0.5

        if not accepted:
            if alpha_tried and not restored_any:
                raise RestorationFailed(f"Newton restoration failed for every step length at iteration {iteration}")
            logger.debug("GRG line search stalled at iteration %d (f=%.6g)", iteration, fx)
            return GrgResult(x, fx, GrgStatus.STALLED, iteration)
        x, x_B, x_N, fx = trial, trial_B, trial_N, f_trial
        alpha_hint = alpha

    return GrgResult(x, fx, GrgStatus.MAX_OUTER, max_outer)
