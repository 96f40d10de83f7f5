import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rgrl.constraint_core import (
    ActionPartition,
    ConstraintModel,
    GrgStatus,
    NlpProblem,
    as_inequalities,
    counters,
    damped_newton,
    divide_actions,
    grg_minimize,
    implicit_jacobian,
    newton_solve,
    reduced_gradient,
    relationship_matrix,
    remove_redundant_equalities,
    solve_block,
    with_slack_variables,
)
from rgrl.errors import InconsistentSystem, NoConvergence, NoPerfectMatching, SingularJacobian
from rgrl.numkit import finite_diff_jacobian
from tests.helpers import linear_model


def nonlinear_model() -> ConstraintModel:
    """F(a) = a_0^2 + a_1 - 1 with a_0 basic."""
    return ConstraintModel(
        n=2,
        eq=lambda a, s: np.array([a[0] ** 2 + a[1] - 1.0]),
        eq_jac=lambda a, s: np.array([[2.0 * a[0], 1.0]]),
        ineq=lambda a, s: np.zeros(0),
        ineq_jac=lambda a, s: np.zeros((0, 2)),
        lower=-np.inf,
        upper=np.inf,
        partition=ActionPartition(basic=(0,), nonbasic=(1,)),
        n_ineq=0,
    )


# ============================================================================
# PARTITIONS AND DIVISION
# ============================================================================

def test_partition_assemble_and_split():
    partition = ActionPartition(basic=(2, 0), nonbasic=(1,))
    a = partition.assemble(np.array([5.0, 7.0]), np.array([9.0]))
    assert np.array_equal(a, [7.0, 9.0, 5.0])
    basic, nonbasic = partition.split(a)
    assert np.array_equal(basic, [5.0, 7.0]) and np.array_equal(nonbasic, [9.0])


def test_partition_must_cover_every_index():
    with pytest.raises(ValueError):
        ActionPartition(basic=(0, 1), nonbasic=(1,))


def test_pinned_coordinates_must_be_basic():
    with pytest.raises(ValueError):
        ConstraintModel(
            n=2,
            eq=lambda a, s: a[:1],
            eq_jac=lambda a, s: np.eye(2)[:1],
            ineq=lambda a, s: np.zeros(0),
            ineq_jac=lambda a, s: np.zeros((0, 2)),
            lower=-1.0,
            upper=1.0,
            partition=ActionPartition(basic=(1,), nonbasic=(0,)),
            n_ineq=0,
            pinned=(0,),
        )


def test_redundant_row_removed():
    A = np.array([[1.0, 0.0, -2.0, 3.0], [5.0, -3.0, 1.0, 4.0], [4.0, -3.0, 3.0, 1.0]])
    b = np.array([2.0, -1.0, -3.0])
    A_kept, b_kept, kept = remove_redundant_equalities(A, b)
    assert kept == [0, 1]
    assert np.array_equal(A_kept, A[:2]) and np.array_equal(b_kept, b[:2])


def test_inconsistent_redundant_row():
    A = np.array([[1.0, 0.0, -2.0, 3.0], [5.0, -3.0, 1.0, 4.0], [4.0, -3.0, 3.0, 1.0]])
    with pytest.raises(InconsistentSystem):
        remove_redundant_equalities(A, np.array([2.0, -1.0, 0.0]))


def test_divide_actions_bipartite_example():
    # f1(a1, a2, a4), f2(a2, a3), f3(a1)
    relationship = np.array([[1, 1, 0, 1], [0, 1, 1, 0], [1, 0, 0, 0]])
    partition = divide_actions(relationship)
    assert partition.nonbasic == (0, 1, 2)
    assert partition.basic == (3,)


def test_divide_actions_never_leaves_a_constraint_unmatched():
    relationship = np.array([[1, 1, 0, 1], [0, 1, 1, 0], [1, 0, 0, 0]])
    # f3 only depends on a1, so a1 must be nonbasic in any valid division
    assert 0 in divide_actions(relationship).nonbasic


def test_divide_actions_identity():
    partition = divide_actions(np.eye(3, dtype=int))
    assert partition.nonbasic == (0, 1, 2) and partition.basic == ()


def test_divide_actions_linear_skips_parallel_columns():
    A = np.array([[1.0, -1.0, -2.0], [5.0, -1.0, -2.0]])
    partition = divide_actions(A, linear=True)
    assert partition.nonbasic == (0, 1)
    assert np.linalg.matrix_rank(A[:, list(partition.nonbasic)]) == 2


def test_divide_actions_without_matching():
    with pytest.raises(NoPerfectMatching) as info:
        divide_actions(np.array([[1, 0, 0], [1, 0, 0]]))
    assert info.value.matched == 1 and info.value.required == 2


def test_divide_actions_rejects_non_binary_relationship():
    with pytest.raises(ValueError):
        divide_actions(np.array([[0.5, 1.0]]))


def test_relationship_matrix_from_jacobian_sparsity(cartpole, pendulum):
    s = pendulum.reset(0).obs
    assert np.array_equal(relationship_matrix(pendulum.constraint_model(), s, np.zeros(2)), [[1, 1]])
    assert np.array_equal(relationship_matrix(cartpole.constraint_model(), None, np.zeros(2)), [[1, 1]])


# ============================================================================
# EQUALITY SOLVING
# ============================================================================

def test_newton_solve_quadratic():
    model = nonlinear_model()
    solution = newton_solve(model, None, np.array([0.5]), np.zeros(1))
    assert solution == pytest.approx([0.75], abs=1e-12)


@given(st.floats(min_value=-3.0, max_value=3.0))
def test_newton_solve_meets_tolerance(a0):
    model = ConstraintModel(
        n=2,
        eq=lambda a, s: np.array([a[1] ** 3 + a[1] - a[0]]),
        eq_jac=lambda a, s: np.array([[-1.0, 3.0 * a[1] ** 2 + 1.0]]),
        ineq=lambda a, s: np.zeros(0),
        ineq_jac=lambda a, s: np.zeros((0, 2)),
        lower=-np.inf,
        upper=np.inf,
        partition=ActionPartition(basic=(0,), nonbasic=(1,)),
        n_ineq=0,
    )
    nonbasic = newton_solve(model, None, np.array([a0]), np.zeros(1))
    residual = model.eq(np.array([a0, nonbasic[0]]), None)
    assert np.max(np.abs(residual)) <= 1e-8


def test_newton_solve_rejects_bad_inputs():
    model = nonlinear_model()
    with pytest.raises(ValueError):
        newton_solve(model, None, np.array([0.5, 1.0]), np.zeros(1))
    with pytest.raises(ValueError):
        newton_solve(model, None, np.array([0.5]), np.array([np.nan]))


def test_damped_newton_recovers_from_overshoot():
    # undamped Newton on arctan diverges from |x| > 1.39
    x, norm, _ = damped_newton(lambda x: np.arctan(x), lambda x: np.array([[1.0 / (1.0 + x[0] ** 2)]]), np.array([3.0]))
    assert abs(x[0]) <= 1e-8 and norm <= 1e-8


def test_damped_newton_reports_final_residual():
    with pytest.raises(NoConvergence) as info:
        damped_newton(lambda x: x**3, lambda x: np.array([[3.0 * x[0] ** 2]]), np.array([1.0]), tol=1e-12, max_iter=3)
    assert info.value.iterations == 3
    assert info.value.residual == pytest.approx((2.0 / 3.0) ** 9)


def test_solve_block_perturbs_singular_block():
    before = counters["jacobian_perturbation"]
    x = solve_block(np.array([[0.0, 0.0], [0.0, 1.0]]), np.array([1e-8, 2.0]))
    assert counters["jacobian_perturbation"] == before + 1
    assert x == pytest.approx([1.0, 2.0], rel=1e-6)


def test_solve_block_gives_up_when_perturbation_fails():
    with pytest.raises(SingularJacobian):
        solve_block(np.array([[0.0, 0.0], [0.0, -1e-8]]), np.ones(2))


# ============================================================================
# GRADIENTS
# ============================================================================

def test_implicit_jacobian_linear():
    model = linear_model([[1.0, 1.0]], [0.0])
    assert implicit_jacobian(model, None, np.array([0.3, -0.3]))[0, 0] == pytest.approx(-1.0)


def test_implicit_jacobian_nonlinear():
    model = nonlinear_model()
    assert implicit_jacobian(model, None, np.array([0.5, 0.75]))[0, 0] == pytest.approx(-1.0)


def test_implicit_jacobian_off_manifold():
    with pytest.raises(ValueError):
        implicit_jacobian(nonlinear_model(), None, np.array([0.5, 0.0]))
    # the projection stage skips the check
    assert implicit_jacobian(nonlinear_model(), None, np.array([0.5, 0.0]), manifold_tol=None).shape == (1, 1)


def test_implicit_jacobian_matches_finite_differences_on_pendulum(pendulum):
    model = pendulum.constraint_model()
    rng = np.random.default_rng(0)
    for _ in range(100):
        theta = rng.uniform(-1.0, 1.0)
        s = np.array([math.cos(theta), math.sin(theta), rng.normal(), 1.0 + 0.1 * rng.normal(), 0.1 * rng.normal()])
        a_basic = rng.uniform(-5.0, 5.0, 1)
        a = model.partition.assemble(a_basic, model.solve_nonbasic(s, a_basic))
        analytic = implicit_jacobian(model, s, a)
        numeric = finite_diff_jacobian(lambda b: model.solve_nonbasic(s, b), a_basic)
        assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-7)


def test_reduced_gradient_without_nonbasic_term():
    assert np.array_equal(reduced_gradient(np.array([1.0, 2.0]), np.zeros(1), np.ones((1, 2))), [1.0, 2.0])


def test_reduced_gradient_on_line():
    # f = x1^2 + x2^2 on x1 + x2 = 1 at x1 = 0.3
    r = reduced_gradient(np.array([0.6]), np.array([1.4]), np.array([[-1.0]]))
    assert r == pytest.approx([-0.8])


@settings(max_examples=25)
@given(st.integers(min_value=0, max_value=10_000))
def test_reduced_gradient_matches_composed_finite_difference(seed):
    rng = np.random.default_rng(seed)
    n, k = 5, 2
    A = rng.normal(size=(k, n))
    A[:, n - k :] += 3.0 * np.eye(k)
    b = rng.normal(size=k)
    Q = rng.normal(size=(n, n))
    Q = Q @ Q.T
    model = linear_model(A, b)
    a_basic = rng.normal(size=n - k)

    def solve(basic):
        return newton_solve(model, None, basic, np.zeros(k), tol=1e-12)

    def composed(basic):
        a = model.partition.assemble(basic, solve(basic))
        return np.array([a @ Q @ a])

    a = model.partition.assemble(a_basic, solve(a_basic))
    grad = 2.0 * Q @ a
    r = reduced_gradient(grad[: n - k], grad[n - k :], implicit_jacobian(model, None, a))
    numeric = finite_diff_jacobian(composed, a_basic)[0]
    assert np.allclose(r, numeric, rtol=1e-6, atol=1e-6)


# ============================================================================
# REFORMULATIONS
# ============================================================================

def test_as_inequalities_splits_equalities(cartpole):
    model = cartpole.constraint_model()
    baseline = as_inequalities(model)
    a = np.array([2.0, 0.5])
    F = model.eq(a, None)
    assert baseline.n_eq == 0 and baseline.m == 2
    assert baseline.n_ineq == model.n_ineq + 2
    assert np.allclose(baseline.ineq(a, None), np.concatenate([model.ineq(a, None), F, -F]))
    assert baseline.ineq_jac(a, None).shape == (4, 2)


def test_slack_variables_absorb_inequalities(cartpole):
    model = with_slack_variables(cartpole.constraint_model())
    assert model.n == 4 and model.n_eq == 3 and model.m == 1
    nonbasic = model.solve_nonbasic(None, np.array([5.0]))
    a = model.partition.assemble(np.array([5.0]), nonbasic)
    assert np.max(np.abs(model.eq(a, None))) <= 1e-12
    assert np.allclose(model.upper[2:], 0.0)


# ============================================================================
# GRG OPTIMIZER
# ============================================================================

def test_grg_quadratic_on_line():
    problem = NlpProblem(
        objective=lambda x: float(x @ x),
        gradient=lambda x: 2.0 * x,
        eq=lambda x: np.array([x[0] + x[1] - 1.0]),
        eq_jac=lambda x: np.array([[1.0, 1.0]]),
        lower=-10.0,
        upper=10.0,
        x0=np.zeros(2),
    )
    result = grg_minimize(problem)
    assert result.status is GrgStatus.CONVERGED
    assert result.x == pytest.approx([0.5, 0.5], abs=1e-5)
    assert result.f == pytest.approx(0.5, abs=1e-9)


def test_grg_linear_objective_on_circle():
    problem = NlpProblem(
        objective=lambda x: float(x[0] + x[1]),
        gradient=lambda x: np.ones(2),
        eq=lambda x: np.array([x[0] ** 2 + x[1] ** 2 - 1.0]),
        eq_jac=lambda x: np.array([[2.0 * x[0], 2.0 * x[1]]]),
        lower=-2.0,
        upper=2.0,
        x0=np.array([-0.6, -0.8]),
    )
    result = grg_minimize(problem)
    assert result.x == pytest.approx([-math.sqrt(0.5), -math.sqrt(0.5)], abs=1e-3)
    assert abs(result.x @ result.x - 1.0) <= 1e-8


def test_grg_respects_box_bounds():
    problem = NlpProblem(
        objective=lambda x: float((x[0] - 5.0) ** 2 + x[1] ** 2),
        gradient=lambda x: np.array([2.0 * (x[0] - 5.0), 2.0 * x[1]]),
        eq=lambda x: np.array([x[1] - x[0]]),
        eq_jac=lambda x: np.array([[-1.0, 1.0]]),
        lower=-1.0,
        upper=1.0,
        x0=np.zeros(2),
        partition=ActionPartition(basic=(0,), nonbasic=(1,)),
    )
    result = grg_minimize(problem)
    assert result.x == pytest.approx([1.0, 1.0], abs=1e-9)


def _parabola_problem(a, b, c1, c2, x1_start):
    return NlpProblem(
        objective=lambda x: float((x[0] - c1) ** 2 + (x[1] - c2) ** 2),
        gradient=lambda x: np.array([2.0 * (x[0] - c1), 2.0 * (x[1] - c2)]),
        eq=lambda x: np.array([x[1] - a * x[0] ** 2 - b * x[0]]),
        eq_jac=lambda x: np.array([[-2.0 * a * x[0] - b, 1.0]]),
        lower=np.array([-1.5, -10.0]),
        upper=np.array([1.5, 10.0]),
        x0=np.array([x1_start, a * x1_start**2 + b * x1_start]),
        partition=ActionPartition(basic=(0,), nonbasic=(1,)),
    )


def _grid_minimum(a, b, c1, c2, low=-1.5, high=1.5, points=2_000_000):
    t = np.linspace(low, high, points)
    return float(np.min((t - c1) ** 2 + (a * t**2 + b * t - c2) ** 2))


def test_grg_matches_grid_search_on_parabola():
    problem = _parabola_problem(1.0, 0.0, 2.0, 1.0, 1.0)
    problem.lower = np.array([-3.0, -3.0])
    problem.upper = np.array([3.0, 3.0])
    result = grg_minimize(problem)
    assert result.f == pytest.approx(_grid_minimum(1.0, 0.0, 2.0, 1.0, -math.sqrt(3.0), math.sqrt(3.0)), abs=1e-3)


def _random_parabola(rng):
    """Returns: Tuple of (a, b, c1, c2) with the target up to 1 above or below the vertex."""
    a, b = rng.uniform(0.5, 1.5), rng.uniform(-1.0, 1.0)
    vertex = -(b**2) / (4.0 * a)
    return a, b, rng.uniform(-1.0, 1.0), vertex + rng.uniform(-1.0, 1.0)


def test_grg_single_call_matches_grid_oracle_below_vertex():
    rng = np.random.default_rng(2024)
    for _ in range(20):
        a, b = rng.uniform(0.5, 1.5), rng.uniform(-1.0, 1.0)
        # targets below the vertex have a single nearest point on the parabola
        c1 = rng.uniform(-1.0, 1.0)
        c2 = -(b**2) / (4.0 * a) - rng.uniform(0.1, 1.0)
        result = grg_minimize(_parabola_problem(a, b, c1, c2, 0.0))
        assert result.f == pytest.approx(_grid_minimum(a, b, c1, c2), abs=1e-3)


def test_grg_multistart_matches_grid_oracle_on_random_nonconvex_instances():
    rng = np.random.default_rng(2025)
    above_vertex = 0
    for _ in range(20):
        a, b, c1, c2 = _random_parabola(rng)
        # targets above the vertex see one local minimum on each arm
        above_vertex += c2 > -(b**2) / (4.0 * a)
        # one grg_minimize call per start, 61 starts 0.05 apart on the basic coordinate, best kept
        best = min(grg_minimize(_parabola_problem(a, b, c1, c2, start)).f for start in np.linspace(-1.5, 1.5, 61))
        assert best == pytest.approx(_grid_minimum(a, b, c1, c2), abs=1e-3)
    assert 0 < above_vertex < 20


def test_grg_accepted_iterates_descend_and_stay_feasible():
    rng = np.random.default_rng(7)
    for _ in range(20):
        a, b, c1, c2 = _random_parabola(rng)
        problem = _parabola_problem(a, b, c1, c2, rng.uniform(-1.5, 1.5))
        # the gradient is evaluated once per outer iteration, at the accepted iterate
        accepted = []

        def recording(x, gradient=problem.gradient, objective=problem.objective):
            accepted.append(objective(x))
            return gradient(x)

        problem.gradient = recording
        result = grg_minimize(problem)
        assert len(accepted) >= 1
        assert np.all(np.diff(accepted) <= 0.0)
        assert result.f <= accepted[0]
        assert np.all(result.x >= problem.lower) and np.all(result.x <= problem.upper)
        assert np.max(np.abs(problem.eq(result.x))) <= 1e-10


def test_grg_initial_point_outside_box():
    with pytest.raises(ValueError):
        NlpProblem(
            objective=lambda x: 0.0,
            gradient=lambda x: np.zeros(2),
            eq=lambda x: np.array([x[0] - x[1]]),
            eq_jac=lambda x: np.array([[1.0, -1.0]]),
            lower=0.0,
            upper=1.0,
            x0=np.array([2.0, 0.0]),
        )
