import math

import numpy as np
import pytest

from rgrl.action_pipeline import construct
from rgrl.constraint_core import implicit_jacobian
from rgrl.envs import BENCHMARKS, EnvState, OpfBattery, SpringPendulum, make_env
from rgrl.envs import cartpole as cartpole_module
from rgrl.envs import pendulum as pendulum_module
from rgrl.envs.cartpole import CartPoleParams
from rgrl.envs.opf import battery_limits, next_soc
from rgrl.envs.pendulum import PendulumParams, observe
from rgrl.errors import SingularJacobian
from rgrl.numkit import finite_diff_jacobian


@pytest.mark.parametrize(
    "benchmark, state_dim, action_dim, n_eq, n_ineq",
    [("cartpole", 6, 2, 1, 2), ("pendulum", 5, 2, 1, 1), ("opf", 57, 43, 28, 58)],
)
def test_dimensions(benchmark, state_dim, action_dim, n_eq, n_ineq):
    env = make_env(benchmark)
    model = env.constraint_model()
    assert env.state_dim == state_dim
    assert env.action_dim == action_dim == model.n
    assert model.n_eq == n_eq
    assert model.n_ineq == n_ineq
    assert env.reset(0).obs.shape == (state_dim,)


def test_unknown_benchmark():
    with pytest.raises(ValueError):
        make_env("mountain-car")


@pytest.mark.parametrize("benchmark", BENCHMARKS)
def test_reset_is_deterministic(benchmark):
    env = make_env(benchmark)
    first, second = env.reset(42), env.reset(42)
    assert np.array_equal(first.obs, second.obs)
    assert first.day_scale == second.day_scale
    assert not np.array_equal(first.obs, env.reset(43).obs)


@pytest.mark.parametrize("benchmark", BENCHMARKS)
def test_step_is_pure(benchmark):
    env = make_env(benchmark)
    model = env.constraint_model()
    rng = np.random.default_rng(17)
    state = env.reset(3)
    obs_before = state.obs.copy()
    action = rng.uniform(model.lower, model.upper)
    action_before = action.copy()

    first = env.step(state, action)
    second = make_env(benchmark).step(state, action)
    assert first.next_state.obs.tobytes() == second.next_state.obs.tobytes()
    assert first.reward == second.reward
    assert first.done == second.done
    assert first.eq_residual == second.eq_residual
    assert first.ineq_violation.tobytes() == second.ineq_violation.tobytes()
    assert first.next_state.step == second.next_state.step == state.step + 1
    assert state.obs.tobytes() == obs_before.tobytes()
    assert action.tobytes() == action_before.tobytes()


def test_step_rejects_wrong_action_size(cartpole):
    with pytest.raises(ValueError):
        cartpole.step(cartpole.reset(0), np.zeros(3))


# ============================================================================
# SAFE CARTPOLE
# ============================================================================

def test_cartpole_reset_is_near_upright(cartpole):
    for seed in range(20):
        assert abs(cartpole.reset(seed).obs[3]) <= 0.05


def test_cartpole_balanced_forces_have_no_residual(cartpole):
    result = cartpole.step(cartpole.reset(0), np.array([math.sqrt(3.0), 1.0]))
    assert result.eq_residual == pytest.approx(0.0, abs=1e-15)
    assert result.reward == 1.0
    assert np.all(result.ineq_violation == 0.0)


def test_cartpole_frictionless_matches_classic_dynamics():
    params = CartPoleParams(cart_friction=0.0, pole_friction=0.0)
    total = params.cart_mass + params.pole_mass
    ml = params.pole_mass * params.pole_length
    rng = np.random.default_rng(12)
    for _ in range(100):
        x_dot, theta, theta_dot = rng.uniform(-1.0, 1.0), rng.uniform(-0.5, 0.5), rng.uniform(-2.0, 2.0)
        f_x, f_y = rng.uniform(-10.0, 10.0), rng.uniform(-5.0, 5.0)
        x_ddot, theta_ddot, _ = cartpole_module.accelerations(params, x_dot, theta, theta_dot, f_x, f_y)

        sin, cos = math.sin(theta), math.cos(theta)
        temp = (f_x + ml * theta_dot**2 * sin) / total
        expected = (params.gravity * sin - cos * temp) / (params.pole_length * (4.0 / 3.0 - params.pole_mass * cos**2 / total))
        assert theta_ddot == pytest.approx(expected, rel=1e-12, abs=1e-12)
        assert x_ddot == pytest.approx(temp - ml * expected * cos / total, rel=1e-10, abs=1e-12)


def test_cartpole_normal_force_sign_is_resolved():
    params = CartPoleParams()
    # a strong downward pull on a light cart
    _, _, normal = cartpole_module.accelerations(params, 0.5, 0.0, 0.0, 0.0, -50.0)
    assert normal < 0.0


def test_cartpole_terminates_when_pole_falls(cartpole):
    state = EnvState(obs=np.array([0.0, 0.0, 0.0, 0.25, 0.0, 0.0]))
    assert cartpole.step(state, np.zeros(2)).done


def test_cartpole_time_limit(cartpole):
    state = EnvState(obs=np.zeros(6), step=cartpole.horizon - 1)
    assert cartpole.step(state, np.zeros(2)).done


# ============================================================================
# SPRING PENDULUM
# ============================================================================

def test_pendulum_rest_force_holds_length(pendulum):
    p = pendulum.params
    state = EnvState(obs=observe(0.0, 0.0, p.rest_length, 0.0))
    result = pendulum.step(state, np.array([0.0, p.mass * p.gravity]))
    assert result.eq_residual == 0.0
    assert result.reward == 1.0


def test_pendulum_horizontal_free_fall():
    p = PendulumParams()
    theta_ddot, length_ddot = pendulum_module.accelerations(p, math.pi / 2, 0.0, p.rest_length, 0.0, 0.0, 0.0)
    assert theta_ddot == pytest.approx(-p.gravity / p.rest_length)
    assert length_ddot == pytest.approx(0.0, abs=1e-12)


def test_pendulum_force_budget_violation(pendulum):
    result = pendulum.step(pendulum.reset(0), np.array([20.0, 10.0]))
    assert result.ineq_violation[0] == pytest.approx(100.0)


def test_pendulum_singular_at_horizontal(pendulum):
    model = pendulum.constraint_model()
    with pytest.raises(SingularJacobian):
        construct(model, observe(math.pi / 2, 0.0, 1.0, 0.0), np.array([0.0]))


def test_pendulum_energy_is_conserved_with_rigid_length():
    env = SpringPendulum()
    p = env.params
    model = env.constraint_model()

    def energy(obs):
        cos, _, theta_dot, length, length_dot = obs
        return 0.5 * p.mass * (length**2 * theta_dot**2 + length_dot**2) - p.mass * p.gravity * length * cos

    state = EnvState(obs=observe(0.3, 0.0, p.rest_length, 0.0))
    initial = energy(state.obs)
    drift = 0.0
    for _ in range(200):
        cos, sin, theta_dot, length, length_dot = state.obs
        # purely radial force: no work done, length held fixed
        f_s = -p.mass * length_dot / p.dt - p.mass * length * theta_dot**2 + p.stiffness * (length - p.rest_length)
        f_s += p.mass * p.gravity * cos
        action = construct(model, state.obs, np.array([f_s * sin]))
        state = env.step(state, action).next_state
        drift = max(drift, abs(energy(state.obs) - initial))
        assert state.obs[3] == pytest.approx(p.rest_length, abs=1e-9)
    assert drift <= 0.01 * abs(initial)


# ============================================================================
# OPF WITH BATTERIES
# ============================================================================

def test_opf_reset_starts_half_charged(opf):
    _, _, soc, price = opf.split_obs(opf.reset(3).obs)
    assert np.array_equal(soc, 0.5 * (opf.case.soc_max + opf.case.soc_min))
    assert price.mean() == pytest.approx(1.0)


def test_opf_reset_draws_day_scale(opf):
    scales = {opf.reset(seed).day_scale for seed in range(10)}
    assert len(scales) == 10
    assert all(0.9 <= scale <= 1.1 for scale in scales)


def test_opf_without_spread_is_nominal():
    env = OpfBattery(demand_spread=0.0)
    pd, _, _, _ = env.split_obs(env.reset(0).obs)
    assert np.array_equal(pd, env.profiles.pd[0])


def test_idle_batteries_keep_charge(opf):
    soc = np.full(opf.case.n_gen, 0.4)
    assert np.array_equal(next_soc(opf.case, soc, np.zeros(opf.case.n_gen), 1.0), soc)


def test_charging_efficiency(opf):
    case = opf.case
    soc = np.full(case.n_gen, 0.5)
    charged = next_soc(case, soc, np.full(case.n_gen, 0.1), 1.0)
    drained = next_soc(case, soc, np.full(case.n_gen, -0.1), 1.0)
    assert charged == pytest.approx(0.5 + 0.1 * case.eta_ch)
    assert drained == pytest.approx(0.5 - 0.1 / case.eta_dis)


def test_charge_then_discharge_returns_round_trip_energy(opf):
    case = opf.case
    state = opf.reset(0)
    _, _, soc_start, _ = opf.split_obs(state.obs)
    drawn = 0.1

    a = np.zeros(case.action_dim)
    a[case.vm_slice] = 1.0
    a[case.pb_slice] = drawn
    state = opf.step(state, a).next_state
    _, _, soc_full, _ = opf.split_obs(state.obs)
    assert soc_full == pytest.approx(soc_start + drawn * case.eta_ch * opf.dt)

    # discharge exactly what was stored
    delivered = drawn * case.eta_ch * case.eta_dis
    a[case.pb_slice] = -delivered
    state = opf.step(state, a).next_state
    _, _, soc_end, _ = opf.split_obs(state.obs)
    assert soc_end == pytest.approx(soc_start, abs=1e-12)
    assert delivered / drawn == pytest.approx(case.eta_ch * case.eta_dis)


def test_full_battery_cannot_charge(opf):
    lower, upper = battery_limits(opf.case, opf.case.soc_max.copy(), 1.0)
    assert np.all(upper == 0.0)
    assert np.all(lower < 0.0)


def test_opf_step_reward_and_soc(opf, opf_model):
    case = opf.case
    state = opf.reset(0)
    a = np.zeros(case.action_dim)
    a[case.vm_slice] = 1.0
    a[case.pg_slice] = [0.8, 0.4, 0.4, 0.3, 0.2]
    a[case.pb_slice] = [0.1, 0.0, -0.1, 0.0, 0.0]
    result = opf.step(state, a)

    pg = a[case.pg_slice]
    _, _, soc, price = opf.split_obs(state.obs)
    cost = float(np.sum(case.cost_quadratic * pg**2 + case.cost_linear * pg))
    assert result.reward == pytest.approx(-cost - price[0] * 0.0)
    _, _, soc_next, price_next = opf.split_obs(result.next_state.obs)
    assert soc_next[0] == pytest.approx(soc[0] + 0.1 * case.eta_ch[0])
    assert soc_next[2] == pytest.approx(soc[2] - 0.1 / case.eta_dis[2])
    assert price_next[0] == price[1]
    assert result.next_state.day_scale == state.day_scale
    assert result.eq_residual == pytest.approx(np.max(np.abs(opf_model.eq(a, state.obs))))


def test_opf_episode_ends_after_a_day(opf):
    state = EnvState(obs=opf.reset(0).obs, step=opf.horizon - 1)
    a = np.zeros(opf.action_dim)
    a[opf.case.vm_slice] = 1.0
    assert opf.step(state, a).done


# ============================================================================
# CONSTRAINT SENSITIVITY
# ============================================================================

@pytest.mark.parametrize("benchmark", ["cartpole", "pendulum"])
def test_implicit_jacobian_matches_finite_differences(benchmark):
    env = make_env(benchmark)
    model = env.constraint_model()
    low, high = model.basic_bounds()
    rng = np.random.default_rng(23)
    for seed in range(100):
        s = env.reset(seed).obs
        basic = rng.uniform(low, high)
        a = construct(model, s, basic)

        numeric = finite_diff_jacobian(lambda b: model.solve_nonbasic(s, b), basic, h=1e-5)
        assert implicit_jacobian(model, s, a) == pytest.approx(numeric, rel=1e-7, abs=1e-9)
