"""Spring Pendulum: a ball on a light spring held at constant length by two forces."""
import math
from dataclasses import dataclass

import numpy as np

from rgrl.constraint_core import ActionPartition, ConstraintModel
from rgrl.envs.base import EnvState, HardConstrainedEnv, StepResult, as_stream
from rgrl.errors import SingularJacobian
from rgrl.numkit import RngStream

COS_THRESHOLD = 1e-12


@dataclass(frozen=True)
class PendulumParams:
    mass: float = 1.0
    stiffness: float = 40.0
    rest_length: float = 1.0
    gravity: float = 9.8
    force_limit: float = 20.0
    dt: float = 0.05
    horizon: int = 200
    init_noise: float = 0.05


def accelerations(
    params: PendulumParams,
    theta: float,
    theta_dot: float,
    length: float,
    length_dot: float,
    f_x: float,
    f_y: float,
) -> tuple[float, float]:
    """
    Angular and radial accelerations from the Euler-Lagrange equations.

    Returns:
        Tuple of (theta_ddot, length_ddot)
    """
    m, g = params.mass, params.gravity
    sin, cos = math.sin(theta), math.cos(theta)
    f_r = -f_y * sin + f_x * cos
    f_s = f_y * cos + f_x * sin
    theta_ddot = (f_r - 2.0 * m * length_dot * theta_dot - m * g * sin) / (m * length)
    length_ddot = (f_s + m * length * theta_dot**2 - params.stiffness * (length - params.rest_length) - m * g * cos) / m
    return theta_ddot, length_ddot


def observe(theta: float, theta_dot: float, length: float, length_dot: float) -> np.ndarray:
    return np.array([math.cos(theta), math.sin(theta), theta_dot, length, length_dot])


class SpringPendulum(HardConstrainedEnv):
    """
    Observation (cos theta, sin theta, theta_dot, l, l_dot).

    The equality keeps the spring length fixed over the step,
    l_dot + l_ddot * dt = 0, and the forces share the budget f_x^2 + f_y^2 <= f_max^2.
    """

    name = "pendulum"
    state_dim = 5
    action_dim = 2

    def __init__(self, params: PendulumParams | None = None):
        self.params = params or PendulumParams()
        self.horizon = self.params.horizon

    def reset(self, seed: int | RngStream) -> EnvState:
        rng = as_stream(seed)
        p = self.params
        theta, theta_dot = (float(v) for v in rng.uniform(-p.init_noise, p.init_noise, 2))
        return EnvState(obs=observe(theta, theta_dot, p.rest_length, 0.0))

    def step(self, state: EnvState, action) -> StepResult:
        p = self.params
        f_x, f_y = (float(v) for v in self.check_action(action))
        cos, sin, theta_dot, length, length_dot = (float(v) for v in state.obs)
        theta = math.atan2(sin, cos)
        theta_ddot, length_ddot = accelerations(p, theta, theta_dot, length, length_dot, f_x, f_y)

        eq_residual = abs(length_dot + length_ddot * p.dt)
        length_dot = length_dot + p.dt * length_ddot
        length = length + p.dt * length_dot
        theta_dot = theta_dot + p.dt * theta_ddot
        theta = theta + p.dt * theta_dot
        # wrap into (-pi, pi] so the reward sees the distance to upright
        theta = math.atan2(math.sin(theta), math.cos(theta))

        step = state.step + 1
        reward = 1.0 / (1.0 + 100.0 * abs(theta))
        violation = np.array([max(0.0, f_x**2 + f_y**2 - p.force_limit**2)])
        next_state = EnvState(obs=observe(theta, theta_dot, length, length_dot), step=step)
        return StepResult(next_state, reward, step >= p.horizon, eq_residual, violation)

    def constraint_model(self) -> ConstraintModel:
        p = self.params
        m, dt = p.mass, p.dt

        def eq(a, s):
            cos, sin, theta_dot, length, length_dot = s
            f_s = a[1] * cos + a[0] * sin
            length_ddot = (f_s + m * length * theta_dot**2 - p.stiffness * (length - p.rest_length) - m * p.gravity * cos) / m
            return np.array([length_dot + dt * length_ddot])

        def eq_jac(a, s):
            cos, sin = s[0], s[1]
            return np.array([[dt * sin / m, dt * cos / m]])

        def ineq(a, s):
            return np.array([a[0] ** 2 + a[1] ** 2 - p.force_limit**2])

        def ineq_jac(a, s):
            return np.array([[2.0 * a[0], 2.0 * a[1]]])

        def solve_nonbasic(s, a_basic, warm_start=None):
            cos, sin, theta_dot, length, length_dot = s
            if abs(cos) < COS_THRESHOLD:
                raise SingularJacobian(f"f_y cannot hold the spring length at cos(theta) = {cos:.1e}")
            f_x = float(a_basic[0])
            f_s = -m * length_dot / dt - m * length * theta_dot**2 + p.stiffness * (length - p.rest_length) + m * p.gravity * cos
            return np.array([(f_s - f_x * sin) / cos])

        return ConstraintModel(
            n=2,
            eq=eq,
            eq_jac=eq_jac,
            ineq=ineq,
            ineq_jac=ineq_jac,
            lower=-p.force_limit,
            upper=p.force_limit,
            partition=ActionPartition(basic=(0,), nonbasic=(1,)),
            n_ineq=1,
            solve_nonbasic=solve_nonbasic,
            name=self.name,
        )
