"""
Safe CartPole: the cart is pushed by two forces at fixed angles.

The pair (f1, f2) must produce no vertical component and a horizontal
resultant inside [f_min, f_max]. The dynamics include cart and pole
friction, with the sign of the normal force resolved by re-evaluation.
"""
import math
from dataclasses import dataclass

import numpy as np

from rgrl.constraint_core import ActionPartition, ConstraintModel
from rgrl.envs.base import EnvState, HardConstrainedEnv, StepResult, as_stream
from rgrl.numkit import RngStream

# force directions at -30 and 60 degrees from the horizontal
COS_1, SIN_1 = math.sqrt(3.0) / 2.0, -0.5
COS_2, SIN_2 = 0.5, math.sqrt(3.0) / 2.0


@dataclass(frozen=True)
class CartPoleParams:
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    # half the pole length
    pole_length: float = 0.5
    gravity: float = 9.8
    cart_friction: float = 5e-4
    pole_friction: float = 2e-6
    dt: float = 0.02
    theta_limit: float = 12.0 * math.pi / 180.0
    x_limit: float = 2.4
    horizon: int = 200
    f_min: float = -10.0
    f_max: float = 10.0
    force_bound: float = 10.0
    init_noise: float = 0.05


def resolve_forces(action: np.ndarray) -> tuple[float, float]:
    """Horizontal and vertical resultant of (f1, f2)."""
    f1, f2 = float(action[0]), float(action[1])
    return COS_1 * f1 + COS_2 * f2, SIN_1 * f1 + SIN_2 * f2


def accelerations(
    params: CartPoleParams,
    x_dot: float,
    theta: float,
    theta_dot: float,
    f_x: float,
    f_y: float,
) -> tuple[float, float, float]:
    """
    Cart and pole accelerations with Coulomb cart friction.

    The cart friction direction depends on the sign of the normal force N_c,
    which itself depends on the pole acceleration: assume N_c > 0, and if the
    resulting N_c is negative evaluate again with the flipped sign.

    Returns:
        Tuple of (x_ddot, theta_ddot, normal_force)
    """
    m_c, m_p, l, g = params.cart_mass, params.pole_mass, params.pole_length, params.gravity
    mu_c, mu_p = params.cart_friction, params.pole_friction
    total = m_c + m_p
    sin, cos = math.sin(theta), math.cos(theta)

    def evaluate(normal_sign: float) -> tuple[float, float]:
        friction_sign = float(np.sign(normal_sign * x_dot))
        numerator = (g * sin - mu_p * theta_dot / (m_p * l)) + cos * (
            (-f_x - m_p * l * theta_dot**2 * (sin + mu_c * friction_sign * cos)) / total + mu_c * g * friction_sign
        )
        denominator = l * (4.0 / 3.0 - m_p * cos / total * (cos - mu_c * friction_sign))
        theta_ddot = numerator / denominator
        normal = f_y + total * g - m_p * l * (theta_ddot * sin + theta_dot**2 * cos)
        return theta_ddot, normal

    normal_sign = 1.0
    theta_ddot, normal = evaluate(normal_sign)
    if normal < 0.0:
        normal_sign = -1.0
        theta_ddot, normal = evaluate(normal_sign)

    friction_sign = float(np.sign(normal * x_dot))
    x_ddot = (f_x + m_p * l * (theta_dot**2 * sin - theta_ddot * cos) - mu_c * normal * friction_sign) / total
    return x_ddot, theta_ddot, normal


class SafeCartPole(HardConstrainedEnv):
    """Observation (x, x_dot, x_ddot, theta, theta_dot, theta_ddot); reward 1 per upright step."""

    name = "cartpole"
    state_dim = 6
    action_dim = 2

    def __init__(self, params: CartPoleParams | None = None):
        self.params = params or CartPoleParams()
        self.horizon = self.params.horizon

    def reset(self, seed: int | RngStream) -> EnvState:
        rng = as_stream(seed)
        noise = self.params.init_noise
        return EnvState(obs=rng.uniform(-noise, noise, self.state_dim))

    def step(self, state: EnvState, action) -> StepResult:
        p = self.params
        action = self.check_action(action)
        x, x_dot, _, theta, theta_dot, _ = (float(v) for v in state.obs)
        f_x, f_y = resolve_forces(action)
        x_ddot, theta_ddot, _ = accelerations(p, x_dot, theta, theta_dot, f_x, f_y)

        # semi-implicit Euler
        x_dot = x_dot + p.dt * x_ddot
        x = x + p.dt * x_dot
        theta_dot = theta_dot + p.dt * theta_ddot
        theta = theta + p.dt * theta_dot

        step = state.step + 1
        done = abs(theta) > p.theta_limit or abs(x) > p.x_limit or step >= p.horizon
        next_state = EnvState(obs=np.array([x, x_dot, x_ddot, theta, theta_dot, theta_ddot]), step=step)
        violation = np.maximum(0.0, np.array([f_x - p.f_max, p.f_min - f_x]))
        return StepResult(next_state, 1.0, bool(done), abs(f_y), violation)

    def constraint_model(self) -> ConstraintModel:
        p = self.params
        eq_row = np.array([[SIN_1, SIN_2]])
        ineq_rows = np.array([[COS_1, COS_2], [-COS_1, -COS_2]])

        def eq(a, s):
            return eq_row @ a

        def ineq(a, s):
            f_x = ineq_rows[0] @ a
            return np.array([f_x - p.f_max, p.f_min - f_x])

        def solve_nonbasic(s, a_basic, warm_start=None):
            return np.array([-SIN_1 * float(a_basic[0]) / SIN_2])

        return ConstraintModel(
            n=2,
            eq=eq,
            eq_jac=lambda a, s: eq_row.copy(),
            ineq=ineq,
            ineq_jac=lambda a, s: ineq_rows.copy(),
            lower=-p.force_bound,
            upper=p.force_bound,
            partition=ActionPartition(basic=(0,), nonbasic=(1,)),
            n_ineq=2,
            solve_nonbasic=solve_nonbasic,
            name=self.name,
        )
