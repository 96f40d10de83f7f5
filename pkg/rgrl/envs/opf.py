"""
Optimal power flow with battery energy storage on the 14-bus grid.

Each step is one hour of a day. The agent dispatches generators, sets bus
voltages and charges or discharges batteries; the AC power-flow equations are
the equality constraints and every decision quantity carries a box bound.
"""
import csv
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from rgrl.constraint_core import ConstraintModel
from rgrl.envs.base import EnvState, HardConstrainedEnv, StepResult, as_stream
from rgrl.envs.grid import (
    GridCase,
    complete_action,
    load_case,
    powerflow_jacobian,
    powerflow_residual,
)
from rgrl.errors import SchemaError
from rgrl.numkit import RngStream

logger = logging.getLogger(__name__)

HOURS = 24
ANGLE_BOUND = np.pi / 4


# ============================================================================
# PROFILES
# ============================================================================

@dataclass(frozen=True, eq=False)
class DayProfiles:
    # (24, n_bus) per-unit demand
    pd: np.ndarray
    qd: np.ndarray
    # (24,) price divided by its daily mean
    price: np.ndarray

    def scaled(self, demand_factor: float) -> "DayProfiles":
        return DayProfiles(self.pd * demand_factor, self.qd * demand_factor, self.price)


def default_profiles_path() -> Path:
    return Path(str(resources.files("rgrl.envs") / "data" / "profiles.csv"))


def load_profiles(path: Optional[str | Path] = None, n_bus: int = 14) -> DayProfiles:
    """
    Read hourly demand and price profiles.

    Expected columns: hour, pd_1..pd_n, qd_1..qd_n, price; one row per hour 0..23.
    Demand is taken as per-unit; price is normalized by its daily mean.
    """
    path = Path(path) if path is not None else default_profiles_path()
    where = str(path)
    columns = ["hour"] + [f"pd_{i}" for i in range(1, n_bus + 1)] + [f"qd_{i}" for i in range(1, n_bus + 1)] + ["price"]

    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        missing = [c for c in columns if c not in header]
        if missing:
            raise SchemaError(where, 0, missing[0], "column missing from header")
        table = np.zeros((HOURS, len(columns)))
        count = 0
        for number, row in enumerate(reader, start=1):
            if count >= HOURS:
                raise SchemaError(where, number, "hour", f"more than {HOURS} data rows")
            for j, column in enumerate(columns):
                try:
                    value = float(row[column])
                except (TypeError, ValueError):
                    raise SchemaError(where, number, column, f"not a number: {row[column]!r}") from None
                if not np.isfinite(value):
                    raise SchemaError(where, number, column, "value is not finite")
                table[count, j] = value
            if table[count, 0] != count:
                raise SchemaError(where, number, "hour", f"expected hour {count}, got {row['hour']}")
            count += 1
    if count != HOURS:
        raise SchemaError(where, count, "hour", f"expected {HOURS} data rows, got {count}")

    price = table[:, -1]
    if price.mean() <= 0.0:
        raise SchemaError(where, 0, "price", "daily mean price must be positive")
    return DayProfiles(
        pd=table[:, 1 : n_bus + 1].copy(),
        qd=table[:, n_bus + 1 : 2 * n_bus + 1].copy(),
        price=price / price.mean(),
    )


# ============================================================================
# ENVIRONMENT
# ============================================================================

def battery_limits(case: GridCase, soc: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Battery power bounds tightened so one step keeps soc inside its range.

    Returns:
        Tuple of (lower, upper) power limits per battery
    """
    upper = np.minimum(case.pb_max, (case.soc_max - soc) / (case.eta_ch * dt))
    lower = np.maximum(case.pb_min, (case.soc_min - soc) * case.eta_dis / dt)
    return lower, upper


def next_soc(case: GridCase, soc: np.ndarray, pb: np.ndarray, dt: float) -> np.ndarray:
    """Charging stores eta_ch of the power drawn, discharging drains 1/eta_dis of the power delivered."""
    delta = case.eta_ch * np.maximum(0.0, pb) + np.minimum(0.0, pb) / case.eta_dis
    return np.clip(soc + delta * dt, case.soc_min, case.soc_max)


class OpfBattery(HardConstrainedEnv):
    """
    Observation: demand p_d and q_d per bus, battery soc, and the day's normalized
    price rotated so entry 0 is the current hour (14 + 14 + 5 + 24 values on case14).
    Reward is the negative generation cost minus the battery energy bill.
    """

    name = "opf"

    def __init__(
        self,
        case: Optional[GridCase] = None,
        profiles: Optional[DayProfiles] = None,
        horizon: int = HOURS,
        dt: float = 1.0,
        demand_spread: float = 0.1,
    ):
        self.case = case or load_case()
        self.profiles = profiles or load_profiles(n_bus=self.case.n_bus)
        if self.profiles.pd.shape[1] != self.case.n_bus:
            raise ValueError(f"profiles cover {self.profiles.pd.shape[1]} buses, case has {self.case.n_bus}")
        self.horizon = horizon
        self.dt = dt
        self.demand_spread = demand_spread
        self.action_dim = self.case.action_dim
        self.state_dim = 2 * self.case.n_bus + self.case.n_gen + HOURS

    # State layout ---------------------------------------------------------

    def split_obs(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Returns: Tuple of (pd, qd, soc, price)"""
        n, g = self.case.n_bus, self.case.n_gen
        return obs[:n], obs[n : 2 * n], obs[2 * n : 2 * n + g], obs[2 * n + g :]

    def _observe(self, hour: int, day_scale: float, soc: np.ndarray) -> np.ndarray:
        hour = hour % HOURS
        return np.concatenate(
            [
                self.profiles.pd[hour] * day_scale,
                self.profiles.qd[hour] * day_scale,
                soc,
                np.roll(self.profiles.price, -hour),
            ]
        )

    def reset(self, seed: int | RngStream) -> EnvState:
        rng = as_stream(seed)
        spread = self.demand_spread
        day_scale = float(rng.uniform(1.0 - spread, 1.0 + spread)) if spread > 0 else 1.0
        soc = 0.5 * (self.case.soc_min + self.case.soc_max)
        return EnvState(obs=self._observe(0, day_scale, soc), step=0, day_scale=day_scale)

    def step(self, state: EnvState, action) -> StepResult:
        case = self.case
        action = self.check_action(action)
        pd, qd, soc, price = self.split_obs(state.obs)
        pg, _, _, _, pb = case.unpack(action)

        generation_cost = float(pg @ (case.cost_quadratic * pg) + case.cost_linear @ pg)
        energy_bill = float(price[0] * np.sum(pb) * self.dt)
        reward = -generation_cost - energy_bill

        eq_residual = float(np.max(np.abs(powerflow_residual(case, action, pd, qd))))
        violation = np.maximum(0.0, self._bounds(action, soc))

        step = state.step + 1
        obs = self._observe(step, state.day_scale, next_soc(case, soc, pb, self.dt))
        next_state = EnvState(obs=obs, step=step, day_scale=state.day_scale)
        return StepResult(next_state, reward, step >= self.horizon, eq_residual, violation)

    # Constraints ----------------------------------------------------------

    def _bounds(self, action: np.ndarray, soc: np.ndarray) -> np.ndarray:
        """The box constraints g(a;s) <= 0, two per bounded quantity."""
        case = self.case
        pg, qg, vm, _, pb = case.unpack(action)
        pb_lo, pb_hi = battery_limits(case, soc, self.dt)
        return np.concatenate(
            [
                pg - case.pg_max,
                case.pg_min - pg,
                qg - case.qg_max,
                case.qg_min - qg,
                vm - case.v_max,
                case.v_min - vm,
                pb - pb_hi,
                pb_lo - pb,
            ]
        )

    def _bounds_jacobian(self) -> np.ndarray:
        case = self.case
        rows = []
        for block in (case.pg_slice, case.qg_slice, case.vm_slice, case.pb_slice):
            size = block.stop - block.start
            upper = np.zeros((size, case.action_dim))
            upper[:, block] = np.eye(size)
            rows.extend([upper, -upper])
        return np.vstack(rows)

    def action_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Static box used to scale policy outputs; the slack angle is fixed at 0."""
        case = self.case
        lower = np.concatenate([case.pg_min, case.qg_min, case.v_min, np.full(case.n_bus, -ANGLE_BOUND), case.pb_min])
        upper = np.concatenate([case.pg_max, case.qg_max, case.v_max, np.full(case.n_bus, ANGLE_BOUND), case.pb_max])
        lower[case.slack_angle_index] = upper[case.slack_angle_index] = 0.0
        return lower, upper

    def complete(self, s, a_basic: np.ndarray, warm_start: Optional[np.ndarray] = None, tol: float = 1e-10) -> np.ndarray:
        """Nonbasic actions for the given basic ones, warm-started from a previous solution when given."""
        case = self.case
        partition = case.partition()
        pd, qd, _, _ = self.split_obs(np.asarray(s))
        a = np.zeros(case.action_dim)
        a[case.vm_slice] = 1.0
        a[list(partition.basic)] = a_basic
        a[case.slack_angle_index] = 0.0
        if warm_start is not None:
            a[list(partition.nonbasic)] = warm_start
        return complete_action(case, a, pd, qd, tol=tol)[list(partition.nonbasic)]

    def constraint_model(self) -> ConstraintModel:
        case = self.case
        bounds_jacobian = self._bounds_jacobian()

        def eq(a, s):
            pd, qd, _, _ = self.split_obs(s)
            return powerflow_residual(case, a, pd, qd)

        def eq_jac(a, s):
            return powerflow_jacobian(case, a)

        def ineq(a, s):
            _, _, soc, _ = self.split_obs(s)
            return self._bounds(a, soc)

        lower, upper = self.action_box()
        return ConstraintModel(
            n=case.action_dim,
            eq=eq,
            eq_jac=eq_jac,
            ineq=ineq,
            ineq_jac=lambda a, s: bounds_jacobian.copy(),
            lower=lower,
            upper=upper,
            partition=case.partition(),
            n_ineq=bounds_jacobian.shape[0],
            pinned=(case.slack_angle_index,),
            solve_nonbasic=self.complete,
            name=self.name,
        )
