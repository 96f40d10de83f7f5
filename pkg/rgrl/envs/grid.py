"""
Power-grid model: case loading, admittance matrix and AC power-flow equations.

Full OPF actions are ordered (p_g, q_g, |v|, angle v, p_b) with one battery per
generator bus. All quantities are per-unit on the case base.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from rgrl.constraint_core import ActionPartition, damped_newton
from rgrl.errors import SchemaError

logger = logging.getLogger(__name__)

POWERFLOW_TOL = 1e-10
POWERFLOW_MAX_ITER = 50

_SECTIONS = {
    "buses": ("id", "type", "pd", "qd", "gs", "bs", "vmin", "vmax"),
    "branches": ("from", "to", "r", "x", "b"),
    "generators": ("bus", "pmin", "pmax", "qmin", "qmax"),
    "batteries": ("bus", "pmin", "pmax", "soc_min", "soc_max", "eta_ch", "eta_dis"),
    "costs": ("quadratic", "linear"),
}
SLACK_TYPE = 3


# ============================================================================
# CASE
# ============================================================================

@dataclass(frozen=True, eq=False)
class GridCase:
    """Network data; bus indices are 0-based and gen_buses[0] is the slack bus."""

    name: str
    base_mva: float
    Y: np.ndarray
    gen_buses: tuple[int, ...]
    pd: np.ndarray
    qd: np.ndarray
    v_min: np.ndarray
    v_max: np.ndarray
    pg_min: np.ndarray
    pg_max: np.ndarray
    qg_min: np.ndarray
    qg_max: np.ndarray
    cost_quadratic: np.ndarray
    cost_linear: np.ndarray
    pb_min: np.ndarray
    pb_max: np.ndarray
    soc_min: np.ndarray
    soc_max: np.ndarray
    eta_ch: np.ndarray
    eta_dis: np.ndarray

    @property
    def n_bus(self) -> int:
        return self.Y.shape[0]

    @property
    def n_gen(self) -> int:
        return len(self.gen_buses)

    @property
    def slack(self) -> int:
        return self.gen_buses[0]

    @property
    def action_dim(self) -> int:
        return 3 * self.n_gen + 2 * self.n_bus

    @cached_property
    def load_buses(self) -> list[int]:
        return [i for i in range(self.n_bus) if i not in self.gen_buses]

    @cached_property
    def non_slack_buses(self) -> list[int]:
        return [i for i in range(self.n_bus) if i != self.slack]

    @cached_property
    def gen_incidence(self) -> np.ndarray:
        """n_bus x n_gen matrix placing generator (and battery) quantities on their buses."""
        E = np.zeros((self.n_bus, self.n_gen))
        E[list(self.gen_buses), range(self.n_gen)] = 1.0
        return E

    # Action layout -------------------------------------------------------

    @property
    def pg_slice(self) -> slice:
        return slice(0, self.n_gen)

    @property
    def qg_slice(self) -> slice:
        return slice(self.n_gen, 2 * self.n_gen)

    @property
    def vm_slice(self) -> slice:
        return slice(2 * self.n_gen, 2 * self.n_gen + self.n_bus)

    @property
    def va_slice(self) -> slice:
        return slice(2 * self.n_gen + self.n_bus, 2 * self.n_gen + 2 * self.n_bus)

    @property
    def pb_slice(self) -> slice:
        return slice(2 * self.n_gen + 2 * self.n_bus, self.action_dim)

    @property
    def slack_angle_index(self) -> int:
        return self.va_slice.start + self.slack

    def unpack(self, action: np.ndarray) -> tuple[np.ndarray, ...]:
        """Split a full action into (p_g, q_g, |v|, angle v, p_b)."""
        action = np.asarray(action, dtype=np.float64)
        if action.size != self.action_dim:
            raise ValueError(f"expected a {self.action_dim}-dim OPF action, got {action.size}")
        return (
            action[self.pg_slice],
            action[self.qg_slice],
            action[self.vm_slice],
            action[self.va_slice],
            action[self.pb_slice],
        )

    def partition(self) -> ActionPartition:
        """
        Basic: non-slack p_g, generator-bus |v|, the slack angle and every p_b.
        Nonbasic: slack p_g, every q_g, load-bus |v| and non-slack angles.
        """
        basic = (
            [self.pg_slice.start + k for k in range(1, self.n_gen)]
            + [self.vm_slice.start + i for i in sorted(self.gen_buses)]
            + [self.slack_angle_index]
            + list(range(self.pb_slice.start, self.pb_slice.stop))
        )
        nonbasic = [i for i in range(self.action_dim) if i not in set(basic)]
        return ActionPartition(basic=tuple(sorted(basic)), nonbasic=tuple(nonbasic))


def _rows(data: dict, section: str, path: str) -> list[list[float]]:
    columns = _SECTIONS[section]
    rows = data.get(section)
    if not isinstance(rows, list) or not rows:
        raise SchemaError(path, 0, section, "section is missing or empty")
    parsed = []
    for number, row in enumerate(rows, start=1):
        if not isinstance(row, list) or len(row) != len(columns):
            raise SchemaError(path, number, section, f"expected {len(columns)} values {columns}")
        values = []
        for column, value in zip(columns, row):
            try:
                values.append(float(value))
            except (TypeError, ValueError):
                raise SchemaError(path, number, column, f"not a number: {value!r}") from None
            if not np.isfinite(values[-1]):
                raise SchemaError(path, number, column, "value is not finite")
        parsed.append(values)
    return parsed


def build_admittance(n_bus: int, branches: list[list[float]], shunts: np.ndarray) -> np.ndarray:
    """Bus admittance matrix from pi-model branches without taps plus bus shunts."""
    Y = np.zeros((n_bus, n_bus), dtype=np.complex128)
    for f, t, r, x, b in branches:
        f, t = int(f) - 1, int(t) - 1
        y = 1.0 / complex(r, x)
        charging = 0.5j * b
        Y[f, f] += y + charging
        Y[t, t] += y + charging
        Y[f, t] -= y
        Y[t, f] -= y
    Y[np.diag_indices(n_bus)] += shunts
    return Y


def default_case_path() -> Path:
    return Path(str(resources.files("rgrl.envs") / "data" / "case14.yaml"))


def load_case(path: Optional[str | Path] = None) -> GridCase:
    """Read a YAML grid case; the bundled IEEE 14-bus case when no path is given."""
    path = Path(path) if path is not None else default_case_path()
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    where = str(path)

    buses = _rows(data, "buses", where)
    n_bus = len(buses)
    ids = [int(row[0]) for row in buses]
    if ids != list(range(1, n_bus + 1)):
        raise SchemaError(where, 0, "id", "bus ids must be 1..n in order")
    base_mva = float(data.get("base_mva", 100.0))

    branches = _rows(data, "branches", where)
    for number, row in enumerate(branches, start=1):
        if not (1 <= row[0] <= n_bus and 1 <= row[1] <= n_bus) or row[0] == row[1]:
            raise SchemaError(where, number, "from", "branch must connect two distinct existing buses")
        if row[2] == 0.0 and row[3] == 0.0:
            raise SchemaError(where, number, "x", "branch impedance is zero")

    generators = _rows(data, "generators", where)
    gen_buses = tuple(int(row[0]) - 1 for row in generators)
    slack_buses = [i for i, row in enumerate(buses) if int(row[1]) == SLACK_TYPE]
    if slack_buses != [gen_buses[0]]:
        raise SchemaError(where, 1, "bus", "the first generator must sit on the single slack bus")
    if len(set(gen_buses)) != len(gen_buses):
        raise SchemaError(where, 0, "bus", "at most one generator per bus")

    batteries = _rows(data, "batteries", where)
    if tuple(int(row[0]) - 1 for row in batteries) != gen_buses:
        raise SchemaError(where, 0, "bus", "batteries must sit on the generator buses, in generator order")
    costs = _rows(data, "costs", where)
    if len(costs) != len(generators):
        raise SchemaError(where, 0, "costs", "one cost row per generator")

    bus = np.array(buses)
    gen = np.array(generators)
    bat = np.array(batteries)
    cost = np.array(costs)
    shunts = (bus[:, 4] + 1j * bus[:, 5]) / base_mva
    case = GridCase(
        name=str(data.get("name", path.stem)),
        base_mva=base_mva,
        Y=build_admittance(n_bus, branches, shunts),
        gen_buses=gen_buses,
        pd=bus[:, 2].copy(),
        qd=bus[:, 3].copy(),
        v_min=bus[:, 6].copy(),
        v_max=bus[:, 7].copy(),
        pg_min=gen[:, 1].copy(),
        pg_max=gen[:, 2].copy(),
        qg_min=gen[:, 3].copy(),
        qg_max=gen[:, 4].copy(),
        cost_quadratic=cost[:, 0].copy(),
        cost_linear=cost[:, 1].copy(),
        pb_min=bat[:, 1].copy(),
        pb_max=bat[:, 2].copy(),
        soc_min=bat[:, 3].copy(),
        soc_max=bat[:, 4].copy(),
        eta_ch=bat[:, 5].copy(),
        eta_dis=bat[:, 6].copy(),
    )
    logger.debug("Loaded grid case %s: %d buses, %d generators", case.name, case.n_bus, case.n_gen)
    return case


# ============================================================================
# POWER FLOW
# ============================================================================

def _power_derivatives(Y: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Derivatives of S = diag(V) conj(Y V) with respect to |V| and angle V.

    Returns:
        Tuple of (dS_dVm, dS_dVa), both complex n x n
    """
    I = Y @ V
    diag_V = np.diag(V)
    diag_I = np.diag(I)
    diag_V_norm = np.diag(V / np.abs(V))
    dS_dVm = diag_V @ np.conj(Y @ diag_V_norm) + np.conj(diag_I) @ diag_V_norm
    dS_dVa = 1j * diag_V @ np.conj(diag_I - Y @ diag_V)
    return dS_dVm, dS_dVa


def bus_injections(case: GridCase, action: np.ndarray, pd: np.ndarray, qd: np.ndarray) -> np.ndarray:
    """Complex scheduled injection per bus: (p_g - p_d - p_b) + (q_g - q_d)i."""
    pg, qg, _, _, pb = case.unpack(action)
    E = case.gen_incidence
    return (E @ (pg - pb) - pd) + 1j * (E @ qg - qd)


def powerflow_residual(case: GridCase, action: np.ndarray, pd: np.ndarray, qd: np.ndarray) -> np.ndarray:
    """
    Power-flow mismatch, 2 n_bus values.

    Active mismatches per bus, then reactive ones; zero when the action satisfies
    the AC power-flow equations for demand (pd, qd).
    """
    _, _, vm, va, _ = case.unpack(action)
    V = vm * np.exp(1j * va)
    mismatch = bus_injections(case, action, pd, qd) - V * np.conj(case.Y @ V)
    return np.concatenate([mismatch.real, mismatch.imag])


def powerflow_jacobian(case: GridCase, action: np.ndarray) -> np.ndarray:
    """Analytic Jacobian of powerflow_residual with respect to the full action, 2 n_bus x action_dim."""
    _, _, vm, va, _ = case.unpack(action)
    n = case.n_bus
    V = vm * np.exp(1j * va)
    dS_dVm, dS_dVa = _power_derivatives(case.Y, V)
    E = case.gen_incidence

    J = np.zeros((2 * n, case.action_dim))
    J[:n, case.pg_slice] = E
    J[n:, case.qg_slice] = E
    J[:n, case.pb_slice] = -E
    J[:n, case.vm_slice] = -dS_dVm.real
    J[n:, case.vm_slice] = -dS_dVm.imag
    J[:n, case.va_slice] = -dS_dVa.real
    J[n:, case.va_slice] = -dS_dVa.imag
    return J


def complete_action(
    case: GridCase,
    action: np.ndarray,
    pd: np.ndarray,
    qd: np.ndarray,
    tol: float = POWERFLOW_TOL,
    max_iter: int = POWERFLOW_MAX_ITER,
) -> np.ndarray:
    """
    Fill the nonbasic entries of an action whose basic entries are set.

    Step 1 solves the active balance at non-slack buses and the reactive
    balance at load buses for the non-slack angles and load-bus magnitudes by
    Newton's method, starting from the nonbasic values already in the action.
    Step 2 reads q_g and the slack p_g off the resulting flows in closed form.
    """
    a = np.array(action, dtype=np.float64)
    vm, va = a[case.vm_slice], a[case.va_slice]
    non_slack, load = case.non_slack_buses, case.load_buses
    injection = bus_injections(case, a, pd, qd)
    p_target, q_target = injection.real[non_slack], injection.imag[load]

    def voltages(x: np.ndarray) -> np.ndarray:
        angles, magnitudes = va.copy(), vm.copy()
        angles[non_slack] = x[: len(non_slack)]
        magnitudes[load] = x[len(non_slack):]
        return magnitudes * np.exp(1j * angles)

    def residual(x: np.ndarray) -> np.ndarray:
        V = voltages(x)
        S = V * np.conj(case.Y @ V)
        return np.concatenate([p_target - S.real[non_slack], q_target - S.imag[load]])

    def jacobian(x: np.ndarray) -> np.ndarray:
        dS_dVm, dS_dVa = _power_derivatives(case.Y, voltages(x))
        top = np.hstack([dS_dVa.real[np.ix_(non_slack, non_slack)], dS_dVm.real[np.ix_(non_slack, load)]])
        bottom = np.hstack([dS_dVa.imag[np.ix_(load, non_slack)], dS_dVm.imag[np.ix_(load, load)]])
        return -np.vstack([top, bottom])

    x0 = np.concatenate([va[non_slack], vm[load]])
    x, norm, iterations = damped_newton(residual, jacobian, x0, tol, max_iter)
    logger.debug("Power flow converged in %d iterations (residual %.2e)", iterations, norm)

    V = voltages(x)
    S = V * np.conj(case.Y @ V)
    va = va.copy()
    vm = vm.copy()
    va[non_slack] = x[: len(non_slack)]
    vm[load] = x[len(non_slack):]
    a[case.va_slice] = va
    a[case.vm_slice] = vm

    gen = list(case.gen_buses)
    pb = a[case.pb_slice]
    a[case.qg_slice] = S.imag[gen] + qd[gen]
    a[case.pg_slice.start] = S.real[case.slack] + pd[case.slack] + pb[0]
    return a


def powerflow_solve_two_step(
    case: GridCase,
    basic: np.ndarray,
    pd: np.ndarray,
    qd: np.ndarray,
    tol: float = POWERFLOW_TOL,
    max_iter: int = POWERFLOW_MAX_ITER,
    warm_start: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Nonbasic power-flow quantities for given basic ones.

    basic holds the free basic entries in partition order with the slack angle
    left out (it is fixed at 0). Returns the nonbasic entries in partition order,
    flat-started (|v| = 1, angle 0) unless warm_start supplies them.
    """
    partition = case.partition()
    free = [i for i in partition.basic if i != case.slack_angle_index]
    basic = np.asarray(basic, dtype=np.float64)
    if basic.size != len(free):
        raise ValueError(f"expected {len(free)} basic power-flow quantities, got {basic.size}")
    a = flat_action(case)
    a[free] = basic
    if warm_start is not None:
        a[list(partition.nonbasic)] = warm_start
    return complete_action(case, a, pd, qd, tol, max_iter)[list(partition.nonbasic)]


def flat_action(case: GridCase) -> np.ndarray:
    """All-zero action with unit voltage magnitudes."""
    a = np.zeros(case.action_dim)
    a[case.vm_slice] = 1.0
    return a
