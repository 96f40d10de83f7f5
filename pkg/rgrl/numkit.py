"""
Dense numeric kernel: linear solves, finite differences and seeded random streams.

Matrices are plain float64 numpy arrays. Everything here is small (the largest
system is the 28x28 power-flow block) so no sparse structures are used.
"""
import json
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
import scipy.linalg
from scipy.linalg import LinAlgWarning

from rgrl.errors import NonFiniteOutput, SingularMatrix

PIVOT_THRESHOLD = 1e-12

_BIT_GENERATORS = {
    "pcg64": np.random.PCG64,
    "philox": np.random.Philox,
}


def as_matrix(values, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Coerce to a finite 2-D float64 array, checking the shape when given."""
    matrix = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if matrix.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {matrix.shape}")
    if rows is not None and matrix.shape[0] != rows:
        raise ValueError(f"expected {rows} rows, got {matrix.shape[0]}")
    if cols is not None and matrix.shape[1] != cols:
        raise ValueError(f"expected {cols} columns, got {matrix.shape[1]}")
    if not np.all(np.isfinite(matrix)):
        raise NonFiniteOutput("matrix has non-finite entries")
    return matrix


def lu_factor(A: np.ndarray, threshold: float = PIVOT_THRESHOLD):
    """
    Partial-pivoting LU factorization with a pivot-magnitude check.

    Returns:
        The (lu, piv) pair accepted by scipy.linalg.lu_solve.
    """
    A = as_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got {A.shape}")
    with warnings.catch_warnings():
        # exact singularity is reported through the pivot check below
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if pivots.size and pivots.min() < threshold:
        raise SingularMatrix(float(pivots.min()), threshold)
    return lu, piv


def solve_linear(A: np.ndarray, b: np.ndarray, threshold: float = PIVOT_THRESHOLD) -> np.ndarray:
    """Solve A x = b for a square A; b may be a vector or a matrix of right-hand sides."""
    A = as_matrix(A)
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != A.shape[0]:
        raise ValueError(f"right-hand side has {b.shape[0]} rows, matrix has {A.shape[0]}")
    if A.shape[0] == 0:
        return np.zeros_like(b)
    factors = lu_factor(A, threshold)
    return scipy.linalg.lu_solve(factors, b, check_finite=False)


def finite_diff_jacobian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """
    Central-difference Jacobian of a vector function.

    Entry (i, j) is (f_i(x + h e_j) - f_i(x - h e_j)) / (2h).
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=np.float64)

    def evaluate(point: np.ndarray) -> np.ndarray:
        value = np.atleast_1d(np.asarray(f(point), dtype=np.float64))
        if not np.all(np.isfinite(value)):
            raise NonFiniteOutput(f"function returned non-finite values at {point}")
        return value

    columns = []
    for j in range(x.size):
        step = np.zeros_like(x)
        step[j] = h
        columns.append((evaluate(x + step) - evaluate(x - step)) / (2.0 * h))
    if not columns:
        return np.zeros((evaluate(x).size, 0))
    return np.stack(columns, axis=1)


@dataclass
class RngStream:
    """
    Seeded random source owned by a single consumer.

    Equal (seed, algorithm, spawn_key) triples give bit-identical draws on every
    platform, since numpy's bit generators are specified exactly.
    """

    seed: int
    algorithm: str = "pcg64"
    spawn_key: tuple[int, ...] = ()
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.algorithm not in _BIT_GENERATORS:
            raise ValueError(f"unknown algorithm '{self.algorithm}', expected one of {sorted(_BIT_GENERATORS)}")
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self.generator = np.random.Generator(_BIT_GENERATORS[self.algorithm](sequence))

    def spawn(self, key: int) -> "RngStream":
        """Independent child stream, e.g. one per seed worker or per network."""
        return RngStream(self.seed, self.algorithm, self.spawn_key + (key,))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def choice(self, population: int, size: int, replace: bool = False) -> np.ndarray:
        return self.generator.choice(population, size=size, replace=replace)

    def torch_seed(self) -> int:
        """Draw a 63-bit seed for a torch.Generator."""
        return int(self.generator.integers(0, 2**63 - 1))

    def get_state(self) -> dict[str, Any]:
        return self.generator.bit_generator.state

    def set_state(self, state: dict[str, Any]) -> None:
        self.generator.bit_generator.state = state

    def state_json(self) -> str:
        """Bit-generator state as a JSON string; array fields are written as lists."""
        return json.dumps(self.get_state(), default=lambda value: value.tolist())

    def load_state_json(self, text: str) -> None:
        self.set_state(_with_arrays(json.loads(text)))


def _with_arrays(state: Any) -> Any:
    # philox keeps its counter, key and buffer as uint64 arrays
    if isinstance(state, dict):
        return {key: _with_arrays(value) for key, value in state.items()}
    if isinstance(state, list):
        return np.asarray(state, dtype=np.uint64)
    return state
