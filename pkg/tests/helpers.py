"""Small constraint models shared by several test modules."""
import numpy as np

from rgrl.constraint_core import ActionPartition, ConstraintModel


def linear_model(A, b, C=None, d=None, partition=None, lower=-np.inf, upper=np.inf) -> ConstraintModel:
    """Model with equalities A a + b = 0 and inequalities C a - d <= 0, state ignored."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64)
    n = A.shape[1]
    C = np.zeros((0, n)) if C is None else np.atleast_2d(np.asarray(C, dtype=np.float64))
    d = np.zeros(C.shape[0]) if d is None else np.asarray(d, dtype=np.float64)
    if partition is None:
        k = A.shape[0]
        partition = ActionPartition(basic=tuple(range(n - k)), nonbasic=tuple(range(n - k, n)))
    return ConstraintModel(
        n=n,
        eq=lambda a, s: A @ a + b,
        eq_jac=lambda a, s: A.copy(),
        ineq=lambda a, s: C @ a - d,
        ineq_jac=lambda a, s: C.copy(),
        lower=lower,
        upper=upper,
        partition=partition,
        n_ineq=C.shape[0],
        name="linear",
    )
