"""Dense linear algebra kernels: SPD solves, symmetric spectra, plain CG.

Vectors are 1-d float64 arrays, matrices 2-d float64 arrays. All
functions are pure and safe to call concurrently.
"""

from collections.abc import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import BreakdownDetected, DimMismatch, NotSPD, NotSymmetric

SYMMETRY_RTOL = 1e-9
# p'Hp at or below this multiple of |p|^2 is treated as loss of positive
# definiteness rather than rounding noise.
CG_BREAKDOWN_RTOL = 1e-14


def _as_square(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimMismatch(f"expected a square matrix, got shape {a.shape}")
    return a


def _symmetry_defect(a: np.ndarray) -> float:
    scale = np.abs(a).max()
    if scale == 0.0:
        return 0.0
    return np.abs(a - a.T).max() / scale


def spd_solve(a, b) -> np.ndarray:
    """Solve a X = b for symmetric positive definite a via Cholesky.

    b may be a vector or a matrix of right-hand sides. Raises NotSPD if a
    fails the symmetry check or a Cholesky pivot is non-positive.
    """
    a = _as_square(a)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != a.shape[0]:
        raise DimMismatch(f"rhs has {b.shape[0]} rows, matrix is {a.shape[0]}x{a.shape[0]}")
    if _symmetry_defect(a) > SYMMETRY_RTOL:
        raise NotSPD("matrix is not symmetric")
    try:
        factor = cho_factor(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotSPD("non-positive pivot in Cholesky factorization") from exc
    return cho_solve(factor, b, check_finite=False)


def sym_eigenvalues(a) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, sorted in descending order."""
    a = _as_square(a)
    if _symmetry_defect(a) > SYMMETRY_RTOL:
        raise NotSymmetric("matrix is not symmetric")
    return np.linalg.eigvalsh(a)[::-1].copy()


def conjugate_gradient(
    hvp: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    n_steps: int,
    v0: np.ndarray,
) -> np.ndarray:
    """Run n_steps of conjugate gradient on H v = b, H given as an operator.

    Parameters
    ----------
    hvp : callable
        Matrix-vector product of a symmetric positive definite operator.
    b : ndarray
        Right-hand side.
    n_steps : int
        Number of CG iterations; the iterate after n_steps is returned
        (earlier if the residual hits machine precision).
    v0 : ndarray
        Starting point, same dimension as b.
    """
    b = np.asarray(b, dtype=float)
    v = np.asarray(v0, dtype=float).copy()
    if v.shape != b.shape:
        raise DimMismatch(f"v0 shape {v.shape} != rhs shape {b.shape}")
    b_norm = float(np.linalg.norm(b))
    r = b - np.asarray(hvp(v), dtype=float)
    p = r.copy()
    rs = float(r @ r)
    for _ in range(int(n_steps)):
        if np.sqrt(rs) <= 1e-15 * max(b_norm, 1e-300):
            break
        hp = np.asarray(hvp(p), dtype=float)
        curvature = float(p @ hp)
        if curvature <= CG_BREAKDOWN_RTOL * float(p @ p):
            raise BreakdownDetected(f"non-positive curvature {curvature:.3e}")
        alpha = rs / curvature
        v += alpha * p
        r -= alpha * hp
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return v
