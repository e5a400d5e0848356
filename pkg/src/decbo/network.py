"""Mixing matrices for the agent communication graph.

A WeightMatrix is symmetric, doubly stochastic, and contractive on the
consensus complement; rho is its second-largest eigenvalue magnitude.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadParameter, DimMismatch, NotContractive, NotDoublyStochastic, NotSymmetric
from .numerics import sym_eigenvalues

STOCHASTICITY_ATOL = 1e-12
CONTRACTIVITY_GAP = 1e-10


@dataclass(frozen=True)
class WeightMatrix:
    """Validated mixing matrix with cached spectral quantity rho."""

    w: np.ndarray
    n: int
    rho: float

    def __post_init__(self):
        object.__setattr__(self, "w", np.ascontiguousarray(self.w, dtype=float))
        self.w.setflags(write=False)


def build_ring(n: int, a: float) -> WeightMatrix:
    """Ring graph mixing matrix: self-weight a, each neighbor (1-a)/2.

    The matrix is circulant, so its spectrum is a + (1-a) cos(2 pi j / n).
    """
    if n < 3:
        raise BadParameter(f"ring needs n >= 3 agents, got {n}")
    if not (0.0 < a < 1.0):
        raise BadParameter(f"a must lie in (0,1), got {a}")
    w = np.zeros((n, n))
    side = (1.0 - a) / 2.0
    for i in range(n):
        w[i, i] = a
        w[i, (i + 1) % n] = side
        w[i, (i - 1) % n] = side
    eigs = sym_eigenvalues(w)
    rho = max(abs(eigs[1]), abs(eigs[-1]))
    return WeightMatrix(w=w, n=n, rho=float(rho))


def build_from_matrix(m) -> WeightMatrix:
    """Validate an arbitrary square matrix as a mixing matrix."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimMismatch(f"expected a square matrix, got shape {m.shape}")
    n = m.shape[0]
    if np.abs(m - m.T).max() > STOCHASTICITY_ATOL:
        raise NotSymmetric("mixing matrix must be symmetric")
    if m.min() < -STOCHASTICITY_ATOL:
        raise NotDoublyStochastic("mixing matrix has negative entries")
    ones = np.ones(n)
    if np.abs(m @ ones - ones).max() > STOCHASTICITY_ATOL:
        raise NotDoublyStochastic("row sums differ from one")
    if np.abs(m.T @ ones - ones).max() > STOCHASTICITY_ATOL:
        raise NotDoublyStochastic("column sums differ from one")
    eigs = sym_eigenvalues(m)
    rho = max(abs(eigs[1]), abs(eigs[-1])) if n > 1 else 0.0
    if rho >= 1.0 - CONTRACTIVITY_GAP:
        raise NotContractive(f"rho = {rho:.12f} is not below one")
    return WeightMatrix(w=m, n=n, rho=float(rho))


def load_matrix_csv(path) -> np.ndarray:
    """Read an n x n float matrix from a comma-separated file, no header."""
    return np.loadtxt(Path(path), delimiter=",", ndmin=2)


def mix(w: WeightMatrix, columns) -> np.ndarray:
    """One synchronous averaging round: column i becomes sum_j w_ij col_j.

    Column means are preserved exactly up to rounding because w is doubly
    stochastic.
    """
    columns = np.asarray(columns, dtype=float)
    if columns.ndim != 2 or columns.shape[1] != w.n:
        raise DimMismatch(f"expected {w.n} agent columns, got shape {columns.shape}")
    return columns @ w.w


def mix_stack(w: WeightMatrix, stack: np.ndarray) -> np.ndarray:
    """Mix a stack of per-agent matrices with shape (n, rows, cols)."""
    if stack.shape[0] != w.n:
        raise DimMismatch(f"expected leading dimension {w.n}, got {stack.shape[0]}")
    return np.einsum("ij,jrc->irc", w.w, stack)


def mixing_contraction_check(w: WeightMatrix, k_max: int) -> list[float]:
    """Spectral norms of W^k - J_n/n for k = 1..k_max.

    Each entry is bounded by rho^k because W^k and J_n commute and are
    simultaneously diagonalizable.
    """
    if k_max < 1:
        raise BadParameter(f"k_max must be >= 1, got {k_max}")
    avg = np.full((w.n, w.n), 1.0 / w.n)
    power = np.eye(w.n)
    norms = []
    for _ in range(int(k_max)):
        power = power @ w.w
        norms.append(float(np.linalg.norm(power - avg, 2)))
    return norms
