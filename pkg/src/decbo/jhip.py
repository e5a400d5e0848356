"""Decentralized solver for the aggregate linear system (sum H_i) Z = sum J_i'.

Each agent holds a private SPD matrix H_i and a Jacobian J_i; the network
jointly minimizes the strongly convex trace objective

    (1/n) sum_i [ 0.5 Tr(Z'H_i Z) - Tr(J_i Z) ]

by gradient descent with gradient tracking over the mixing matrix. The
per-agent gradient is H_i Z - J_i', and the tracker Y keeps its agent
average equal to the average of current gradients. In the deterministic
mode the tracked quantity G_i drops the constant J_i' (it cancels in the
tracking difference); in the stochastic mode the sample changes every
step, so G_i keeps the sampled -J_i' term.
"""

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, Divergence
from .network import WeightMatrix, mix_stack
from .numerics import spd_solve
from .schedules import as_schedule

Array = np.ndarray


@dataclass(frozen=True)
class JhipDeterministic:
    """Fixed per-agent (H_i, J_i) data; h has shape (n,q,q), j has (n,p,q)."""

    h: Array
    j: Array

    def __post_init__(self):
        object.__setattr__(self, "h", np.asarray(self.h, dtype=float))
        object.__setattr__(self, "j", np.asarray(self.j, dtype=float))
        if self.h.ndim != 3 or self.h.shape[1] != self.h.shape[2]:
            raise DimMismatch(f"h must be (n,q,q), got {self.h.shape}")
        if self.j.ndim != 3 or self.j.shape[0] != self.h.shape[0] or self.j.shape[2] != self.h.shape[1]:
            raise DimMismatch(f"j must be (n,p,q) compatible with h {self.h.shape}, got {self.j.shape}")

    @property
    def n(self) -> int:
        return self.h.shape[0]

    @property
    def q(self) -> int:
        return self.h.shape[1]

    @property
    def p(self) -> int:
        return self.j.shape[1]


@dataclass(frozen=True)
class JhipStochastic:
    """Sampled per-agent data: draw(agent, t) returns a fresh (H_hat, J_hat)."""

    draw: Callable[[int, int], tuple[Array, Array]]
    n: int
    q: int
    p: int


JhipMode = JhipDeterministic | JhipStochastic


@dataclass(frozen=True)
class JhipState:
    z: Array  # (n, q, p) iterates
    y: Array  # (n, q, p) trackers
    g: Array  # (n, q, p) last tracked quantity per agent
    t: int


def _check_z0(mode: JhipMode, z0: Array) -> Array:
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (mode.n, mode.q, mode.p):
        raise DimMismatch(f"z0 must have shape {(mode.n, mode.q, mode.p)}, got {z0.shape}")
    return z0


def jhip_init(mode: JhipMode, z0: Array) -> JhipState:
    """Initial tracker state for the given mode."""
    z0 = _check_z0(mode, z0)
    if isinstance(mode, JhipDeterministic):
        grad = np.matmul(mode.h, z0) - np.transpose(mode.j, (0, 2, 1))
        g0 = np.matmul(mode.h, z0)
        return JhipState(z=z0, y=grad, g=g0, t=0)
    g0 = np.empty_like(z0)
    for i in range(mode.n):
        h_hat, j_hat = mode.draw(i, 0)
        g0[i] = h_hat @ z0[i] - j_hat.T
    return JhipState(z=z0, y=g0.copy(), g=g0, t=0)


def jhip_step(state: JhipState, mode: JhipMode, w: WeightMatrix, gamma_t: float) -> JhipState:
    """One synchronous round: mix Z, descend along Y, retrack."""
    z_new = mix_stack(w, state.z) - gamma_t * state.y
    if isinstance(mode, JhipDeterministic):
        g_new = np.matmul(mode.h, z_new)
    else:
        g_new = np.empty_like(z_new)
        for i in range(mode.n):
            h_hat, j_hat = mode.draw(i, state.t + 1)
            g_new[i] = h_hat @ z_new[i] - j_hat.T
    y_new = mix_stack(w, state.y) + g_new - state.g
    return JhipState(z=z_new, y=y_new, g=g_new, t=state.t + 1)


def jhip_run(
    mode: JhipMode,
    w: WeightMatrix,
    steps: int,
    schedule,
    z0: Array | None = None,
    divergence_cap: float = 1e12,
    trace: Callable[[JhipState], None] | None = None,
) -> Array:
    """Run the tracker for `steps` rounds and return every agent's Z."""
    gamma = as_schedule(schedule)
    if z0 is None:
        z0 = np.zeros((mode.n, mode.q, mode.p))
    state = jhip_init(mode, z0)
    if trace is not None:
        trace(state)
    for t in range(int(steps)):
        state = jhip_step(state, mode, w, gamma(t))
        worst = float(np.max(np.sqrt(np.sum(state.z**2, axis=(1, 2)))))
        if not np.isfinite(worst) or worst > divergence_cap:
            raise Divergence(f"iterate norm {worst:.3e} at step {t + 1}", iteration=t + 1)
        if trace is not None:
            trace(state)
    return state.z


def jhip_solution(h: Array, j: Array) -> Array:
    """Direct-solve reference: Z* with (sum H_i) Z* = sum J_i'."""
    h = np.asarray(h, dtype=float)
    j = np.asarray(j, dtype=float)
    return spd_solve(h.sum(axis=0), np.transpose(j, (0, 2, 1)).sum(axis=0))


def tracking_residual(state: JhipState, mode: JhipMode) -> float:
    """Norm of (mean tracker) - (mean gradient at the current iterates).

    For the deterministic mode the gradients are H_i Z_i - J_i'; for the
    stochastic mode the preserved average is over the sampled quantities
    held in state.g.
    """
    if isinstance(mode, JhipDeterministic):
        grads = np.matmul(mode.h, state.z) - np.transpose(mode.j, (0, 2, 1))
        return float(np.linalg.norm(state.y.mean(axis=0) - grads.mean(axis=0)))
    return float(np.linalg.norm(state.y.mean(axis=0) - state.g.mean(axis=0)))
