"""Bilevel problem abstraction: per-agent oracles plus smoothness metadata.

The upper objective is the average of per-agent losses f_i(x, y*(x)),
where y*(x) minimizes the averaged lower loss (1/n) sum_i g_i(x, y).
Each agent exposes deterministic first/second-order oracles and
minibatch stochastic variants of the same quantities. The module also
provides the exact-hypergradient reference oracle used for validation
and run instrumentation.
"""

import math
from collections.abc import Callable
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import BadParameter, DimMismatch, NoConvergence
from .numerics import spd_solve

Array = np.ndarray
Rng = np.random.Generator


@dataclass(frozen=True)
class SmoothnessMeta:
    """Strong-convexity and Lipschitz constants, plus oracle noise levels.

    mu lower-bounds the lower-level Hessian spectrum on the declared
    region of validity; l_f0/l_f1/l_g1/l_g2 bound the losses, their
    gradients, and the second derivatives of g. sigma_* are standard
    deviations of the stochastic oracles (zero means exact).
    """

    mu: float
    l_f0: float
    l_f1: float
    l_g1: float
    l_g2: float
    sigma_f: float = 0.0
    sigma_g1: float = 0.0
    sigma_g2: float = 0.0
    homogeneous_g: bool = False

    def __post_init__(self):
        if self.mu <= 0:
            raise BadParameter(f"mu must be positive, got {self.mu}")
        if self.L < self.mu:
            raise BadParameter(f"max(l_f1, l_g1) = {self.L} must be >= mu = {self.mu}")
        for name in ("sigma_f", "sigma_g1", "sigma_g2"):
            if getattr(self, name) < 0:
                raise BadParameter(f"{name} must be >= 0")

    @property
    def L(self) -> float:
        return max(self.l_f1, self.l_g1)

    @property
    def kappa(self) -> float:
        return self.L / self.mu


@dataclass
class AgentOracles:
    """Callable bundle for one agent.

    Deterministic oracles take (x, y); stochastic ones additionally take
    a generator and a minibatch size (batch=0 means full batch, which
    reproduces the deterministic oracle exactly). grad_f_s returns the
    (grad_x, grad_y) pair evaluated on a single shared minibatch, and
    hess_jac_s returns the (Hessian, Jacobian) pair from one minibatch.
    """

    f_value: Callable[[Array, Array], float]
    g_value: Callable[[Array, Array], float]
    grad_x_f: Callable[[Array, Array], Array]
    grad_y_f: Callable[[Array, Array], Array]
    grad_y_g: Callable[[Array, Array], Array]
    hess_yy_g: Callable[[Array, Array], Array]
    hess_yy_g_vp: Callable[[Array, Array, Array], Array]
    jac_xy_g: Callable[[Array, Array], Array]
    grad_f_s: Callable[[Array, Array, Rng, int], tuple[Array, Array]] | None = None
    grad_y_g_s: Callable[[Array, Array, Rng, int], Array] | None = None
    hess_yy_g_s: Callable[[Array, Array, Rng, int], Array] | None = None
    hess_yy_g_vp_s: Callable[[Array, Array, Array, Rng, int], Array] | None = None
    jac_xy_g_s: Callable[[Array, Array, Rng, int], Array] | None = None
    hess_jac_s: Callable[[Array, Array, Rng, int], tuple[Array, Array]] | None = None


@dataclass(frozen=True)
class AgentData:
    """Raw samples behind a generated agent (features + labels)."""

    train_x: Array
    train_y: Array
    val_x: Array
    val_y: Array


@dataclass(frozen=True)
class BilevelProblem:
    n: int
    p: int
    q: int
    agents: list[AgentOracles]
    meta: SmoothnessMeta
    datasets: list[AgentData] | None = None

    def __post_init__(self):
        if len(self.agents) != self.n:
            raise DimMismatch(f"{len(self.agents)} oracle bundles for n = {self.n} agents")


class ExactHypergradient(NamedTuple):
    per_agent: Array  # (p, n), column i is the exact hypergradient of agent i
    mean: Array
    y_star: Array


def _newton_to_tolerance(grad_fn, hess_fn, y0: Array, tol: float, cap: int) -> Array:
    """Damped Newton on a strongly convex objective, to gradient norm tol."""
    y = np.asarray(y0, dtype=float).copy()
    g = grad_fn(y)
    for _ in range(cap):
        gn = float(np.linalg.norm(g))
        if gn <= tol:
            return y
        step = spd_solve(hess_fn(y), -g)
        scale = 1.0
        for _ in range(60):
            g_try = grad_fn(y + scale * step)
            if float(np.linalg.norm(g_try)) <= (1.0 - 0.25 * scale) * gn:
                break
            scale *= 0.5
        y = y + scale * step
        g = grad_fn(y)
    if float(np.linalg.norm(g)) <= tol:
        return y
    raise NoConvergence(f"lower-level solve stalled at gradient norm {np.linalg.norm(g):.3e}")


def _iteration_cap(meta: SmoothnessMeta, tol: float) -> int:
    return max(20, 10 * math.ceil(meta.kappa * math.log(1.0 / min(tol, 0.5))))


def lower_level_solve_exact(prob: BilevelProblem, x_common: Array, tol: float, y0=None) -> Array:
    """Minimize the averaged lower loss at a common x to gradient norm tol."""
    if tol <= 0:
        raise BadParameter(f"tol must be positive, got {tol}")
    x = np.asarray(x_common, dtype=float)
    y_start = np.zeros(prob.q) if y0 is None else np.asarray(y0, dtype=float)

    def grad(y):
        return sum(a.grad_y_g(x, y) for a in prob.agents) / prob.n

    def hess(y):
        return sum(a.hess_yy_g(x, y) for a in prob.agents) / prob.n

    return _newton_to_tolerance(grad, hess, y_start, tol, _iteration_cap(prob.meta, tol))


def lower_level_solve_mixed(prob: BilevelProblem, xs: Array, tol: float, y0=None) -> Array:
    """Minimize (1/n) sum_i g_i(x_i, y) where column i of xs is agent i's x.

    This is what the decentralized inner loop actually targets when the
    agents' x copies have not reached consensus.
    """
    if tol <= 0:
        raise BadParameter(f"tol must be positive, got {tol}")
    xs = np.asarray(xs, dtype=float)
    if xs.shape != (prob.p, prob.n):
        raise DimMismatch(f"expected xs of shape {(prob.p, prob.n)}, got {xs.shape}")
    y_start = np.zeros(prob.q) if y0 is None else np.asarray(y0, dtype=float)

    def grad(y):
        return sum(a.grad_y_g(xs[:, i], y) for i, a in enumerate(prob.agents)) / prob.n

    def hess(y):
        return sum(a.hess_yy_g(xs[:, i], y) for i, a in enumerate(prob.agents)) / prob.n

    return _newton_to_tolerance(grad, hess, y_start, tol, _iteration_cap(prob.meta, tol))


def agent_lower_solve(agent: AgentOracles, x: Array, q: int, meta: SmoothnessMeta, tol: float, y0=None) -> Array:
    """Minimize a single agent's own g_i(x, .) to gradient norm tol."""
    if tol <= 0:
        raise BadParameter(f"tol must be positive, got {tol}")
    x = np.asarray(x, dtype=float)
    y_start = np.zeros(q) if y0 is None else np.asarray(y0, dtype=float)
    return _newton_to_tolerance(
        lambda y: agent.grad_y_g(x, y),
        lambda y: agent.hess_yy_g(x, y),
        y_start,
        tol,
        _iteration_cap(meta, tol),
    )


def upper_value(prob: BilevelProblem, x: Array, tol: float = 1e-10, y0=None) -> float:
    """Evaluate the bilevel objective at x by solving the lower level."""
    y = lower_level_solve_exact(prob, x, tol, y0=y0)
    x = np.asarray(x, dtype=float)
    return float(sum(a.f_value(x, y) for a in prob.agents) / prob.n)


def exact_hypergradient(prob: BilevelProblem, x_common: Array, tol: float, y0=None) -> ExactHypergradient:
    """Reference hypergradient oracle.

    Solves the lower level to tolerance, then applies the implicit
    gradient formula with the globally averaged Jacobian and Hessian:
    per-agent value grad_x f_i - Jbar Hbar^{-1} grad_y f_i.
    """
    x = np.asarray(x_common, dtype=float)
    y = lower_level_solve_exact(prob, x, tol, y0=y0)
    h_bar = sum(a.hess_yy_g(x, y) for a in prob.agents) / prob.n
    j_bar = sum(a.jac_xy_g(x, y) for a in prob.agents) / prob.n
    gy = np.stack([a.grad_y_f(x, y) for a in prob.agents], axis=1)  # (q, n)
    solved = spd_solve(h_bar, gy)  # (q, n)
    per_agent = np.stack([a.grad_x_f(x, y) for a in prob.agents], axis=1) - j_bar @ solved
    return ExactHypergradient(per_agent=per_agent, mean=per_agent.mean(axis=1), y_star=y)


def finite_difference_hypergradient(prob: BilevelProblem, x: Array, step: float = 1e-5, tol: float = 1e-11) -> Array:
    """Central-difference gradient of the bilevel objective, one solve per side.

    Independent of the implicit-gradient path; used as a validation oracle.
    """
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    y_hint = lower_level_solve_exact(prob, x, tol)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        up = upper_value(prob, x + e, tol, y0=y_hint)
        down = upper_value(prob, x - e, tol, y0=y_hint)
        grad[j] = (up - down) / (2.0 * step)
    return grad
