"""Per-agent hypergradient estimators and the smoothness-constant ledger.

Four estimation branches, selected by the (stochastic, homogeneous)
regime:

- deterministic + homogeneous: truncated conjugate gradient on the local
  Hessian system, then grad_x f - J v (implicit differentiation);
- stochastic + homogeneous: randomized truncation of the geometric
  series eps * sum_k (I - eps H)^k applied through sampled
  Hessian-vector products;
- heterogeneous (deterministic or stochastic): the decentralized
  aggregate solve from the jhip module supplies Z, and the estimate is
  grad_x f - Z' grad_y f with exact or sampled gradients.

The ledger collects the derived constants (hypergradient and surrogate
Lipschitz moduli, contraction factors of the inner loop and of CG, and
the truncation bias bound) used for stepsize presets and for the
error-bound test envelopes.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadParameter, DimMismatch, MissingInput
from .numerics import conjugate_gradient
from .problems import AgentOracles, SmoothnessMeta

Array = np.ndarray


@dataclass(frozen=True)
class Regime:
    """Selects one estimator branch."""

    stochastic: bool
    homogeneous: bool


@dataclass
class HypergradEstimate:
    value: Array
    aux: object | None = None  # CG iterate or Z matrix carried to the next call


def estimate_aid(agent: AgentOracles, x: Array, y: Array, n_cg: int, v0: Array | None = None) -> HypergradEstimate:
    """Implicit-differentiation estimate with an n_cg-step CG inner solve.

    Only Hessian-vector products of the agent's own lower loss are used;
    aux carries the CG iterate for warm starting the next outer iteration.
    """
    if n_cg < 1:
        raise BadParameter(f"n_cg must be >= 1, got {n_cg}")
    gy = agent.grad_y_f(x, y)
    start = np.zeros_like(gy) if v0 is None else np.asarray(v0, dtype=float)
    v = conjugate_gradient(lambda u: agent.hess_yy_g_vp(x, y, u), gy, n_cg, start)
    value = agent.grad_x_f(x, y) - agent.jac_xy_g(x, y) @ v
    return HypergradEstimate(value=value, aux=v)


def estimate_neumann(
    agent: AgentOracles,
    x: Array,
    y: Array,
    m_cap: int,
    epsilon: float,
    rng: np.random.Generator,
    meta: SmoothnessMeta | None = None,
    batch: int = 1,
    truncation: int | None = None,
) -> HypergradEstimate:
    """Randomized geometric-series estimate of the Hessian-inverse product.

    Draws a truncation level uniformly from {0, ..., m_cap - 1}, then
    applies eps * m_cap * prod (I - eps H_hat) to the sampled grad_y f
    using that many fresh Hessian samples. One shared sample feeds both
    components of grad f, one more feeds the Jacobian, and each product
    factor consumes its own; the conditional expectation of the applied
    operator is eps * sum_{k<m_cap} (I - eps H)^k.

    truncation overrides the random draw (testing hook).
    """
    if m_cap < 1:
        raise BadParameter(f"m_cap must be >= 1, got {m_cap}")
    if epsilon <= 0:
        raise BadParameter(f"epsilon must be positive, got {epsilon}")
    if meta is not None and epsilon >= 1.0 / meta.L:
        raise BadParameter(f"epsilon = {epsilon} must be below 1/L = {1.0 / meta.L}")
    if truncation is None:
        levels = int(rng.integers(0, m_cap))
    else:
        if not (0 <= truncation < m_cap):
            raise BadParameter(f"truncation must be in [0, {m_cap}), got {truncation}")
        levels = truncation
    gx, gy = agent.grad_f_s(x, y, rng, batch)
    jac = agent.jac_xy_g_s(x, y, rng, batch)
    # Draw the factor samples in index order, then apply right-to-left.
    factor_rngs = [rng.spawn(1)[0] for _ in range(levels)]
    v = gy.copy()
    for factor in reversed(factor_rngs):
        v = v - epsilon * agent.hess_yy_g_vp_s(x, y, v, factor, batch)
    v *= epsilon * m_cap
    return HypergradEstimate(value=gx - jac @ v, aux=None)


def estimate_jhip(
    agent: AgentOracles,
    x: Array,
    y: Array,
    z: Array,
    rng: np.random.Generator | None = None,
    batch: int = 1,
) -> HypergradEstimate:
    """Estimate from a decentralized aggregate solve: grad_x f - Z' grad_y f.

    Passing a generator switches to sampled gradients (one shared
    minibatch for both components). aux carries Z for warm starting.
    """
    z = np.asarray(z, dtype=float)
    if rng is None:
        gx, gy = agent.grad_x_f(x, y), agent.grad_y_f(x, y)
    else:
        gx, gy = agent.grad_f_s(x, y, rng, batch)
    if z.shape[0] != gy.shape[0] or z.shape[1] != gx.shape[0]:
        raise DimMismatch(f"Z shape {z.shape} incompatible with dims q={gy.shape[0]}, p={gx.shape[0]}")
    return HypergradEstimate(value=gx - z.T @ gy, aux=z)


def estimate(
    regime: Regime,
    agent: AgentOracles,
    x: Array,
    y: Array,
    *,
    n_cg: int | None = None,
    v0: Array | None = None,
    m_cap: int | None = None,
    epsilon: float | None = None,
    meta: SmoothnessMeta | None = None,
    z: Array | None = None,
    rng: np.random.Generator | None = None,
    batch: int = 1,
    truncation: int | None = None,
) -> HypergradEstimate:
    """Dispatch to the branch selected by the regime."""
    if regime.homogeneous:
        if not regime.stochastic:
            if n_cg is None:
                raise MissingInput("deterministic homogeneous branch needs n_cg")
            return estimate_aid(agent, x, y, n_cg, v0=v0)
        if m_cap is None or epsilon is None or rng is None:
            raise MissingInput("stochastic homogeneous branch needs m_cap, epsilon, and rng")
        return estimate_neumann(agent, x, y, m_cap, epsilon, rng, meta=meta, batch=batch, truncation=truncation)
    if z is None:
        raise MissingInput("heterogeneous branches need the decentralized solve result z")
    if regime.stochastic and rng is None:
        raise MissingInput("stochastic heterogeneous branch needs rng")
    return estimate_jhip(agent, x, y, z, rng=rng if regime.stochastic else None, batch=batch)


def truncated_inverse_series(hess: Array, epsilon: float, m_cap: int) -> Array:
    """eps * sum_{k=0}^{m_cap-1} (I - eps H)^k, the estimator's mean operator."""
    hess = np.asarray(hess, dtype=float)
    q = hess.shape[0]
    term = np.eye(q)
    total = np.zeros_like(hess)
    for _ in range(m_cap):
        total += term
        term = term @ (np.eye(q) - epsilon * hess)
    return epsilon * total


# ---------------------------------------------------------------------------
# Constants ledger
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantsLedger:
    """Derived smoothness constants and contraction factors.

    kappa: condition number L/mu. l_phi: Lipschitz modulus of the exact
    hypergradient. l_f: Lipschitz modulus of the averaged-data surrogate.
    gamma_big, d1, d2: error constants of the implicit-differentiation
    branch. delta_y: inner-loop contraction after T steps. delta_kappa:
    CG contraction after N steps. neumann_bias: truncation bias bound of
    the randomized series branch.
    """

    kappa: float
    l_phi: float
    l_f: float
    gamma_big: float
    d1: float
    d2: float
    delta_y: float
    delta_kappa: float
    neumann_bias: float


def hypergrad_lipschitz(meta: SmoothnessMeta) -> float:
    L, mu = meta.L, meta.mu
    lf0, lg2 = meta.l_f0, meta.l_g2
    return (
        L
        + (2.0 * L**2 + lg2 * lf0**2) / mu
        + (L * lf0 * lg2 + L**3 + lg2 * lf0 * L) / mu**2
        + (lg2 * L**2 * lf0) / mu**3
    )


def surrogate_lipschitz(meta: SmoothnessMeta) -> float:
    L, mu = meta.L, meta.mu
    return L + L**2 / mu + meta.l_f0 * (meta.l_g2 / mu + meta.l_g2 * L / mu**2)


def aid_error_constant(meta: SmoothnessMeta) -> float:
    L, mu = meta.L, meta.mu
    kappa = meta.kappa
    lf0, lg2 = meta.l_f0, meta.l_g2
    return (
        3.0 * L**2
        + 3.0 * lg2**2 * lf0 / mu**2
        + 6.0 * L**2 * (1.0 + math.sqrt(kappa)) ** 2 * (kappa + lg2 * lf0 / mu**2) ** 2
    )


def cd_constants(meta: SmoothnessMeta) -> tuple[float, float]:
    kappa, mu = meta.kappa, meta.mu
    lf0, lg2 = meta.l_f0, meta.l_g2
    d1 = 4.0 * (1.0 + math.sqrt(kappa)) ** 2 * (kappa + lg2 * lf0 / mu**2) ** 2
    d2 = 2.0 * (kappa**2 + 2.0 * lf0 * kappa / mu + 2.0 * lf0 * kappa**2 / mu) ** 2
    return d1, d2


def inner_contraction(meta: SmoothnessMeta, eta_y: float, T: int) -> float:
    """(1 - 2 eta_y mu L / (mu + L))^T, valid for eta_y <= 2/(mu+L)."""
    if not (0.0 < eta_y <= 2.0 / (meta.mu + meta.L)):
        raise BadParameter(f"eta_y must lie in (0, 2/(mu+L)], got {eta_y}")
    if T < 0:
        raise BadParameter(f"T must be >= 0, got {T}")
    base = 1.0 - 2.0 * eta_y * meta.mu * meta.L / (meta.mu + meta.L)
    return base**T


def cg_contraction(kappa: float, N: int) -> float:
    """((sqrt(kappa) - 1)/(sqrt(kappa) + 1))^(2N)."""
    if kappa < 1.0:
        raise BadParameter(f"kappa must be >= 1, got {kappa}")
    if N < 0:
        raise BadParameter(f"N must be >= 0, got {N}")
    root = math.sqrt(kappa)
    return ((root - 1.0) / (root + 1.0)) ** (2 * N)


def neumann_bias_bound(meta: SmoothnessMeta, epsilon: float, m_cap: int) -> float:
    """L_f0 * kappa * (1 - eps L)^M, the truncation bias bound."""
    if not (0.0 < epsilon < 1.0 / meta.L):
        raise BadParameter(f"epsilon must lie in (0, 1/L), got {epsilon}")
    if m_cap < 1:
        raise BadParameter(f"m_cap must be >= 1, got {m_cap}")
    return meta.l_f0 * meta.kappa * (1.0 - epsilon * meta.L) ** m_cap


PRESET_LOG_FACTOR = 2.0


def preset_T(meta: SmoothnessMeta, eta_y: float | None = None) -> int:
    """Inner iteration preset: order log(kappa), enough for contraction < 1/3."""
    eta = 2.0 / (meta.mu + meta.L) if eta_y is None else eta_y
    base = 1.0 - 2.0 * eta * meta.mu * meta.L / (meta.mu + meta.L)
    order = math.ceil(PRESET_LOG_FACTOR * math.log(max(meta.kappa, math.e)))
    if base <= 0.0:
        return max(1, order)
    need = math.ceil(math.log(1.0 / 3.0) / math.log(base)) if base < 1.0 else order
    return max(1, order, need)


def preset_N(meta: SmoothnessMeta) -> int:
    """CG iteration preset: order log(kappa), enough for contraction < 1/(8 kappa)."""
    kappa = meta.kappa
    order = math.ceil(PRESET_LOG_FACTOR * math.log(max(kappa, math.e)))
    if kappa <= 1.0:
        return max(1, order)
    root = math.sqrt(kappa)
    need = math.ceil(math.log(8.0 * kappa) / (2.0 * math.log((root + 1.0) / (root - 1.0))))
    return max(1, order, need)


def constants(
    meta: SmoothnessMeta,
    eta_y: float,
    T: int,
    N: int,
    M: int,
    epsilon: float,
) -> ConstantsLedger:
    """Evaluate the full ledger for the given run parameters."""
    d1, d2 = cd_constants(meta)
    return ConstantsLedger(
        kappa=meta.kappa,
        l_phi=hypergrad_lipschitz(meta),
        l_f=surrogate_lipschitz(meta),
        gamma_big=aid_error_constant(meta),
        d1=d1,
        d2=d2,
        delta_y=inner_contraction(meta, eta_y, T),
        delta_kappa=cg_contraction(meta.kappa, N),
        neumann_bias=neumann_bias_bound(meta, epsilon, M),
    )
