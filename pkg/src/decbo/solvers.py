"""Outer/inner loops of the three decentralized bilevel solvers.

All three share the same skeleton: warm-started inner descent on the
agents' lower variables, a per-agent hypergradient estimate, then a
mixed gradient step on the upper variables. "dbo" takes plain mixed
steps, "dbogt" adds an outer tracker u whose agent average always equals
the average of current estimates, and "dsbo" is the stochastic variant
(sampled oracles in both loops).

State is column-stacked: X is (p, n) with column i owned by agent i, Y
is (q, n). Rounds are synchronous; every update reads the previous
round's snapshot, and all randomness is drawn from streams keyed by
(agent, role, outer k, inner t), so results are bit-reproducible for a
fixed seed regardless of how runs are scheduled.
"""

from collections.abc import Callable
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BadParameter, Divergence, ValidationError
from .hypergrad import Regime, estimate_aid, estimate_jhip, estimate_neumann
from .jhip import JhipDeterministic, JhipStochastic, jhip_run
from .network import WeightMatrix, mix
from .numerics import spd_solve
from .problems import (
    BilevelProblem,
    agent_lower_solve,
    exact_hypergradient,
    lower_level_solve_mixed,
)
from .rng import RngPlan
from .schedules import Constant, Harmonic, as_schedule

Array = np.ndarray

ALGORITHMS = ("dbo", "dbogt", "dsbo")


@dataclass(frozen=True)
class RunConfig:
    """All run hyperparameters.

    eta_y and gamma accept a float (constant) or a schedule callable;
    None picks the smoothness-based default (2/(mu+L) for eta_y, 1/l_g1
    for gamma, with a 1/t decay in the stochastic heterogeneous branch).
    minibatch = 0 means full batch. neumann_truncation pins the
    randomized truncation level (testing hook).
    """

    algorithm: str = "dbo"
    regime: Regime = Regime(stochastic=False, homogeneous=False)
    K: int = 10
    T: int = 10
    N: int = 10
    M: int = 10
    eta_x: float = 0.01
    eta_y: object | None = None
    gamma: object | None = None
    epsilon: float | None = None
    minibatch: int = 1
    seed: int = 0
    record_oracle_metrics: bool = False
    oracle_tol: float = 1e-9
    warm_start: bool = True
    inner_tracker_persist: bool = False
    neumann_truncation: int | None = None
    divergence_cap: float = 1e12
    y0: float = 0.0


@dataclass
class RunMetrics:
    """Per-outer-iteration diagnostics plus running accumulators.

    Oracle-backed columns (grad_norm_mean, inner_residual, t_acc, a_acc,
    b_acc, ytilde_gap) are None unless record_oracle_metrics was set.
    s_acc accumulates squared consensus norms, e_acc squared per-agent
    movements, t_acc squared oracle gradient norms.
    """

    k: list[int] = field(default_factory=list)
    grad_norm_mean: list[float | None] = field(default_factory=list)
    consensus: list[float] = field(default_factory=list)
    inner_residual: list[float | None] = field(default_factory=list)
    tracker_drift: list[float | None] = field(default_factory=list)
    s_acc: list[float] = field(default_factory=list)
    e_acc: list[float] = field(default_factory=list)
    t_acc: list[float | None] = field(default_factory=list)
    a_acc: list[float | None] = field(default_factory=list)
    b_acc: list[float | None] = field(default_factory=list)
    ytilde_gap: list[float | None] = field(default_factory=list)
    avg_step_residual: list[float] = field(default_factory=list)
    x_final: Array | None = None

    CSV_HEADER = "k,grad_norm_mean,consensus,inner_residual,tracker_drift,S_K,E_K,T_K"

    def csv_lines(self) -> list[str]:
        def fmt(value) -> str:
            return "" if value is None else "%.17g" % value

        lines = [self.CSV_HEADER]
        for i, k in enumerate(self.k):
            cells = [
                str(k),
                fmt(self.grad_norm_mean[i]),
                fmt(self.consensus[i]),
                fmt(self.inner_residual[i]),
                fmt(self.tracker_drift[i]),
                fmt(self.s_acc[i]),
                fmt(self.e_acc[i]),
                fmt(self.t_acc[i]),
            ]
            lines.append(",".join(cells))
        return lines


def _resolve_eta_y(cfg: RunConfig, prob: BilevelProblem, w: WeightMatrix):
    """Default inner stepsize per branch.

    The communication-free homogeneous branch takes the classic
    2/(mu+L). Branches that mix iterates need the stepsize tied to the
    spectral gap: the tracked update is provably unstable at 2/(mu+L)
    for moderate gaps, so the default caps it at (1-rho)/(2L). The
    untracked stochastic branch decays as 1/t on top of the same cap.
    """
    if cfg.eta_y is not None:
        return as_schedule(cfg.eta_y)
    classic = 2.0 / (prob.meta.mu + prob.meta.L)
    if cfg.regime.homogeneous:
        return Constant(classic)
    capped = min(classic, (1.0 - w.rho) / (2.0 * prob.meta.L))
    if cfg.regime.stochastic or cfg.algorithm == "dbo":
        return Harmonic(capped, 10.0)
    return Constant(capped)


def _resolve_gamma(cfg: RunConfig, prob: BilevelProblem, w: WeightMatrix):
    """Default aggregate-solve stepsize, capped by the spectral gap.

    The solve is itself a tracked iteration, so 1/L_H is only safe on
    well-mixed graphs; (1-rho)/(2 L_H) keeps it contractive.
    """
    if cfg.gamma is not None:
        return as_schedule(cfg.gamma)
    base = min(1.0, 1.0 - w.rho) / (2.0 * prob.meta.l_g1)
    if cfg.regime.stochastic:
        return Harmonic(base, 20.0)
    return Constant(base)


def _resolve_epsilon(cfg: RunConfig, prob: BilevelProblem) -> float:
    return 0.5 / prob.meta.L if cfg.epsilon is None else cfg.epsilon


def validate_config(prob: BilevelProblem, cfg: RunConfig) -> None:
    if cfg.algorithm not in ALGORITHMS:
        raise ValidationError(f"algorithm must be one of {ALGORITHMS}, got {cfg.algorithm!r}")
    for name in ("K", "T", "N", "M"):
        if getattr(cfg, name) < 1:
            raise ValidationError(f"{name} must be >= 1, got {getattr(cfg, name)}")
    if cfg.eta_x <= 0:
        raise ValidationError(f"eta_x must be positive, got {cfg.eta_x}")
    if cfg.minibatch < 0:
        raise ValidationError(f"minibatch must be >= 0, got {cfg.minibatch}")
    if cfg.algorithm in ("dbo", "dbogt") and cfg.regime.stochastic:
        raise ValidationError(f"{cfg.algorithm} is a deterministic method; regime.stochastic must be False")
    if cfg.algorithm == "dsbo" and not cfg.regime.stochastic:
        raise ValidationError("dsbo requires regime.stochastic = True")
    if cfg.algorithm == "dsbo" and cfg.regime.homogeneous:
        eps = _resolve_epsilon(cfg, prob)
        if eps >= 1.0 / prob.meta.L:
            raise ValidationError(f"epsilon >= 1/L ({eps} >= {1.0 / prob.meta.L})")


def _guard(tag: str, arrays, cap: float, iteration: int) -> None:
    for a in arrays:
        if a is None:
            continue
        worst = float(np.max(np.abs(a))) if a.size else 0.0
        if not np.isfinite(worst) or worst > cap:
            raise Divergence(f"{tag} norm {worst:.3e} exceeded guard at iteration {iteration}", iteration=iteration)


def inner_loop(
    prob: BilevelProblem,
    w: WeightMatrix,
    xs: Array,
    ys: Array,
    regime: Regime,
    T: int,
    eta_y,
    v0: Array | None = None,
    g_prev: Array | None = None,
    rng_for: Callable[[int, int], np.random.Generator] | None = None,
    batch: int = 1,
    divergence_cap: float = 1e12,
    trace: Callable[[int, Array, Array | None], None] | None = None,
) -> tuple[Array, Array | None, Array | None]:
    """T rounds of lower-variable descent with x frozen.

    Homogeneous regimes run local (stochastic) gradient descent with no
    communication. The heterogeneous deterministic branch mixes iterates
    and tracks the average gradient in v; v0/g_prev carry the tracker
    across outer iterations when persistence is requested. The
    heterogeneous stochastic branch mixes iterates without tracking.

    Returns (y after T steps, final tracker or None, gradients at the
    returned y or None).
    """
    eta = as_schedule(eta_y)
    Y = np.asarray(ys, dtype=float).copy()
    n = w.n

    def grads(cur: Array, t: int) -> Array:
        cols = np.empty_like(cur)
        for i, agent in enumerate(prob.agents):
            if regime.stochastic:
                cols[:, i] = agent.grad_y_g_s(xs[:, i], cur[:, i], rng_for(i, t), batch)
            else:
                cols[:, i] = agent.grad_y_g(xs[:, i], cur[:, i])
        return cols

    if regime.stochastic and rng_for is None:
        raise BadParameter("stochastic inner loop needs rng_for")

    if regime.homogeneous:
        for t in range(T):
            Y = Y - eta(t) * grads(Y, t)
            _guard("inner iterate", [Y], divergence_cap, t)
            if trace is not None:
                trace(t + 1, Y, None)
        return Y, None, None

    if regime.stochastic:
        for t in range(T):
            Y = mix(w, Y) - eta(t) * grads(Y, t)
            _guard("inner iterate", [Y], divergence_cap, t)
            if trace is not None:
                trace(t + 1, Y, None)
        return Y, None, None

    g_cur = grads(Y, 0)
    if v0 is None:
        V = g_cur.copy()
    else:
        if g_prev is None:
            raise BadParameter("persistent tracker needs the matching previous gradients")
        V = mix(w, v0) + g_cur - g_prev
    if trace is not None:
        trace(0, Y, V)
    for t in range(T):
        y_next = mix(w, Y) - eta(t) * V
        g_next = grads(y_next, t + 1)
        V = mix(w, V) + g_next - g_cur
        Y, g_cur = y_next, g_next
        _guard("inner iterate", [Y, V], divergence_cap, t)
        if trace is not None:
            trace(t + 1, Y, V)
    return Y, V, g_cur


@dataclass
class _EstimateCarry:
    v: Array | None = None  # (q, n) CG warm starts
    z: Array | None = None  # (n, q, p) decentralized-solve warm starts


def _estimates(
    prob: BilevelProblem,
    w: WeightMatrix,
    cfg: RunConfig,
    X: Array,
    Y: Array,
    k: int,
    plan: RngPlan,
    carry: _EstimateCarry,
    gamma,
    epsilon: float,
) -> tuple[Array, _EstimateCarry, Array | None]:
    """Per-agent hypergradient estimates at the current (X, Y) snapshot.

    Returns the (p, n) estimate columns, the refreshed warm-start carry,
    and the CG starting points actually used (for diagnostics).
    """
    n, p, q = prob.n, prob.p, prob.q
    regime = cfg.regime
    E = np.empty((p, n))

    if regime.homogeneous and not regime.stochastic:
        v0_used = np.zeros((q, n)) if (carry.v is None or not cfg.warm_start) else carry.v
        v_new = np.empty((q, n))
        for i, agent in enumerate(prob.agents):
            est = estimate_aid(agent, X[:, i], Y[:, i], cfg.N, v0=v0_used[:, i])
            E[:, i] = est.value
            v_new[:, i] = est.aux
        return E, _EstimateCarry(v=v_new, z=carry.z), v0_used

    if regime.homogeneous and regime.stochastic:
        for i, agent in enumerate(prob.agents):
            est = estimate_neumann(
                agent,
                X[:, i],
                Y[:, i],
                cfg.M,
                epsilon,
                plan.stream(i, "hypergrad", k),
                meta=prob.meta,
                batch=cfg.minibatch,
                truncation=cfg.neumann_truncation,
            )
            E[:, i] = est.value
        return E, carry, None

    z0 = np.zeros((n, q, p)) if (carry.z is None or not cfg.warm_start) else carry.z
    if not regime.stochastic:
        h = np.stack([agent.hess_yy_g(X[:, i], Y[:, i]) for i, agent in enumerate(prob.agents)])
        j = np.stack([agent.jac_xy_g(X[:, i], Y[:, i]) for i, agent in enumerate(prob.agents)])
        mode = JhipDeterministic(h=h, j=j)
    else:

        def draw(i: int, t: int):
            return prob.agents[i].hess_jac_s(X[:, i], Y[:, i], plan.stream(i, "jhip", k, t), cfg.minibatch)

        mode = JhipStochastic(draw=draw, n=n, q=q, p=p)
    z = jhip_run(mode, w, cfg.N, gamma, z0, divergence_cap=cfg.divergence_cap)
    for i, agent in enumerate(prob.agents):
        rng = plan.stream(i, "hypergrad", k) if regime.stochastic else None
        est = estimate_jhip(agent, X[:, i], Y[:, i], z[i], rng=rng, batch=cfg.minibatch)
        E[:, i] = est.value
    return E, _EstimateCarry(v=carry.v, z=z), None


def _record(
    metrics: RunMetrics,
    prob: BilevelProblem,
    cfg: RunConfig,
    k: int,
    X: Array,
    Y: Array,
    E: Array,
    U: Array | None,
    v0_used: Array | None,
    accum: dict,
    hints: dict,
) -> None:
    xbar = X.mean(axis=1)
    Q = X - xbar[:, None]
    consensus = float(np.linalg.norm(Q))
    accum["s"] += consensus**2

    metrics.k.append(k)
    metrics.consensus.append(consensus)
    metrics.e_acc.append(accum["e"])
    metrics.s_acc.append(accum["s"])
    drift = None
    if U is not None:
        drift = float(np.linalg.norm(U.mean(axis=1) - E.mean(axis=1)))
    metrics.tracker_drift.append(drift)

    if not cfg.record_oracle_metrics:
        metrics.grad_norm_mean.append(None)
        metrics.inner_residual.append(None)
        metrics.t_acc.append(None)
        metrics.a_acc.append(None)
        metrics.b_acc.append(None)
        metrics.ytilde_gap.append(None)
        return

    tol = cfg.oracle_tol
    oracle = exact_hypergradient(prob, xbar, tol, y0=hints.get("y_star"))
    hints["y_star"] = oracle.y_star
    grad_norm = float(np.linalg.norm(oracle.mean))
    accum["t"] += grad_norm**2
    ytilde = lower_level_solve_mixed(prob, X, tol, y0=hints.get("ytilde", oracle.y_star))
    hints["ytilde"] = ytilde
    metrics.grad_norm_mean.append(grad_norm)
    metrics.inner_residual.append(float(np.mean(np.linalg.norm(Y - ytilde[:, None], axis=0))))
    metrics.t_acc.append(accum["t"])
    metrics.ytilde_gap.append(float(np.linalg.norm(ytilde - oracle.y_star)))

    if cfg.regime.homogeneous and not cfg.regime.stochastic:
        a_term = 0.0
        b_term = 0.0
        for i, agent in enumerate(prob.agents):
            y_star_i = agent_lower_solve(agent, X[:, i], prob.q, prob.meta, tol, y0=Y[:, i])
            a_term += float(np.sum((Y[:, i] - y_star_i) ** 2))
            if v0_used is not None:
                v_star = spd_solve(agent.hess_yy_g(X[:, i], y_star_i), agent.grad_y_f(X[:, i], y_star_i))
                b_term += float(np.sum((v_star - v0_used[:, i]) ** 2))
        accum["a"] += a_term
        accum["b"] += b_term
        metrics.a_acc.append(accum["a"])
        metrics.b_acc.append(accum["b"])
    else:
        metrics.a_acc.append(None)
        metrics.b_acc.append(None)


def _run_common(prob: BilevelProblem, w: WeightMatrix, cfg: RunConfig) -> RunMetrics:
    validate_config(prob, cfg)
    if w.n != prob.n:
        raise ValidationError(f"network has {w.n} agents, problem has {prob.n}")
    n, p, q = prob.n, prob.p, prob.q
    plan = RngPlan(cfg.seed)
    eta_y = _resolve_eta_y(cfg, prob, w)
    gamma = _resolve_gamma(cfg, prob, w)
    epsilon = _resolve_epsilon(cfg, prob)
    track_outer = cfg.algorithm == "dbogt"

    X = np.zeros((p, n))
    Y = np.full((q, n), float(cfg.y0))
    V: Array | None = None
    g_last: Array | None = None
    U: Array | None = None
    E_prev: Array | None = None
    carry = _EstimateCarry()
    metrics = RunMetrics()
    accum = {"s": 0.0, "e": 0.0, "t": 0.0, "a": 0.0, "b": 0.0}
    hints: dict = {}

    for k in range(cfg.K):
        rng_for = (lambda i, t, _k=k: plan.stream(i, "inner", _k, t)) if cfg.regime.stochastic else None
        v_in = V if cfg.inner_tracker_persist else None
        g_in = g_last if cfg.inner_tracker_persist else None
        Y, V, g_last = inner_loop(
            prob,
            w,
            X,
            Y,
            cfg.regime,
            cfg.T,
            eta_y,
            v0=v_in,
            g_prev=g_in,
            rng_for=rng_for,
            batch=cfg.minibatch,
            divergence_cap=cfg.divergence_cap,
        )
        E, carry, v0_used = _estimates(prob, w, cfg, X, Y, k, plan, carry, gamma, epsilon)
        if track_outer:
            U = E.copy() if U is None else mix(w, U) + (E - E_prev)
            direction = U
        else:
            direction = E
        _record(metrics, prob, cfg, k, X, Y, E, U, v0_used, accum, hints)
        X_next = mix(w, X) - cfg.eta_x * direction
        accum["e"] += float(np.sum((X_next - X) ** 2))
        residual = np.linalg.norm(X_next.mean(axis=1) - (X.mean(axis=1) - cfg.eta_x * E.mean(axis=1)))
        metrics.avg_step_residual.append(float(residual))
        X, E_prev = X_next, E
        _guard("outer iterate", [X], cfg.divergence_cap, k)
    metrics.x_final = X
    return metrics


def dbo_run(prob: BilevelProblem, w: WeightMatrix, config: RunConfig) -> RunMetrics:
    """Plain mixed descent on the upper variables (deterministic oracles)."""
    if config.algorithm != "dbo":
        config = replace(config, algorithm="dbo")
    return _run_common(prob, w, config)


def dbogt_run(prob: BilevelProblem, w: WeightMatrix, config: RunConfig) -> RunMetrics:
    """Mixed descent with an outer gradient tracker (deterministic oracles)."""
    if config.algorithm != "dbogt":
        config = replace(config, algorithm="dbogt")
    return _run_common(prob, w, config)


def dsbo_run(prob: BilevelProblem, w: WeightMatrix, config: RunConfig) -> RunMetrics:
    """Stochastic variant: sampled oracles in both loops."""
    if config.algorithm != "dsbo":
        config = replace(config, algorithm="dsbo")
    return _run_common(prob, w, config)


def run(prob: BilevelProblem, w: WeightMatrix, config: RunConfig) -> RunMetrics:
    """Dispatch on config.algorithm."""
    if config.algorithm == "dbo":
        return dbo_run(prob, w, config)
    if config.algorithm == "dbogt":
        return dbogt_run(prob, w, config)
    if config.algorithm == "dsbo":
        return dsbo_run(prob, w, config)
    raise ValidationError(f"unknown algorithm {config.algorithm!r}")


def outer_tracker_update(U: Array, E: Array, E_prev: Array, w: WeightMatrix) -> Array:
    """One tracker round: mix, then correct by the estimate difference."""
    return mix(w, U) + (E - E_prev)
