"""Config parsing, experiment execution, and CSV emission.

Config files are flat key = value text; CLI flags override file values.
Unknown keys are rejected with the offending line. All floats are
written with 17 significant digits so CSV outputs parse back losslessly.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .jhip import JhipDeterministic, JhipStochastic, jhip_init, jhip_solution, jhip_step
from .network import build_ring
from .presets import PRESETS, ExperimentPreset
from .problems import exact_hypergradient
from .hypergrad import estimate_aid, estimate_jhip, estimate_neumann, hypergrad_lipschitz, truncated_inverse_series
from .schedules import Constant, Harmonic
from .solvers import RunConfig, RunMetrics, run
from .testbeds import make_quadratic_testbed

FMT = "%.17g"

_KEY_TYPES = {
    "preset": str,
    "algorithm": str,
    "K": int,
    "T": int,
    "N": int,
    "M": int,
    "eta_x": float,
    "eta_y": float,
    "gamma": float,
    "epsilon": float,
    "seed": int,
    "minibatch": int,
    "repeats": int,
    "workers": int,
    "out": str,
    "record_oracle_metrics": bool,
    "a": float,
}


@dataclass(frozen=True)
class Settings:
    """Normalized parse result: a preset name plus optional overrides."""

    preset: str = "quadratic-smoke"
    algorithm: str | None = None
    K: int | None = None
    T: int | None = None
    N: int | None = None
    M: int | None = None
    eta_x: float | None = None
    eta_y: float | None = None
    gamma: float | None = None
    epsilon: float | None = None
    seed: int | None = None
    minibatch: int | None = None
    repeats: int | None = None
    workers: int = 1
    out: str | None = None
    record_oracle_metrics: bool | None = None
    a: float | None = None


def _coerce(key: str, raw: str, where: str):
    kind = _KEY_TYPES[key]
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw.strip())
    except ValueError as exc:
        raise ParseError(f"{where}: cannot parse {key} value {raw.strip()!r} as {kind.__name__}") from exc


def parse_config(path=None, overrides: dict | None = None) -> Settings:
    """Read a flat key = value file, then apply overrides on top."""
    values: dict = {}
    if path is not None:
        text = Path(path).read_text()
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ParseError(f"line {lineno}: expected 'key = value', got {stripped!r}")
            key, raw = stripped.split("=", 1)
            key = key.strip()
            if key not in _KEY_TYPES:
                raise ParseError(f"line {lineno}: unknown key {key!r}")
            values[key] = _coerce(key, raw, f"line {lineno}")
    for key, value in (overrides or {}).items():
        if key not in _KEY_TYPES:
            raise ParseError(f"override: unknown key {key!r}")
        if value is None:
            continue
        values[key] = value if not isinstance(value, str) else _coerce(key, value, "override")
    return Settings(**values)


def serialize_settings(settings: Settings) -> str:
    """Canonical text form; parse_config of this text reproduces settings."""
    lines = []
    for key in _KEY_TYPES:
        value = getattr(settings, key)
        if value is None:
            continue
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = FMT % value
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


@dataclass
class ResolvedRun:
    preset: ExperimentPreset
    problem: object
    testbed: object | None
    w: object
    algorithms: list[str]
    configs: dict[str, RunConfig]
    repeats: dict[str, int]
    workers: int
    out: str | None
    settings: Settings = field(repr=False, default=None)


def resolve(settings: Settings) -> ResolvedRun:
    """Instantiate problem, network, and per-algorithm configs."""
    if settings.preset not in PRESETS:
        names = ", ".join(sorted(PRESETS))
        raise ValidationError(f"unknown preset {settings.preset!r}; available presets: {names}")
    preset = PRESETS[settings.preset]
    a = preset.a if settings.a is None else settings.a
    if not (0.0 < a < 1.0):
        raise ValidationError(f"a in (0,1) violated: a = {a}")
    made = preset.make_problem()
    problem = getattr(made, "problem", made)
    testbed = made if made is not problem else None
    w = build_ring(preset.n, a)

    if settings.algorithm is not None:
        if settings.algorithm not in preset.algorithms:
            raise ValidationError(
                f"algorithm {settings.algorithm!r} not offered by preset {preset.name!r} "
                f"(choose from {', '.join(preset.algorithms)})"
            )
        algorithms = [settings.algorithm]
    else:
        algorithms = list(preset.algorithms)

    configs = {}
    repeats = {}
    for algo in algorithms:
        cfg = preset.config_for(algo)
        updates = {}
        for name in ("K", "T", "N", "M", "eta_x", "eta_y", "gamma", "epsilon", "seed", "minibatch"):
            value = getattr(settings, name)
            if value is not None:
                updates[name] = value
        if settings.record_oracle_metrics is not None:
            updates["record_oracle_metrics"] = settings.record_oracle_metrics
        if updates:
            cfg = replace(cfg, **updates)
        configs[algo] = cfg
        repeats[algo] = settings.repeats if settings.repeats is not None else preset.default_repeats(algo)
        if repeats[algo] < 1:
            raise ValidationError(f"repeats must be >= 1, got {repeats[algo]}")
    if settings.workers < 1:
        raise ValidationError(f"workers must be >= 1, got {settings.workers}")
    return ResolvedRun(
        preset=preset,
        problem=problem,
        testbed=testbed,
        w=w,
        algorithms=algorithms,
        configs=configs,
        repeats=repeats,
        workers=settings.workers,
        out=settings.out,
        settings=settings,
    )


def _write_lines(path: Path, lines: list[str]) -> None:
    path.write_text("\n".join(lines) + "\n")


def run_experiment(resolved: ResolvedRun, out_dir) -> dict:
    """Execute every (algorithm, repeat) job and write the CSV outputs.

    Produces one metrics CSV per run, a summary.csv with per-run finals
    and per-algorithm mean/std, and a plotdata.csv with log10 gradient
    norms per iteration. Returns the per-algorithm summary dict.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for algo in resolved.algorithms:
        base = resolved.configs[algo]
        for r in range(resolved.repeats[algo]):
            jobs.append((algo, replace(base, seed=base.seed + r)))

    def one(job):
        algo, cfg = job
        return (algo, cfg.seed), run(resolved.problem, resolved.w, cfg)

    if resolved.workers > 1:
        with ThreadPoolExecutor(max_workers=resolved.workers) as pool:
            results = dict(pool.map(one, jobs))
    else:
        results = dict(map(one, jobs))

    summary_rows = ["algorithm,seed,final_grad_norm,best_grad_norm,initial_grad_norm,final_consensus"]
    summary: dict[str, dict] = {}
    per_algo_curves: dict[str, list[list[float]]] = {}
    for algo in resolved.algorithms:
        finals, initials, bests = [], [], []
        for r in range(resolved.repeats[algo]):
            seed = resolved.configs[algo].seed + r
            metrics = results[(algo, seed)]
            _write_lines(out / f"run_{algo}_seed{seed}.csv", metrics.csv_lines())
            norms = [g for g in metrics.grad_norm_mean if g is not None]
            final = norms[-1] if norms else math.nan
            best = min(norms) if norms else math.nan
            initial = norms[0] if norms else math.nan
            finals.append(final)
            bests.append(best)
            initials.append(initial)
            summary_rows.append(
                f"{algo},{seed},{FMT % final},{FMT % best},{FMT % initial},{FMT % metrics.consensus[-1]}"
            )
            if norms:
                per_algo_curves.setdefault(algo, []).append(norms)
        mean = float(np.mean(finals)) if finals else math.nan
        std = float(np.std(finals)) if finals else math.nan
        summary_rows.append(f"{algo},mean,{FMT % mean},,{FMT % float(np.mean(initials))},")
        summary_rows.append(f"{algo},std,{FMT % std},,,")
        summary[algo] = {
            "final_mean": mean,
            "final_std": std,
            "initial_mean": float(np.mean(initials)) if initials else math.nan,
            "best_mean": float(np.mean(bests)) if bests else math.nan,
        }
    _write_lines(out / "summary.csv", summary_rows)

    if per_algo_curves:
        algos = [a for a in resolved.algorithms if a in per_algo_curves]
        k_len = min(min(len(c) for c in per_algo_curves[a]) for a in algos)
        header = "k," + ",".join(f"log10_grad_norm_{a}" for a in algos)
        lines = [header]
        for k in range(k_len):
            cells = [str(k)]
            for a in algos:
                mean_norm = float(np.mean([c[k] for c in per_algo_curves[a]]))
                cells.append(FMT % math.log10(mean_norm) if mean_norm > 0 else "")
            lines.append(",".join(cells))
        _write_lines(out / "plotdata.csv", lines)
    return summary


# ---------------------------------------------------------------------------
# Rate probes
# ---------------------------------------------------------------------------


def _phi_smoothness(resolved: ResolvedRun) -> float:
    if resolved.testbed is not None and hasattr(resolved.testbed, "phi_curvature"):
        return resolved.testbed.phi_curvature()[1]
    return hypergrad_lipschitz(resolved.problem.meta)


def rate_probe(algorithm: str, preset_name: str, k_list: list[int], repeats: int = 1, base_seed: int = 0) -> dict:
    """Average squared gradient norm at scaling-law stepsizes, per horizon K.

    dbogt uses a constant upper stepsize; dbo scales it as K^(-1/3) and
    dsbo as K^(-1/2) (inner stepsize too). Returns the (K, metric) table
    and the fitted log-log slope when more than one K is given.
    """
    if sorted(k_list) != list(k_list):
        raise ValidationError("k_list must be ascending")
    resolved = resolve(Settings(preset=preset_name, algorithm=algorithm, record_oracle_metrics=True))
    base_cfg = resolved.configs[algorithm]
    smooth = _phi_smoothness(resolved)
    eta0 = 0.5 / smooth
    k_ref = k_list[0]
    rows = []
    for K in k_list:
        if algorithm == "dbo":
            eta_x = eta0 * (k_ref / K) ** (1.0 / 3.0)
        elif algorithm == "dsbo":
            eta_x = eta0 * math.sqrt(k_ref / K)
        else:
            eta_x = eta0
        cfg = replace(base_cfg, K=K, eta_x=eta_x)
        if algorithm == "dsbo":
            scale = math.sqrt(k_ref / K)
            base_eta_y = 2.0 / (resolved.problem.meta.mu + resolved.problem.meta.L)
            cfg = replace(cfg, eta_y=base_eta_y * scale)
        values = []
        for r in range(repeats):
            metrics = run(resolved.problem, resolved.w, replace(cfg, seed=base_seed + r))
            values.append(metrics.t_acc[-1] / len(metrics.k))
        rows.append((K, float(np.mean(values)), eta_x))
    slope = None
    if len(rows) > 1:
        logk = np.log([r[0] for r in rows])
        logm = np.log([r[1] for r in rows])
        slope = float(np.polyfit(logk, logm, 1)[0])
    return {"algorithm": algorithm, "rows": rows, "slope": slope}


def rate_probe_csv(result: dict) -> list[str]:
    lines = ["K,avg_sq_grad_norm,eta_x"]
    for K, metric, eta_x in result["rows"]:
        lines.append(f"{K},{FMT % metric},{FMT % eta_x}")
    if result["slope"] is not None:
        lines.append(f"# log-log slope = {FMT % result['slope']}")
    return lines


# ---------------------------------------------------------------------------
# Estimator and linear-system benches backing the CLI subcommands
# ---------------------------------------------------------------------------


def jhip_bench(
    agents: int = 5,
    q: int = 4,
    p: int = 3,
    steps: int = 200,
    gamma: float | None = None,
    a: float = 0.4,
    seed: int = 0,
    stochastic: bool = False,
    sigma: float = 0.1,
    kappa_max: float = 20.0,
) -> list[str]:
    """Per-iteration error CSV (t, max_err, mean_err) on a random instance."""
    rng = np.random.default_rng(seed)
    h = np.empty((agents, q, q))
    j = rng.standard_normal((agents, p, q))
    for i in range(agents):
        basis, _ = np.linalg.qr(rng.standard_normal((q, q)))
        spectrum = rng.uniform(1.0, kappa_max, size=q)
        h[i] = basis @ np.diag(spectrum) @ basis.T
    w = build_ring(agents, a)
    z_star = jhip_solution(h, j)
    l_max = max(float(np.linalg.eigvalsh(h[i])[-1]) for i in range(agents))
    if gamma is None:
        gamma = 1.0 / (2.0 * l_max)
    if stochastic:
        def draw(i, t, _rng=np.random.default_rng(seed + 1)):
            noise = _rng.standard_normal((q, q))
            return h[i] + sigma * 0.5 * (noise + noise.T), j[i] + sigma * _rng.standard_normal((p, q))

        mode = JhipStochastic(draw=draw, n=agents, q=q, p=p)
        schedule = Harmonic(gamma, 20.0)
    else:
        mode = JhipDeterministic(h=h, j=j)
        schedule = Constant(gamma)
    state = jhip_init(mode, np.zeros((agents, q, p)))
    lines = ["t,max_err,mean_err"]

    def emit(s):
        errs = np.sqrt(np.sum((s.z - z_star[None]) ** 2, axis=(1, 2)))
        lines.append(f"{s.t},{FMT % errs.max()},{FMT % errs.mean()}")

    emit(state)
    for t in range(steps):
        state = jhip_step(state, mode, w, schedule(t))
        emit(state)
    return lines


def hg_check(seed: int = 0) -> list[str]:
    """Estimator-vs-oracle errors as CSV rows (branch, max_err, mean_err).

    Uses a homogeneous quadratic instance with the lower level solved
    tightly, so every branch should track the reference oracle.
    """
    testbed = make_quadratic_testbed(n=4, p=3, q=3, heterogeneity=0.0, seed=seed)
    prob = testbed.problem
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(prob.p)
    oracle = exact_hypergradient(prob, x, 1e-12)
    y = oracle.y_star
    w = build_ring(prob.n, 0.4)
    lines = ["branch,max_err,mean_err"]

    def emit(name, estimates):
        errs = [float(np.linalg.norm(estimates[:, i] - oracle.per_agent[:, i])) for i in range(prob.n)]
        lines.append(f"{name},{FMT % max(errs)},{FMT % float(np.mean(errs))}")

    aid = np.stack([estimate_aid(ag, x, y, prob.q).value for ag in prob.agents], axis=1)
    emit("aid", aid)

    h = np.stack([ag.hess_yy_g(x, y) for ag in prob.agents])
    j = np.stack([ag.jac_xy_g(x, y) for ag in prob.agents])
    from .jhip import jhip_run  # local import to avoid cycle at module load

    z = jhip_run(JhipDeterministic(h=h, j=j), w, 400, 1.0 / (2.0 * prob.meta.l_g1), np.zeros((prob.n, prob.q, prob.p)))
    jhip_vals = np.stack([estimate_jhip(ag, x, y, z[i]).value for i, ag in enumerate(prob.agents)], axis=1)
    emit("jhip", jhip_vals)

    eps = 0.5 / prob.meta.L
    m_cap = 60
    series = truncated_inverse_series(prob.agents[0].hess_yy_g(x, y), eps, m_cap)
    neumann_mean = np.stack(
        [ag.grad_x_f(x, y) - ag.jac_xy_g(x, y) @ (series @ ag.grad_y_f(x, y)) for ag in prob.agents], axis=1
    )
    emit("neumann_mean", neumann_mean)

    single = np.stack(
        [
            estimate_neumann(ag, x, y, m_cap, eps, np.random.default_rng(seed + 100 + i), meta=prob.meta).value
            for i, ag in enumerate(prob.agents)
        ],
        axis=1,
    )
    emit("neumann_draw", single)
    return lines
