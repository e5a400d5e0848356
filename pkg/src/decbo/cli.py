"""Command-line entry point.

Subcommands: run (preset experiments), jhip-bench (linear-system solver
error curves), hg-check (estimator-vs-oracle errors), rate-probe
(averaged squared gradient norm across horizons). Exit codes: 0 on
success, 2 on validation or parse errors, 3 on divergence.
"""

import argparse
import sys
from pathlib import Path

from .errors import BadParameter, Divergence, ParseError, ValidationError
from .harness import (
    hg_check,
    jhip_bench,
    parse_config,
    rate_probe,
    rate_probe_csv,
    resolve,
    run_experiment,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decbo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run a preset experiment")
    runp.add_argument("--preset", default="quadratic-smoke")
    runp.add_argument("--config", default=None, help="flat key = value config file")
    runp.add_argument("--algorithm", choices=["dbo", "dbogt", "dsbo"], default=None)
    runp.add_argument("--K", type=int, default=None)
    runp.add_argument("--T", type=int, default=None)
    runp.add_argument("--N", type=int, default=None)
    runp.add_argument("--M", type=int, default=None)
    runp.add_argument("--eta-x", type=float, default=None, dest="eta_x")
    runp.add_argument("--eta-y", type=float, default=None, dest="eta_y")
    runp.add_argument("--gamma", type=float, default=None)
    runp.add_argument("--epsilon", type=float, default=None)
    runp.add_argument("--seed", type=int, default=None)
    runp.add_argument("--minibatch", type=int, default=None)
    runp.add_argument("--repeats", type=int, default=None)
    runp.add_argument("--workers", type=int, default=1)
    runp.add_argument("--a", type=float, default=None, help="ring self-weight override")
    runp.add_argument("--out", default="runs")

    jb = sub.add_parser("jhip-bench", help="per-iteration error of the aggregate linear solve")
    jb.add_argument("--agents", type=int, default=5)
    jb.add_argument("--q", type=int, default=4)
    jb.add_argument("--p", type=int, default=3)
    jb.add_argument("--steps", type=int, default=200)
    jb.add_argument("--gamma", type=float, default=None)
    jb.add_argument("--a", type=float, default=0.4)
    jb.add_argument("--seed", type=int, default=0)
    jb.add_argument("--stochastic", action="store_true")
    jb.add_argument("--sigma", type=float, default=0.1)
    jb.add_argument("--out", default=None, help="CSV path; stdout when omitted")

    hc = sub.add_parser("hg-check", help="estimator-vs-oracle error table")
    hc.add_argument("--seed", type=int, default=0)
    hc.add_argument("--out", default=None)

    rp = sub.add_parser("rate-probe", help="averaged squared gradient norm across horizons")
    rp.add_argument("--algorithm", choices=["dbo", "dbogt", "dsbo"], default="dbogt")
    rp.add_argument("--k-list", default="100,400", dest="k_list")
    rp.add_argument("--preset", default="quadratic-rate")
    rp.add_argument("--repeats", type=int, default=1)
    rp.add_argument("--out", default=None)
    return parser


def _emit(lines: list[str], out: str | None) -> None:
    text = "\n".join(lines) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _cmd_run(args) -> int:
    overrides = {
        key: getattr(args, key)
        for key in (
            "preset",
            "algorithm",
            "K",
            "T",
            "N",
            "M",
            "eta_x",
            "eta_y",
            "gamma",
            "epsilon",
            "seed",
            "minibatch",
            "repeats",
            "workers",
            "a",
        )
        if getattr(args, key) is not None
    }
    settings = parse_config(args.config, overrides)
    resolved = resolve(settings)
    summary = run_experiment(resolved, args.out)
    for algo, stats in summary.items():
        print(
            f"{algo}: final grad norm mean {stats['final_mean']:.6g} "
            f"(initial {stats['initial_mean']:.6g}, repeats std {stats['final_std']:.3g})"
        )
    print(f"outputs written to {args.out}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "jhip-bench":
            lines = jhip_bench(
                agents=args.agents,
                q=args.q,
                p=args.p,
                steps=args.steps,
                gamma=args.gamma,
                a=args.a,
                seed=args.seed,
                stochastic=args.stochastic,
                sigma=args.sigma,
            )
            _emit(lines, args.out)
            return 0
        if args.command == "hg-check":
            _emit(hg_check(seed=args.seed), args.out)
            return 0
        if args.command == "rate-probe":
            k_list = [int(tok) for tok in args.k_list.split(",") if tok.strip()]
            result = rate_probe(args.algorithm, args.preset, k_list, repeats=args.repeats)
            _emit(rate_probe_csv(result), args.out)
            return 0
        raise ValidationError(f"unknown command {args.command!r}")
    except (ParseError, ValidationError, BadParameter) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Divergence as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
