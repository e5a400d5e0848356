"""Embedded experiment presets.

Each preset resolves to a problem generator, a ring network, and a base
RunConfig; per-algorithm configs only differ in the (stochastic) regime
flag and the minibatch size. Deterministic algorithms default to one
repeat, the stochastic one to five.
"""

from collections.abc import Callable
from dataclasses import dataclass, replace

from .hypergrad import Regime
from .solvers import RunConfig
from .testbeds import make_quadratic_testbed, make_synthetic_hypercleaning, make_synthetic_logistic


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    description: str
    make_problem: Callable[[], object]  # BilevelProblem or a wrapper with .problem
    n: int
    a: float
    base_config: RunConfig
    algorithms: tuple[str, ...]
    dsbo_minibatch: int = 10
    dsbo_repeats: int = 5

    def config_for(self, algorithm: str) -> RunConfig:
        cfg = self.base_config
        if algorithm == "dsbo":
            regime = Regime(stochastic=True, homogeneous=cfg.regime.homogeneous)
            return replace(cfg, algorithm=algorithm, regime=regime, minibatch=self.dsbo_minibatch)
        regime = Regime(stochastic=False, homogeneous=cfg.regime.homogeneous)
        return replace(cfg, algorithm=algorithm, regime=regime, minibatch=0)

    def default_repeats(self, algorithm: str) -> int:
        return self.dsbo_repeats if algorithm == "dsbo" else 1


def _quadratic_smoke():
    return make_quadratic_testbed(n=4, p=3, q=3, heterogeneity=0.7, seed=7, noise_std=0.05)


def _quadratic_rate():
    return make_quadratic_testbed(n=5, p=4, q=4, heterogeneity=1.0, seed=11, noise_std=0.05)


def _logistic_fig1a():
    return make_synthetic_logistic(n=20, p=50, samples_per_agent=20, noise_rate=0.1, seed=2201)


def _hypercleaning_fig2():
    return make_synthetic_hypercleaning(
        n=20, features=8, samples_per_agent=10, corruption_rate=0.3, c_r=0.001, seed=404
    )


PRESETS: dict[str, ExperimentPreset] = {
    "quadratic-smoke": ExperimentPreset(
        name="quadratic-smoke",
        description="small heterogeneous quadratic testbed, seconds to run",
        make_problem=_quadratic_smoke,
        n=4,
        a=0.4,
        base_config=RunConfig(
            regime=Regime(stochastic=False, homogeneous=False),
            K=30,
            T=15,
            N=12,
            M=8,
            eta_x=0.1,
            seed=0,
            record_oracle_metrics=True,
        ),
        algorithms=("dbo", "dbogt", "dsbo"),
        dsbo_minibatch=1,
    ),
    "quadratic-rate": ExperimentPreset(
        name="quadratic-rate",
        description="quadratic testbed sized for convergence-rate probes",
        make_problem=_quadratic_rate,
        n=5,
        a=0.4,
        base_config=RunConfig(
            regime=Regime(stochastic=False, homogeneous=False),
            K=100,
            T=12,
            N=12,
            M=8,
            eta_x=0.05,
            seed=0,
            record_oracle_metrics=True,
        ),
        algorithms=("dbo", "dbogt", "dsbo"),
        dsbo_minibatch=1,
    ),
    "synthetic-logistic-fig1a": ExperimentPreset(
        name="synthetic-logistic-fig1a",
        description="heterogeneous ridge-weighted logistic regression, 20 agents",
        make_problem=_logistic_fig1a,
        n=20,
        a=0.4,
        base_config=RunConfig(
            regime=Regime(stochastic=False, homogeneous=False),
            K=100,
            T=10,
            N=20,
            M=10,
            eta_x=0.01,
            eta_y=0.01,
            gamma=0.01,
            seed=0,
            record_oracle_metrics=True,
        ),
        algorithms=("dbo", "dbogt", "dsbo"),
        dsbo_minibatch=10,
    ),
    "hypercleaning-fig2": ExperimentPreset(
        name="hypercleaning-fig2",
        description="synthetic label-cleaning task with per-sample reliability weights",
        make_problem=_hypercleaning_fig2,
        n=20,
        a=0.5,
        base_config=RunConfig(
            regime=Regime(stochastic=False, homogeneous=False),
            K=30,
            T=10,
            N=15,
            M=8,
            eta_x=0.05,
            eta_y=None,
            gamma=None,
            seed=0,
            record_oracle_metrics=True,
        ),
        algorithms=("dbo", "dbogt"),
    ),
}
