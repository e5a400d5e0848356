"""Decentralized bilevel optimization: agents on a mixing graph
cooperatively minimize an upper objective subject to a strongly convex
lower-level problem, with four hypergradient-estimation branches."""

from .errors import (
    BadParameter,
    BreakdownDetected,
    DecboError,
    DimMismatch,
    Divergence,
    MissingInput,
    NoConvergence,
    NotContractive,
    NotDoublyStochastic,
    NotSPD,
    NotSymmetric,
    ParseError,
    ValidationError,
)
from .hypergrad import (
    ConstantsLedger,
    HypergradEstimate,
    Regime,
    constants,
    estimate,
    estimate_aid,
    estimate_jhip,
    estimate_neumann,
)
from .jhip import JhipDeterministic, JhipState, JhipStochastic, jhip_init, jhip_run, jhip_solution, jhip_step
from .network import WeightMatrix, build_from_matrix, build_ring, load_matrix_csv, mix, mixing_contraction_check
from .numerics import conjugate_gradient, spd_solve, sym_eigenvalues
from .problems import (
    AgentOracles,
    BilevelProblem,
    SmoothnessMeta,
    exact_hypergradient,
    finite_difference_hypergradient,
    lower_level_solve_exact,
    lower_level_solve_mixed,
    upper_value,
)
from .rng import RngPlan
from .schedules import Constant, Harmonic
from .solvers import RunConfig, RunMetrics, dbo_run, dbogt_run, dsbo_run, inner_loop, run
from .testbeds import (
    QuadraticTestbed,
    dump_datasets,
    make_quadratic_testbed,
    make_synthetic_hypercleaning,
    make_synthetic_logistic,
)

__all__ = [name for name in dir() if not name.startswith("_")]
