"""Risk-averse quantal response equilibria in two-player normal-form and Markov games."""

__version__ = "0.1.0"

from .certificates import Evidence, MonotonicityCertificate, certify, closed_form_test, empirical_monotonicity
from .environments import GridworldSpec, gridworld_mg, inspection_game, inspection_mg, random_mg
from .errors import (
    ConfigurationError,
    ConvergenceError,
    DomainError,
    InvalidInputError,
    RQEError,
    UnsupportedOracleError,
)
from .maac import MaacConfig, Mode, TransitionBatch, build_targets, critic_step, train
from .markov import (
    MarkovGame,
    QPair,
    bellman_evaluate,
    bellman_optimality,
    minimax_check,
    q_bounds,
    stage_game,
    value_iteration,
)
from .normal_form import JointProfile, PayoffPair, gradient_operator, objective_J, rqe_gap
from .regularizers import KL_LOG_BARRIER, REVERSE_KL_NEG_ENTROPY, RegularizerKind, RiskProfile
from .simplex import WeightVector, project_simplex, weighted_inner, weighted_norm
from .solver import SolveReport, brute_force_rqe, lipschitz_probe, solve
from .two_timescale import StepSchedule, actor_step, run
