"""Stochastic extragradient solvers for finite-sum variational inequality
problems, with arbitrary sampling schemes, stepsize schedules, quadratic-game
benchmarks, and theoretical convergence envelopes."""

from .operators import AffineComponent, CallableComponent, FiniteSumOperator
from .quadgame import (
    GameGenConfig,
    QuadraticGame,
    game_to_operator,
    generate_game,
    load_game,
    save_game,
)
from .sampling import (
    ImportanceScheme,
    NiceScheme,
    Sample,
    UniformScheme,
    WithoutReplacementScheme,
    WithReplacementScheme,
    apply_sample,
    mu_bar,
    parse_scheme,
    sigma_star_sq,
    stepsize_cap,
    verify_conditions,
)
from .schedule import StepsizePolicy, constant, decreasing_k, rho_tilde_iseg, rho_tilde_sseg
from .solvers import (
    EG,
    ISEG,
    SSEG,
    DivergenceError,
    SolverConfig,
    Trajectory,
    iseg_step,
    run,
    run_many,
    sseg_step,
)
from .rates import (
    IsegTarget,
    RateBound,
    SsegTarget,
    UnifiedParams,
    certify_unified_assumption,
    decreasing_envelope,
    envelope,
    iseg_params,
    iseg_stepsize_cap,
    rate_report,
    sseg_params,
    iseg_constant_envelope,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
