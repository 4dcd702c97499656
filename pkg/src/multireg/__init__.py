"""Multi-parameter Tikhonov regularization with value-function based parameter choice."""

from .exceptions import (
    CapabilityError,
    DegeneratePenaltyError,
    MultiregError,
    NonConvergenceError,
    SingularSystemError,
    UnsupportedPenaltyError,
)
from .inner_solver import SolveRecord, solve, solve_elastic_net, solve_h1_tv, solve_quadratic
from .operators import GridSpec, ImageGrid, LinearOperator, build_convolution_kernel, build_gaussian_blur
from .penalties import Penalty, evaluate, h1_seminorm, l1_norm, l2_squared, quadratic_gram, total_variation
from .problem import Problem, relative_error
from .selection_rules import (
    RuleTrace,
    atikhonov_fixed_point,
    balance_fixed_point_I,
    balance_fixed_point_II,
    discrepancy_select,
    gamma_two_step,
    oracle_grid_search,
)
from .value_function import certify_concavity, eval_F, eval_Phi, eval_Psi, fd_partials

__version__ = "0.1.0"

__all__ = [
    "CapabilityError",
    "DegeneratePenaltyError",
    "MultiregError",
    "NonConvergenceError",
    "SingularSystemError",
    "UnsupportedPenaltyError",
    "SolveRecord",
    "solve",
    "solve_elastic_net",
    "solve_h1_tv",
    "solve_quadratic",
    "GridSpec",
    "ImageGrid",
    "LinearOperator",
    "build_convolution_kernel",
    "build_gaussian_blur",
    "Penalty",
    "evaluate",
    "h1_seminorm",
    "l1_norm",
    "l2_squared",
    "quadratic_gram",
    "total_variation",
    "Problem",
    "relative_error",
    "RuleTrace",
    "atikhonov_fixed_point",
    "balance_fixed_point_I",
    "balance_fixed_point_II",
    "discrepancy_select",
    "gamma_two_step",
    "oracle_grid_search",
    "certify_concavity",
    "eval_F",
    "eval_Phi",
    "eval_Psi",
    "fd_partials",
]
