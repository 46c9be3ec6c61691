"""Numerical sub-Riemannian geometry: brackets, steering, distances, reconstruction."""

from .chow import SteeringChart, bracket_flow, build_chart, michor_check, psi_map, steer, steer_local
from .errors import (
    ConvergenceError,
    DomainError,
    DomainExit,
    InputError,
    NotBracketGenerating,
    NumericError,
    ParseError,
    SteeringError,
)
from .expr import Expr, diff_expr, eval_expr, parse_expr
from .fields import (
    FormalBracket,
    Geometry,
    GrowthVector,
    VectorField,
    eval_bracket,
    growth_vector,
    lie_bracket,
    load_geometry,
    parse_bracket,
)
from .integrate import (
    Control,
    HorizontalPath,
    concat_controls,
    endpoint,
    flow,
    integrate_control,
    picard_solve,
    reverse_control,
)
from .metrics import BallCloud, ball_sample, boxfit_exponent, distance_upper, path_length
from .poincare import (
    HorizontalDerivatives,
    cc_lipschitz_check,
    horizontal_derivatives,
    path_independence_check,
    reconstruct,
)

__version__ = "0.1.0"
