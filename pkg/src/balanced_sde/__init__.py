"""Explicit balanced (sine-tamed) Euler and Milstein schemes for SDEs with
superlinearly growing coefficients, the rational tamed schemes they are
compared against, and a coupled-path harness for mean-square convergence
orders and moment bounds."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    CapabilityError,
    Commutativity,
    InsufficientResolutionError,
    SchemeKind,
    SchemeSpec,
    SdeSystem,
    SimConfig,
    StudyError,
    Trajectory,
    check_commutativity,
)
from .brownian import WienerGrid, coarse_increment, double_ito, generate_path, generate_paths  # noqa: E402
from .harness import (  # noqa: E402
    ConvergenceReport,
    MomentReport,
    compare_study,
    convergence_study,
    fit_order,
    integrate,
    moment_study,
    reference_solution,
)
from .problems import (  # noqa: E402
    make_gbm,
    make_ginzburg_landau,
    make_noncommutative_2d,
    make_problem,
    make_three_halves,
)
