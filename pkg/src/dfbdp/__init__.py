"""Deep backward dynamic programming for semilinear PIDEs with jumps."""

from .benchmarks import exact_fields, make_problem
from .errors import ConfigError, DfbdpError, InvalidArgument, NumericFailure, UnsupportedProblem
from .forward import PathBatch, ProblemSpec, TimeGrid, euler_step, simulate_batch
from .levy import LevyModel, QuadratureRule, compensator_integral, gamma_weighted_integral
from .metrics import regularity_probe, relative_l1, repeated_runs, scheme_error_measure
from .solver import StepSolution, TrainConfig, solve

__version__ = "0.1.0"
