"""Exponential dichotomies and slow/fast splittings for linear delay equations with small delay."""
from .constants import DichotomyConstants, compute_constants, gap_margin, solve_lambda, sweep_constants
from .errors import (ConvergenceError, DelaySplitError, DimensionError, HypothesisError, IntegrationError,
                     QuadratureError, WindowError)
from .model import (DelayKernel, HistorySegment, kernel_from_config, lag_zero, scalar_delay, validate_hypothesis,
                    zero_kernel)
from .special import SpecialSolutionTable, build_special_solution, check_driver_properties, phi_value
from .splitting import (SamplerConfig, analyze_splitting, estimate_norms, limit_functional, project,
                        splitting_indices, verify_dichotomy)
from .stepper import DenseSolution, evolve_segment, integrate, integrate_batch

__version__ = "0.1.0"
