"""Multiple-domain LGR collocation for optimal control with state-variable
inequality path constraints."""

from .autodiff import Dual, detect_constraint_order, total_time_derivative
from .driver import SpocConfig, SpocRun, compare_baseline, solve_baseline, solve_spoc
from .errors import (
    AssemblyError,
    AssumptionViolatedError,
    DetectionInconsistentError,
    EvaluationError,
    MeshInvalidError,
    OrderDetectionError,
    ProblemDefinitionError,
    SpocError,
    UnsupportedRegimeError,
)
from .mesh import MeshStructure
from .model import OcpDefinition, PathConstraint, SvicSpec, TimeSpec, Trajectory
from .nlp import SolverOptions, solve
from .problems import BenchmarkProblem, bryson_denham, get_benchmark, reentry_vehicle
from .structure import DetectionConfig

__version__ = "0.1.0"
