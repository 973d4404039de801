"""Alternating-direction Lagrangian methods for nonconvex structured problems."""

__version__ = "0.1.0"

from .errors import SpecError, UsageError
from .blocks import (Cosine1D, Huber, NegativeSquare1D, ObjectiveBlock, Polynomial1D, Quadratic,
                     RangeResidual, RangeTerm, SumBlock, Zero, block_from_spec, scalar_block)
from .sets import (Ball, Box, ConstraintSet, Functional, IntervalUnion, ProductSet, WholeSpace,
                   project, set_from_spec)
from .problem import (PrimalDualPoint, StructuredProblem, coupling_residual, eval_aug_lagrangian,
                      eval_objective, eval_primal_residual, grad_aug_lagrangian, load_problem,
                      problem_from_spec, problem_to_spec)
from .fon import FonCertificate, check_fon
from .assumptions import AssumptionReport, validate_assumptions
from .subsolvers import BlockResult, SolverPolicy, SubproblemSpec, solve_block
from .algorithms import (DualPolicy, IterationRecord, IterationTrace, PenaltySchedule, StopRule,
                         diagnose_trace, run_adpm, run_admm, run_method_of_multipliers,
                         run_quadratic_penalty)
from .oracle import FixedPointPrediction, ScalarInstance, predict_fixed_point, verify_prediction
from .localization import (CopyLayout, LocalizationRunConfig, SensorNetwork, generate_network,
                           rmse, run_dadlm, run_dgd)

__all__ = [name for name in dir() if not name.startswith("_")]
