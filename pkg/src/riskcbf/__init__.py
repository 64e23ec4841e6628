"""Risk-aware control barrier functions for partially observed linear systems.

The package combines a Kalman filter (state estimation under process and
measurement noise), worst-case CVaR over moment ambiguity sets (tail-risk
quantification from the filter's mean and covariance), and discrete-time
control barrier functions (safety constraints on the control input) into
two optimization-based controllers, plus the Monte Carlo harness and CLI
used to evaluate them.
"""

__version__ = "0.1.0"

from .model import (BeliefState, ControllerConfig, EllipsoidSafeSet, HalfSpaceSafeSet,
                    RiskParams, ScenarioConfig, ScenarioError, ScenarioParseError,
                    ScenarioValidationError, SystemModel, h_value, load_scenario,
                    scenario_from_dict, scenario_to_dict)
from .wc_cvar import (MomentAmbiguitySet, QuadraticLoss, SecondMomentMatrix,
                      linear_bound, oracle_wc_cvar_quadratic, wc_cvar_elementwise,
                      wc_cvar_linear, wc_cvar_quadratic)
from .kalman import Measurement, PredictedBelief, gain, predict, update
from .cbf import (LinearCbfConstraint, QuadraticCbfConstraint, belief_risk,
                  ellipsoid_exact_check, ellipsoid_sufficient_constraint,
                  expected_value_constraint, halfspace_constraint, joint_ambiguity)
from .solver import ConvexProgram, Solution, solve
from .control import (ClfParams, ControllerError, Method1Params, NominalController,
                      baseline_expected_value, baseline_ignore_constraint,
                      build_controller, method1_input, method2_input)
from .simulate import (EnsembleMetrics, SimulationError, TrajectoryRecord, mix64,
                       run_ensemble, run_one, run_seed_for)

__all__ = [
    "BeliefState", "ControllerConfig", "EllipsoidSafeSet", "HalfSpaceSafeSet",
    "RiskParams", "ScenarioConfig", "ScenarioError", "ScenarioParseError",
    "ScenarioValidationError", "SystemModel", "h_value", "load_scenario",
    "scenario_from_dict", "scenario_to_dict",
    "MomentAmbiguitySet", "QuadraticLoss", "SecondMomentMatrix", "linear_bound",
    "oracle_wc_cvar_quadratic", "wc_cvar_elementwise", "wc_cvar_linear",
    "wc_cvar_quadratic",
    "Measurement", "PredictedBelief", "gain", "predict", "update",
    "LinearCbfConstraint", "QuadraticCbfConstraint", "belief_risk",
    "ellipsoid_exact_check", "ellipsoid_sufficient_constraint",
    "expected_value_constraint", "halfspace_constraint", "joint_ambiguity",
    "ConvexProgram", "Solution", "solve",
    "ClfParams", "ControllerError", "Method1Params", "NominalController",
    "baseline_expected_value", "baseline_ignore_constraint", "build_controller",
    "method1_input", "method2_input",
    "EnsembleMetrics", "SimulationError", "TrajectoryRecord", "mix64",
    "run_ensemble", "run_one", "run_seed_for",
]
