"""svie-lift: stochastic Volterra equations solved through their lift to a weighted curve space"""

from svie_lift.__version__ import version
from svie_lift.coefficients import (
    CoefficientSet,
    LipschitzReport,
    certify,
    exponential_kernel,
    gamma_kernel,
    lift_a,
    lift_b,
    ornstein_uhlenbeck,
    zero_coefficients,
)
from svie_lift.config import (
    Scenario,
    ScenarioConfig,
    build_scenario,
    load_config,
)
from svie_lift.exceptions import (
    ConfigValidationError,
    DivergenceError,
    SvieLiftError,
)
from svie_lift.invariance import (
    ConvergenceVerdict,
    LawEstimate,
    estimate_law,
    initial_dependence_probe,
    test_convergence,
)
from svie_lift.levy_noise import (
    LevyModel,
    NoiseStream,
    sample_increment,
)
from svie_lift.spde_solver import (
    SolverConfig,
    SolverState,
    picard_oracle,
    run_ensemble,
    simulate_path,
    step,
    svie_direct,
)
from svie_lift.weighted_space import (
    Curve,
    WeightFunction,
    evaluate,
    exponential_weight,
    norm_w,
    norm_w_infinity,
    polynomial_exponential_weight,
    shift,
)

__all__ = [
    "CoefficientSet",
    "ConfigValidationError",
    "ConvergenceVerdict",
    "Curve",
    "DivergenceError",
    "LawEstimate",
    "LevyModel",
    "LipschitzReport",
    "NoiseStream",
    "Scenario",
    "ScenarioConfig",
    "SolverConfig",
    "SolverState",
    "SvieLiftError",
    "WeightFunction",
    "build_scenario",
    "certify",
    "estimate_law",
    "evaluate",
    "exponential_kernel",
    "exponential_weight",
    "gamma_kernel",
    "initial_dependence_probe",
    "lift_a",
    "lift_b",
    "load_config",
    "norm_w",
    "norm_w_infinity",
    "ornstein_uhlenbeck",
    "picard_oracle",
    "polynomial_exponential_weight",
    "run_ensemble",
    "sample_increment",
    "shift",
    "simulate_path",
    "step",
    "svie_direct",
    "test_convergence",
    "version",
    "zero_coefficients",
]
