"""Built-in acceptance battery behind ``svie-lift selftest``.

The limiting-law checks run the bundled ``ou`` and ``exp_decay`` scenarios at their
configured law sizes (10^4 paths per sample), so the whole battery takes minutes.
"""

import math
import os
from collections.abc import Callable
from dataclasses import (
    dataclass,
    replace,
)

import numpy as np
from dbt.adapters.events.logging import AdapterLogger

from svie_lift.coefficients import (
    CoefficientSet,
    certify,
    exponential_kernel,
    gamma_kernel,
    ornstein_uhlenbeck,
    without_diffusion,
)
from svie_lift.config import (
    Scenario,
    build_scenario,
    load_config,
)
from svie_lift.exceptions import SvieLiftError
from svie_lift.invariance import (
    compare_samples,
    energy_distance,
    estimate_law,
    initial_dependence_probe,
    test_convergence,
)
from svie_lift.levy_noise import (
    LevyModel,
    NoiseStream,
)
from svie_lift.spde_solver import (
    InitialCondition,
    SolverConfig,
    ou_mean,
    ou_variance,
    picard_oracle,
    run_ensemble,
    simulate_increments,
    simulate_path,
    svie_direct,
)
from svie_lift.weighted_space import (
    adjoint_delta,
    delta0_norm_h0,
    delta_norm_w,
    evaluate,
    exponential_weight,
    inner_w,
    norm_w,
    norm_w_infinity,
    psi_maximizer,
    sample_curve,
    shift,
)

LOGGER = AdapterLogger("svie_lift")

SELFTEST_SEED = 20240611
LAW_WORKERS = min(8, os.cpu_count() or 1)
# OU law checks use a grid on which the transient horizon 0.1 is a whole number of steps
OU_LAW_DT = 0.05
BOUNDARY_CASES = 20
BOUNDARY_STEPS = 512
NULL_REPETITIONS = 30
NULL_SAMPLE_PATHS = 200
NULL_HORIZON = 2.0
NULL_PASS_RATE = 0.93


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _bundled(name: str, **overrides) -> Scenario:
    return build_scenario(load_config(name, {"workers": LAW_WORKERS, **overrides}))


def check_semigroup_bound() -> CheckResult:
    rng = np.random.default_rng(SELFTEST_SEED)
    dx, J = 2.0**-4, 256
    worst = 0.0
    for rho in (0.5, 1.0, 2.0):
        w = exponential_weight(rho)
        for _ in range(20):
            h = sample_curve(rng, dx, J, 2)
            for t in (0.25, 1.0, 4.0):
                ratio = norm_w(shift(h, int(t / dx)), w) / (math.exp(t / 2.0) * norm_w(h, w))
                worst = max(worst, ratio)
    return CheckResult("semigroup_bound", worst <= 1.0 + 1e-9, f"max |S_t h| / (e^(t/2) |h|) = {worst:.6f}")


def check_contraction() -> CheckResult:
    rng = np.random.default_rng(SELFTEST_SEED + 1)
    dx, J = 2.0**-4, 256
    worst = 0.0
    for rho in (0.5, 1.0, 2.0):
        w = exponential_weight(rho)
        for _ in range(20):
            h = sample_curve(rng, dx, J, 1, tail_zero=True)
            for t in (0.25, 1.0, 4.0):
                bound = math.exp(-w.alpha_w * t / 2.0) * norm_w_infinity(h, w)
                worst = max(worst, norm_w_infinity(shift(h, int(t / dx)), w) / bound)
    return CheckResult("contraction", worst <= 1.0 + 1e-9, f"max ratio to e^(-alpha t/2) bound = {worst:.6f}")


def check_adjoint() -> CheckResult:
    """Identity <delta_x^* u, h>_w = <u, h(x)> to 1e-8, the adjoint norm to 1e-9 and the psi witness."""
    rng = np.random.default_rng(SELFTEST_SEED + 2)
    dx, J = 2.0**-14, 2 * 2**14
    w = exponential_weight(1.0)
    identity_error = 0.0
    for x in (0.25, 1.0, 1.5):
        u = rng.standard_normal(3)
        h = sample_curve(rng, dx, J, 3)
        rhs = float(np.dot(u, evaluate(h, x)))
        lhs = inner_w(adjoint_delta(u, x, w, dx, J), h, w)
        identity_error = max(identity_error, abs(lhs - rhs) / max(abs(rhs), 1.0))
    u = np.array([1.0, -2.0])
    norm_ratio = norm_w(adjoint_delta(u, 1.0, w, dx, J), w) ** 2 / float(np.dot(u, u))
    norm_error = abs(norm_ratio / delta_norm_w(w, 1.0) ** 2 - 1.0)
    psi = psi_maximizer([2.0], w, dx, 30 * 2**14)
    witness_error = abs(abs(float(psi.values[0, 0])) / norm_w_infinity(psi, w) - delta0_norm_h0(w))
    return CheckResult(
        "adjoint",
        identity_error < 1e-8 and norm_error < 1e-9 and witness_error < 1e-9,
        f"identity error {identity_error:.2e}, norm error {norm_error:.2e}, psi witness error {witness_error:.2e}",
    )


def random_kernel(rng: np.random.Generator, family: str, d: int, m: int) -> CoefficientSet:
    """A kernel of ``family`` with moderate random parameters."""
    if family == "ornstein_uhlenbeck":
        sigma = rng.uniform(-0.5, 0.5, (d, m))
        return ornstein_uhlenbeck(rng.uniform(0.5, 2.0), rng.uniform(-1.0, 1.0, d), sigma, d, m)
    scales = rng.uniform(-0.5, 0.5, 2)
    loading = rng.uniform(0.5, 1.5, m)
    if family == "gamma":
        return gamma_kernel(scales[0], scales[1], rng.uniform(0.5, 2.0), d=d, m=m, loading=loading)
    return exponential_kernel(scales[0], scales[1], rng.uniform(0.5, 2.0), d=d, m=m, loading=loading)


def check_boundary_identity() -> CheckResult:
    rng = np.random.default_rng(SELFTEST_SEED + 3)
    dt = 2.0**-7
    cfg = SolverConfig(T=BOUNDARY_STEPS * dt, dt=dt, x_max=(BOUNDARY_STEPS + 1) * dt)
    w = exponential_weight(1.0)
    worst = 0.0
    for case in range(BOUNDARY_CASES):
        d, m = (int(k) for k in rng.integers(1, 4, size=2))
        coeffs = random_kernel(rng, ("exponential", "gamma", "ornstein_uhlenbeck")[case % 3], d, m)
        initial = InitialCondition.constant(rng.uniform(-1.0, 1.0, d))
        stream = NoiseStream(int(rng.integers(0, 2**31)), case)
        lifted = simulate_path(cfg, coeffs, LevyModel.brownian(m), stream, w, initial)
        direct = svie_direct(cfg, coeffs, LevyModel.brownian(m), stream, initial)
        worst = max(worst, float(np.max(np.abs(lifted.X - direct.X))))
    return CheckResult(
        "boundary_identity",
        worst <= 1e-12,
        f"max lifted vs direct deviation {worst:.2e} over {BOUNDARY_CASES} scenarios of {BOUNDARY_STEPS} steps",
    )


def check_ou_moments() -> CheckResult:
    """OU terminal law at T=5 on dt=2^-8 within 3 standard errors of the continuous-time moments."""
    scenario = _bundled("ou")
    law = estimate_law(scenario, 5.0, scenario.paths)
    mean, variance = float(ou_mean(1.0, 0.3, 1.0, 5.0)), float(ou_variance(1.0, 0.5, 5.0))
    n = law.size
    mean_z = abs(float(law.mean[0]) - mean) / math.sqrt(variance / n)
    variance_z = abs(float(law.variance[0]) - variance) / (variance * math.sqrt(2.0 / (n - 1)))
    detail = f"{n} paths, z-scores mean {mean_z:.2f}, var {variance_z:.2f}"
    return CheckResult("ou_moments", mean_z < 3.0 and variance_z < 3.0, detail)


def check_deterministic_order() -> CheckResult:
    """Drift-only scheme against the Picard oracle on dt = 2^-6 .. 2^-9."""
    coeffs = without_diffusion(exponential_kernel(0.5, 0.0, 1.0))
    w = exponential_weight(1.0)
    fine_dt = 2.0**-12
    reference = picard_oracle(coeffs, 1.0, 1.0, fine_dt)
    dts = [2.0**-k for k in range(6, 10)]
    errors = []
    for dt in dts:
        cfg = SolverConfig(T=1.0, dt=dt, x_max=1.0 + dt)
        (output,) = simulate_increments(cfg, coeffs, w, InitialCondition.constant(1.0), np.zeros((cfg.n_steps, 1)))
        exact = reference.X[:: int(round(dt / fine_dt)), 0]
        errors.append(float(np.max(np.abs(output.X[:, 0] - exact))))
    order = float(np.polyfit(np.log2(dts), np.log2(errors), 1)[0])
    return CheckResult("deterministic_order", order >= 0.9, f"fitted order {order:.3f}")


def check_certificates() -> CheckResult:
    temporary = certify(exponential_kernel(0.25, 0.25, 1.0), exponential_weight(1.0)).criterion("temporary_impact")
    persistent = certify(ornstein_uhlenbeck(1.0, 0.3, 0.5), exponential_weight(2.0), beta=1.0).criterion(
        "persistent_impact"
    )
    passed = temporary.passed and persistent.passed and temporary.summary.endswith("9/16 < 1: PASS")
    return CheckResult("certificates", passed, f"{temporary.summary}; {persistent.summary}")


def check_energy_distance() -> CheckResult:
    sample = np.random.default_rng(SELFTEST_SEED).standard_normal((500, 2))
    value = energy_distance(sample, sample)
    return CheckResult("energy_distance", value == 0.0, f"energy distance of a sample to itself {value}")


def check_ou_two_horizon() -> CheckResult:
    scenario = _bundled("ou", grid={"dt": OU_LAW_DT})
    law = scenario.config.law
    verdict = test_convergence(scenario, law.t1, law.t2, law.paths, law.level, law.resamples)
    return CheckResult("ou_two_horizon", verdict.passed, f"{verdict.label}: p={verdict.p_value:.4f}")


def check_ou_initial_independence() -> CheckResult:
    scenario = _bundled("ou", grid={"dt": OU_LAW_DT})
    law = scenario.config.law
    verdict = initial_dependence_probe(scenario, law.x0_a, law.x0_b, law.t2, law.paths, law.level, law.resamples)
    return CheckResult("ou_initial_independence", verdict.passed, f"{verdict.label}: p={verdict.p_value:.4f}")


def check_ou_transient() -> CheckResult:
    """X(0.1) is still far from the stationary law, so the two-horizon test has to reject."""
    scenario = _bundled("ou", grid={"dt": OU_LAW_DT})
    law = scenario.config.law
    verdict = test_convergence(scenario, 0.1, law.t1, law.paths, law.level, law.resamples)
    return CheckResult("ou_transient", not verdict.passed, f"{verdict.label}: p={verdict.p_value:.4f}")


def check_exp_decay_two_horizon() -> CheckResult:
    scenario = _bundled("exp_decay")
    law = scenario.config.law
    verdict = test_convergence(scenario, law.t1, law.t2, law.paths, law.level, law.resamples)
    return CheckResult("exp_decay_two_horizon", verdict.passed, f"{verdict.label}: p={verdict.p_value:.4f}")


def check_null_calibration() -> CheckResult:
    """Same OU horizon on consecutive disjoint path ranges; each pair must pass at the configured level."""
    scenario = _bundled("ou", grid={"dt": OU_LAW_DT})
    law = scenario.config.law
    sample = estimate_law(scenario, NULL_HORIZON, 2 * NULL_SAMPLE_PATHS * NULL_REPETITIONS).sample
    pairs = sample.reshape(NULL_REPETITIONS, 2, NULL_SAMPLE_PATHS, -1)
    passed = sum(
        compare_samples(first, second, law.level, law.resamples, seed=k).passed
        for k, (first, second) in enumerate(pairs)
    )
    rate = passed / NULL_REPETITIONS
    return CheckResult(
        "null_calibration", rate >= NULL_PASS_RATE, f"{passed}/{NULL_REPETITIONS} equal-law comparisons passed"
    )


def check_worker_reproducibility() -> CheckResult:
    scenario = _bundled("ou", grid={"dt": 2.0**-4}, horizon=2.0, paths=64)
    solver = replace(scenario.solver, batch_size=8)
    runs = [
        run_ensemble(
            solver,
            scenario.coefficients,
            scenario.noise,
            scenario.weight,
            scenario.initial,
            scenario.seed,
            scenario.paths,
            workers=workers,
        )
        for workers in (1, 4, 8)
    ]
    first = runs[0]
    identical = all(
        np.array_equal(first.terminal, run.terminal)
        and np.array_equal(first.moments.mean, run.moments.mean)
        and np.array_equal(first.moments.variance, run.moments.variance)
        for run in runs[1:]
    )
    return CheckResult("worker_reproducibility", identical, "ensemble moments for 1, 4 and 8 workers")


CHECKS: tuple[Callable[[], CheckResult], ...] = (
    check_semigroup_bound,
    check_contraction,
    check_adjoint,
    check_boundary_identity,
    check_ou_moments,
    check_deterministic_order,
    check_certificates,
    check_energy_distance,
    check_ou_two_horizon,
    check_ou_initial_independence,
    check_ou_transient,
    check_exp_decay_two_horizon,
    check_null_calibration,
    check_worker_reproducibility,
)


def run_checks() -> list[CheckResult]:
    """Run every check; an error inside a check counts as a failure of that check."""
    results = []
    for check in CHECKS:
        name = check.__name__.removeprefix("check_")
        try:
            result = check()
        except SvieLiftError as exc:
            result = CheckResult(name, False, f"error: {exc.msg}")
        LOGGER.info(f"selftest {result.name}: {'pass' if result.passed else 'fail'} ({result.detail})")
        results.append(result)
    return results
