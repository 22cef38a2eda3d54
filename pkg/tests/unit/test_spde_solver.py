"""Unit tests for the lifted time stepping, the direct Volterra sum and the ensemble runner."""

import math
import unittest

import numpy as np

from svie_lift.coefficients import (
    exponential_kernel,
    ornstein_uhlenbeck,
    without_diffusion,
)
from svie_lift.exceptions import (
    ConfigValidationError,
    DivergenceError,
    InvalidModelError,
)
from svie_lift.levy_noise import (
    LevyModel,
    NoiseStream,
)
from svie_lift.selftest import random_kernel
from svie_lift.spde_solver import (
    InitialCondition,
    RunningMoments,
    SolverConfig,
    SolverState,
    euler_ou_moments,
    exponential_kernel_solution,
    ou_mean,
    ou_variance,
    picard_oracle,
    run_ensemble,
    simulate_increments,
    simulate_path,
    step,
    svie_direct,
    svie_direct_increments,
    with_horizon,
)
from svie_lift.weighted_space import (
    Curve,
    exponential_weight,
)


class TestSolverConfig(unittest.TestCase):
    """Test grid validation and the derived step counts."""

    def test_derived_grid(self):
        """Test n_steps, J and the recorded indices."""
        cfg = SolverConfig(T=1.0, dt=0.125, x_max=2.0, record_every=3)
        self.assertEqual(cfg.n_steps, 8)
        self.assertEqual(cfg.J, 16)
        np.testing.assert_array_equal(cfg.record_indices, [0, 3, 6, 8])

    def test_invalid_fields_are_named(self):
        """Test that each invalid grid setting names its config field."""
        cases = [
            ({"T": 1.0, "dt": 0.0, "x_max": 2.0}, "grid.dt"),
            ({"T": 1.0, "dt": -0.1, "x_max": 2.0}, "grid.dt"),
            ({"T": 0.0, "dt": 0.1, "x_max": 2.0}, "horizon"),
            ({"T": 1.0, "dt": 0.3, "x_max": 2.0}, "horizon"),
            ({"T": 1.0, "dt": 0.125, "x_max": 1.0}, "grid.x_max"),
            ({"T": 1.0, "dt": 0.125, "x_max": 2.0, "snapshot_times": (2.0,)}, "output.snapshots"),
        ]
        for kwargs, field in cases:
            with self.subTest(kwargs=kwargs):
                with self.assertRaises(ConfigValidationError) as context:
                    SolverConfig(**kwargs)
                self.assertEqual(context.exception.field, field)

    def test_with_horizon_extends_the_grid(self):
        """Test that a longer horizon keeps the margin beyond T."""
        cfg = with_horizon(SolverConfig(T=1.0, dt=0.125, x_max=3.0), 4.0)
        self.assertEqual(cfg.T, 4.0)
        self.assertEqual(cfg.x_max, 6.0)

    def test_state_requires_matching_steps(self):
        """Test that the time step must equal the grid step."""
        with self.assertRaises(ConfigValidationError):
            SolverState(0, 0.1, Curve.zeros(0.2, 4, 1))


class TestScheme(unittest.TestCase):
    """Test the lifted scheme against single steps and the direct Volterra sum."""

    def setUp(self):
        self.cfg = SolverConfig(T=1.0, dt=2.0**-5, x_max=2.0)
        self.coeffs = exponential_kernel(0.5, 0.3, 1.5)
        self.w = exponential_weight(1.0)
        self.increments = np.random.default_rng(4).standard_normal((self.cfg.n_steps, 1)) * math.sqrt(self.cfg.dt)

    def test_single_steps_match_the_batch(self):
        """Test that repeated step() calls reproduce the batched boundary trajectory."""
        (output,) = simulate_increments(self.cfg, self.coeffs, self.w, InitialCondition.constant(1.0), self.increments)
        state = SolverState.initial(Curve.constant(1.0, self.cfg.dt, self.cfg.J))
        boundary = [state.X]
        for increment in self.increments:
            state = step(state, self.coeffs, increment, self.w)
            boundary.append(state.X)
        self.assertEqual(state.n, self.cfg.n_steps)
        np.testing.assert_allclose(np.array(boundary), output.X, rtol=1e-12, atol=1e-14)

    def test_boundary_matches_direct_sum(self):
        """Test that Y(t)(0) equals the left-point Volterra sum on the same noise."""
        model = LevyModel.brownian(1)
        initial = InitialCondition.constant(0.5)
        for path in range(3):
            stream = NoiseStream(21, path)
            lifted = simulate_path(self.cfg, self.coeffs, model, stream, self.w, initial)
            direct = svie_direct(self.cfg, self.coeffs, model, stream, initial)
            self.assertLessEqual(float(np.max(np.abs(lifted.X - direct.X))), 1e-12)

    def test_boundary_matches_direct_sum_on_random_scenarios(self):
        """Test the boundary identity over 20 random kernels, dimensions and seeds at 512 steps."""
        rng = np.random.default_rng(512)
        dt = 2.0**-7
        cfg = SolverConfig(T=512 * dt, dt=dt, x_max=513 * dt)
        families = ("exponential", "gamma", "ornstein_uhlenbeck")
        for case in range(20):
            d, m = (int(k) for k in rng.integers(1, 4, size=2))
            family = families[case % 3]
            coeffs = random_kernel(rng, family, d, m)
            model = LevyModel.brownian(m)
            initial = InitialCondition.constant(rng.uniform(-1.0, 1.0, d))
            stream = NoiseStream(int(rng.integers(0, 2**31)), case)
            with self.subTest(case=case, family=family, d=d, m=m):
                lifted = simulate_path(cfg, coeffs, model, stream, self.w, initial)
                direct = svie_direct(cfg, coeffs, model, stream, initial)
                self.assertEqual(lifted.X.shape, (513, d))
                self.assertLessEqual(float(np.max(np.abs(lifted.X - direct.X))), 1e-12)

    def test_adaptedness(self):
        """Test that changing future increments leaves the past trajectory untouched."""
        initial = InitialCondition.constant(1.0)
        (original,) = simulate_increments(self.cfg, self.coeffs, self.w, initial, self.increments)
        perturbed = self.increments.copy()
        k = 10
        perturbed[k:] += 1.0
        (changed,) = simulate_increments(self.cfg, self.coeffs, self.w, initial, perturbed)
        np.testing.assert_array_equal(original.X[: k + 1], changed.X[: k + 1])
        self.assertFalse(np.array_equal(original.X[k + 1 :], changed.X[k + 1 :]))

    def test_direct_sum_is_adapted(self):
        """Test the same adaptedness for the direct Volterra sum."""
        initial = InitialCondition.constant(1.0)
        original = svie_direct_increments(self.cfg, self.coeffs, initial, self.increments)
        perturbed = self.increments.copy()
        perturbed[5:] = 0.0
        changed = svie_direct_increments(self.cfg, self.coeffs, initial, perturbed)
        np.testing.assert_array_equal(original.X[:6], changed.X[:6])

    def test_increment_shape_is_checked(self):
        """Test that increments with the wrong number of steps are rejected."""
        with self.assertRaises(InvalidModelError):
            simulate_increments(self.cfg, self.coeffs, self.w, InitialCondition.constant(1.0), np.zeros((3, 1)))

    def test_snapshots_and_norms(self):
        """Test that requested snapshots and the norm trace are recorded."""
        cfg = SolverConfig(T=1.0, dt=2.0**-5, x_max=2.0, record_norms=True, snapshot_times=(0.0, 0.5, 1.0))
        (output,) = simulate_increments(cfg, self.coeffs, self.w, InitialCondition.constant(1.0), self.increments)
        self.assertEqual(sorted(output.snapshots), [0.0, 0.5, 1.0])
        self.assertEqual(output.norms.shape, (cfg.n_steps + 1,))
        np.testing.assert_allclose(output.snapshots[1.0].values[0], output.terminal)
        self.assertAlmostEqual(output.norms[0], 1.0)


class TestDivergence(unittest.TestCase):
    """Test that exploding paths are flagged instead of propagating garbage."""

    def setUp(self):
        self.cfg = SolverConfig(T=1.0, dt=2.0**-5, x_max=2.0, divergence_cap=1e3)
        self.coeffs = exponential_kernel(50.0, 0.0, 1.0)
        self.w = exponential_weight(1.0)

    def test_batch_flags_the_path(self):
        """Test that the diverged step is recorded on the path output."""
        (output,) = simulate_increments(
            self.cfg, self.coeffs, self.w, InitialCondition.constant(1.0), np.zeros((self.cfg.n_steps, 1))
        )
        self.assertTrue(output.diverged)
        self.assertGreater(output.diverged_step, 0)
        self.assertTrue(np.all(np.isfinite(output.X)))

    def test_simulate_path_raises(self):
        """Test that a single diverging path raises DivergenceError with its index."""
        with self.assertRaises(DivergenceError) as context:
            simulate_path(
                self.cfg, self.coeffs, LevyModel.brownian(1), NoiseStream(0, 3), self.w, InitialCondition.constant(1.0)
            )
        self.assertEqual(context.exception.path, 3)

    def test_ensemble_raises_when_too_many_paths_diverge(self):
        """Test that an ensemble with all paths diverging fails."""
        with self.assertRaises(DivergenceError):
            run_ensemble(
                self.cfg, self.coeffs, LevyModel.brownian(1), self.w, InitialCondition.constant(1.0), 0, 10
            )

    def test_step_raises(self):
        """Test that step() raises once the norm exceeds the cap."""
        state = SolverState.initial(Curve.constant(1.0, self.cfg.dt, self.cfg.J))
        with self.assertRaises(DivergenceError):
            for _ in range(self.cfg.n_steps):
                state = step(state, self.coeffs, [0.0], self.w, divergence_cap=1e3)


class TestEnsemble(unittest.TestCase):
    """Test ensemble aggregation and determinism."""

    def test_running_moments_merge(self):
        """Test that merging partial moments equals the moments of the pooled sample."""
        samples = np.random.default_rng(2).standard_normal((37, 3, 2))
        merged = RunningMoments.from_samples(samples[:10]).merge(RunningMoments.from_samples(samples[10:]))
        pooled = RunningMoments.from_samples(samples)
        self.assertEqual(merged.count, 37)
        np.testing.assert_allclose(merged.mean, pooled.mean)
        np.testing.assert_allclose(merged.variance, pooled.variance)
        self.assertIs(merged.merge(RunningMoments.empty((3, 2))), merged)

    def test_worker_count_does_not_change_results(self):
        """Test byte-identical terminal values for one and four workers."""
        cfg = SolverConfig(T=0.5, dt=2.0**-4, x_max=1.0, batch_size=8)
        args = (cfg, exponential_kernel(0.5, 0.3, 1.5), LevyModel.brownian(1), exponential_weight(1.0))
        single = run_ensemble(*args, InitialCondition.constant(1.0), 5, 40, workers=1)
        threaded = run_ensemble(*args, InitialCondition.constant(1.0), 5, 40, workers=4)
        np.testing.assert_array_equal(single.terminal, threaded.terminal)
        np.testing.assert_array_equal(single.moments.mean, threaded.moments.mean)
        np.testing.assert_array_equal(single.terminal_paths, np.arange(40))

    def test_ou_moments(self):
        """Test that the OU ensemble matches the exact moments of the Euler recursion."""
        lam, theta, sigma, x0 = 1.0, 0.3, 0.5, 1.0
        cfg = SolverConfig(T=1.0, dt=2.0**-5, x_max=1.0 + 2.0**-5)
        ensemble = run_ensemble(
            cfg,
            ornstein_uhlenbeck(lam, theta, sigma),
            LevyModel.brownian(1),
            exponential_weight(2.0),
            InitialCondition.constant(x0),
            17,
            2000,
        )
        mean, variance = euler_ou_moments(lam, theta, sigma, x0, cfg.dt, cfg.n_steps)
        sample = ensemble.terminal[:, 0]
        self.assertLess(abs(sample.mean() - mean) / math.sqrt(variance / sample.shape[0]), 4.0)
        self.assertAlmostEqual(float(ensemble.moments.mean[-1, 0]), float(sample.mean()))

    def test_euler_moments_approach_continuous_ones(self):
        """Test that the Euler OU moments converge to the continuous-time moments."""
        mean, variance = euler_ou_moments(1.0, 0.3, 0.5, 1.0, 2.0**-12, 2**12)
        self.assertAlmostEqual(mean, float(ou_mean(1.0, 0.3, 1.0, 1.0)), places=3)
        self.assertAlmostEqual(variance, float(ou_variance(1.0, 0.5, 1.0)), places=3)

    def test_sampled_initial_values(self):
        """Test that sampled initial values are reproducible per path and differ between paths."""
        initial = InitialCondition.sampled(0.5, 0.1)
        first = initial.values_for(3, 0, 0.5, 4, 1)
        self.assertEqual(first.shape, (5, 1))
        np.testing.assert_array_equal(first, initial.values_for(3, 0, 0.5, 4, 1))
        self.assertNotEqual(first[0, 0], initial.values_for(3, 1, 0.5, 4, 1)[0, 0])

    def test_forcing_curve_must_cover_the_grid(self):
        """Test that a forcing curve shorter than the solver grid is rejected."""
        initial = InitialCondition.forcing(Curve.zeros(0.5, 2, 1))
        with self.assertRaises(InvalidModelError):
            initial.values_for(0, 0, 0.5, 4, 1)

    def test_rejects_empty_ensembles(self):
        """Test that zero paths are rejected as a config error."""
        cfg = SolverConfig(T=0.5, dt=0.25, x_max=1.0)
        with self.assertRaises(ConfigValidationError):
            run_ensemble(
                cfg,
                ornstein_uhlenbeck(1.0, 0.0, 1.0),
                LevyModel.brownian(1),
                exponential_weight(1.0),
                InitialCondition.constant(0.0),
                0,
                0,
            )


class TestDeterministicOracle(unittest.TestCase):
    """Test the drift-only Volterra equation against closed forms."""

    def test_picard_matches_closed_form(self):
        """Test the fixed-point solution against the exponential-kernel solution."""
        coeffs = without_diffusion(exponential_kernel(0.5, 0.0, 1.0))
        oracle = picard_oracle(coeffs, 1.0, 1.0, 2.0**-8)
        exact = exponential_kernel_solution(1.0, oracle.times, 0.5, 1.0)
        self.assertLess(float(np.max(np.abs(oracle.X[:, 0] - exact))), 1e-4)

    def test_picard_needs_zero_diffusion(self):
        """Test that a non-vanishing sigma is rejected."""
        with self.assertRaises(InvalidModelError):
            picard_oracle(exponential_kernel(0.5, 0.3, 1.0), 1.0, 1.0, 2.0**-6)

    def test_closed_form_resonant_case(self):
        """Test X(t) = x0 (1 + c t) when the decay equals the scale."""
        np.testing.assert_allclose(exponential_kernel_solution(2.0, [0.0, 1.0], 0.5, 0.5), [2.0, 3.0])

    def test_first_order_convergence(self):
        """Test that the lifted scheme converges at order one on the drift-only equation."""
        coeffs = without_diffusion(exponential_kernel(0.5, 0.0, 1.0))
        w = exponential_weight(1.0)
        dts = [2.0**-k for k in range(6, 10)]
        errors = []
        for dt in dts:
            cfg = SolverConfig(T=1.0, dt=dt, x_max=1.0 + dt)
            (output,) = simulate_increments(cfg, coeffs, w, InitialCondition.constant(1.0), np.zeros((cfg.n_steps, 1)))
            errors.append(float(np.max(np.abs(output.X[:, 0] - exponential_kernel_solution(1.0, cfg.times, 0.5, 1.0)))))
        order = float(np.polyfit(np.log2(dts), np.log2(errors), 1)[0])
        self.assertGreaterEqual(order, 0.9)
