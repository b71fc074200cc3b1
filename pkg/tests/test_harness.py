"""Tests for ensembles, the epsilon sweep and deterministic convergence."""

import math

import numpy as np
import pytest

from rosselab.correctors import FourierMode
from rosselab.harness import (
    FUNCTIONAL_NAMES,
    EnsembleSummary,
    deterministic_convergence,
    ensemble_stats,
    epsilon_sweep,
    functional_triple,
    hs_norm,
    kinetic_ensemble,
    limit_ensemble,
    rosseland_reference,
    sample_rng,
)
from rosselab.kinetic import KineticConfig, KineticTrajectory, run_kinetic
from rosselab.limit import SpdeConfig, run_limit
from rosselab.model import TorusGrid, build_velocity_space, l2_norm_sq, make_opacity
from rosselab.noise import cosine_profile, noise_statistics, telegraph_noise

MODE = FourierMode(1, "cos")


def small_problem(n_x=16):
    grid = TorusGrid(n_x)
    x = grid.coords()[0]
    rho0 = 1.0 + 0.4 * np.cos(2.0 * np.pi * x)
    quad = build_velocity_space("two-speed")
    opacity = make_opacity("rational", s0=1.0, s1=1.0)
    return grid, rho0, quad, opacity


class TestSummaries:
    def test_ensemble_summary_statistics(self):
        summary = EnsembleSummary(np.array([1.0, 2.0, 3.0, 4.0]))
        assert summary.n_samples == 4
        assert abs(summary.mean - 2.5) < 1e-15
        assert abs(summary.variance - 5.0 / 3.0) < 1e-15
        assert abs(summary.sem - math.sqrt(5.0 / 12.0)) < 1e-15

    def test_functional_triple_point_estimates(self):
        triple = functional_triple(np.array([1.0, 2.0, 3.0, 4.0]),
                                   np.array([2.0, 2.0, 4.0, 4.0]))
        assert abs(triple.values[0] - 2.5) < 1e-15
        assert abs(triple.values[1] - 5.0 / 3.0) < 1e-15
        assert abs(triple.values[2] - 3.0) < 1e-15
        assert triple.n_samples == 4

    def test_variance_sem_matches_gaussian_formula(self):
        # For normal samples Var(s^2) = 2 sigma^4 / (n - 1); the moment-based
        # standard error must agree at large n.
        rng = np.random.default_rng(5)
        n, sigma = 4000, 2.0
        draws = sigma * rng.standard_normal(n)
        triple = functional_triple(draws, np.ones(n))
        expected = math.sqrt(2.0 / (n - 1)) * sigma**2
        assert abs(triple.sems[1] - expected) / expected < 0.15

    def test_too_few_samples_raise(self):
        with pytest.raises(ValueError):
            functional_triple(np.array([1.0]), np.array([1.0]))


class TestSampleRng:
    def test_same_seed_same_stream(self):
        a = sample_rng(42, 3).standard_normal(5)
        b = sample_rng(42, 3).standard_normal(5)
        assert np.array_equal(a, b)

    def test_indices_decorrelate(self):
        a = sample_rng(42, 0).standard_normal(5)
        b = sample_rng(42, 1).standard_normal(5)
        assert not np.array_equal(a, b)

    def test_tuple_seeds_extend_entropy(self):
        a = sample_rng((42, 7), 0).standard_normal(3)
        b = sample_rng(42, 0).standard_normal(3)
        assert not np.array_equal(a, b)


class TestEnsembleStats:
    def gbm_fixture(self):
        # Diffusion switched off, so each grid point evolves as a geometric
        # SDE and the discrete second moment is exactly
        # ((1 + h dt)^2 + k(x,x) dt)^n per point.
        grid = TorusGrid(8)
        x = grid.coords()[0]
        rho0 = 1.0 + 0.4 * np.cos(2.0 * np.pi * x)
        opacity = make_opacity("constant", value=1.0)
        stats = noise_statistics(telegraph_noise(grid, cosine_profile(grid, 1.0, 1), 1.0))
        config = SpdeConfig(grid, opacity, 1.0, 0.2, dt=0.01, noise=stats,
                            include_diffusion=False)
        return grid, rho0, config, stats

    def test_noise_off_has_zero_variance(self):
        grid, rho0, quad, opacity = small_problem()
        config = KineticConfig(grid, quad, opacity, epsilon=0.4, t_final=0.04)
        stats = ensemble_stats("kinetic", config, rho0, 3, base_seed=1,
                               modes=(MODE, FourierMode(2, "sin")))
        assert stats.names == ("mode<cos1>", "mode<sin2>", "normsq")
        assert stats.count == 3
        assert np.all(stats.variances == 0.0)
        assert np.all(stats.sems == 0.0)
        assert stats.means[-1] > 0.0

    def test_unknown_runner_rejected(self):
        grid, rho0, quad, opacity = small_problem()
        config = KineticConfig(grid, quad, opacity, epsilon=0.4, t_final=0.04)
        with pytest.raises(ValueError):
            ensemble_stats("euler", config, rho0, 2, base_seed=1)

    def test_errors_carry_sample_index(self):
        calls = {"n": 0}

        def flaky(config, rho0, rng=None):
            if calls["n"] == 2:
                raise FloatingPointError("density lost positivity")
            calls["n"] += 1
            return run_kinetic(config, rho0, rng=rng)

        grid, rho0, quad, opacity = small_problem()
        config = KineticConfig(grid, quad, opacity, epsilon=0.4, t_final=0.04)
        with pytest.raises(FloatingPointError, match="sample 2"):
            ensemble_stats(flaky, config, rho0, 4, base_seed=1)

    def test_second_moment_matches_geometric_sde_oracle(self):
        grid, rho0, config, stats = self.gbm_fixture()
        h = stats.drift_effective
        factor = (1.0 + config.dt * h) ** 2 + 2.0 * config.dt * h
        expected = grid.cell_volume * float(np.sum(rho0**2 * factor**config.n_steps))
        est = ensemble_stats("limit", config, rho0, 400, base_seed=77, modes=(MODE,))
        assert est.sems[-1] > 0.0
        assert abs(est.means[-1] - expected) <= 3.0 * est.sems[-1]

    def test_doubling_samples_shrinks_squared_stderr(self):
        grid, rho0, config, _ = self.gbm_fixture()
        small = ensemble_stats("limit", config, rho0, 150, base_seed=9)
        big = ensemble_stats("limit", config, rho0, 600, base_seed=9)
        ratio = small.sems[-1] ** 2 / big.sems[-1] ** 2
        assert 2.0 < ratio < 8.0


class TestEnsembles:
    def test_kinetic_ensemble_reproducible(self):
        grid, rho0, quad, opacity = small_problem()
        model = telegraph_noise(grid, cosine_profile(grid, 1.0, 1), 1.0)
        config = KineticConfig(grid, quad, opacity, epsilon=0.35, t_final=0.05,
                               noise=model)
        first = kinetic_ensemble(config, rho0, MODE, 4, seed=11)
        second = kinetic_ensemble(config, rho0, MODE, 4, seed=11)
        assert np.array_equal(first.mode_values, second.mode_values)
        assert np.array_equal(first.norm_sq, second.norm_sq)
        assert np.all(first.sup_energy >= l2_norm_sq(grid, rho0) - 1e-12)
        assert np.all(first.defect_integral >= 0.0)
        assert np.all(first.sobolev > 0.0)

    def test_kinetic_ensemble_seed_changes_values(self):
        grid, rho0, quad, opacity = small_problem()
        model = telegraph_noise(grid, cosine_profile(grid, 1.0, 1), 1.0)
        config = KineticConfig(grid, quad, opacity, epsilon=0.35, t_final=0.05,
                               noise=model)
        first = kinetic_ensemble(config, rho0, MODE, 3, seed=11)
        second = kinetic_ensemble(config, rho0, MODE, 3, seed=12)
        assert not np.array_equal(first.mode_values, second.mode_values)

    def test_limit_ensemble_reproducible(self):
        grid, rho0, quad, opacity = small_problem()
        stats = noise_statistics(telegraph_noise(grid, cosine_profile(grid, 1.0, 1), 1.0))
        config = SpdeConfig(grid, opacity, quad.diffusion_coefficient(), 0.05,
                            noise=stats)
        first = limit_ensemble(config, rho0, MODE, 4, seed=3)
        second = limit_ensemble(config, rho0, MODE, 4, seed=3)
        assert np.array_equal(first.mode_values, second.mode_values)
        assert np.array_equal(first.norm_sq, second.norm_sq)


class TestRosselandReference:
    def test_constant_opacity_heat_kernel(self):
        grid, _, _, _ = small_problem(32)
        x = grid.coords()[0]
        alpha, t_final = 0.4, 0.05
        rho0 = 1.0 + alpha * np.cos(2.0 * np.pi * x)
        opacity = make_opacity("constant", value=1.0)
        times, densities = rosseland_reference(grid, opacity, 1.0, rho0, t_final, 6)
        for t, rho in zip(times, densities):
            exact = 1.0 + alpha * math.exp(-4.0 * math.pi**2 * t) * np.cos(2.0 * np.pi * x)
            assert np.max(np.abs(rho - exact)) < 1e-9

    def test_snapshot_layout(self):
        grid, rho0, _, opacity = small_problem()
        times, densities = rosseland_reference(grid, opacity, 1.0, rho0, 0.1, 5)
        assert np.allclose(times, [0.0, 0.025, 0.05, 0.075, 0.1])
        assert densities.shape == (5, grid.n_x)
        with pytest.raises(ValueError):
            rosseland_reference(grid, opacity, 1.0, rho0, 0.1, 1)

    def test_mass_is_conserved(self):
        grid, rho0, _, opacity = small_problem(32)
        _, densities = rosseland_reference(grid, opacity, 0.5, rho0, 0.2, 4)
        masses = densities.mean(axis=1)
        assert np.max(np.abs(masses - masses[0])) < 1e-12

    def test_self_consistent_under_dt_halving(self):
        grid, rho0, _, opacity = small_problem(32)
        base_dt = 2.5 / (math.pi**2 * grid.n_x**2 / opacity.sigma_star)
        _, coarse = rosseland_reference(grid, opacity, 1.0, rho0, 0.1, 3)
        _, fine = rosseland_reference(grid, opacity, 1.0, rho0, 0.1, 3, dt=base_dt / 2)
        diff = math.sqrt(l2_norm_sq(grid, coarse[-1] - fine[-1]))
        assert diff < 1e-6


class TestDeterministicConvergence:
    def test_errors_decrease_with_good_slope(self):
        grid, rho0, quad, opacity = small_problem(32)
        report = deterministic_convergence(grid, quad, opacity, rho0, 0.3,
                                           [0.4, 0.2, 0.1], n_snapshots=7)
        assert report.errors_strictly_decreasing()
        assert report.slope >= 0.8
        assert np.all(report.epsilons[:-1] > report.epsilons[1:])

    def test_requires_two_epsilons(self):
        grid, rho0, quad, opacity = small_problem()
        with pytest.raises(ValueError):
            deterministic_convergence(grid, quad, opacity, rho0, 0.1, [0.2])


class TestEpsilonSweep:
    def make_sweep(self, seed=13):
        grid, rho0, quad, opacity = small_problem()
        model = telegraph_noise(grid, cosine_profile(grid, 1.0, 1), 1.0)
        return epsilon_sweep(grid, quad, opacity, model, rho0, 0.05,
                             [0.5, 0.35], n_kinetic=6, n_limit=8, base_seed=seed)

    def test_report_structure(self):
        report = self.make_sweep()
        assert len(report.rows) == 2
        assert report.rows[0].epsilon > report.rows[1].epsilon
        for row in report.rows:
            assert row.gaps.shape == (len(FUNCTIONAL_NAMES),)
            assert np.all(row.gap_sems > 0.0)
            assert row.sup_energy_mean > 0.0
            assert row.defect_integral_mean > 0.0
            assert row.sobolev_mean > 0.0
        assert np.isfinite(report.paper_excess_sigmas()).all()
        assert report.diagnostic_band("sup_energy_mean") >= 1.0

    def test_report_reproducible(self):
        first = self.make_sweep()
        second = self.make_sweep()
        for a, b in zip(first.rows, second.rows):
            assert np.array_equal(a.gaps, b.gaps)
            assert np.array_equal(a.estimates.values, b.estimates.values)

    def test_sobolev_order_must_stay_below_half_smoothing(self):
        grid, rho0, quad, opacity = small_problem()
        model = telegraph_noise(grid, cosine_profile(grid, 1.0, 1), 1.0)
        with pytest.raises(ValueError):
            epsilon_sweep(grid, quad, opacity, model, rho0, 0.05, [0.5, 0.35],
                          n_kinetic=2, n_limit=2, base_seed=1, sobolev_order=0.6)

    def test_dt_scale_validated(self):
        grid, rho0, quad, opacity = small_problem()
        model = telegraph_noise(grid, cosine_profile(grid, 1.0, 1), 1.0)
        with pytest.raises(ValueError):
            epsilon_sweep(grid, quad, opacity, model, rho0, 0.05, [0.5, 0.35],
                          n_kinetic=2, n_limit=2, base_seed=1, dt_scale=0.9)

    def test_noise_off_sweep_records_deterministic_errors(self):
        # Constant opacity with the two-speed model (K = 1) is the heat
        # fixture; gaps and errors must shrink deterministically.
        grid, rho0, quad, _ = small_problem()
        opacity = make_opacity("constant", value=1.0)
        report = epsilon_sweep(grid, quad, opacity, None, rho0, 0.15,
                               [0.2, 0.1, 0.05], n_kinetic=2, n_limit=2,
                               base_seed=0)
        errors = report.det_errors()
        assert np.all(np.diff(errors) < 0.0)
        assert errors[-1] <= 0.02 * math.sqrt(l2_norm_sq(grid, rho0))
        for row in report.rows:
            assert row.estimates.values[1] == 0.0
            assert np.all(row.gap_sems == 0.0)
        assert report.gaps_nonincreasing()

    def test_det_errors_only_exist_for_noise_off_sweeps(self):
        report = self.make_sweep()
        with pytest.raises(ValueError):
            report.det_errors()


class TestHsNorm:
    def test_constant_trajectory_integrates_to_t_c_squared(self):
        grid, _, quad, opacity = small_problem()
        config = KineticConfig(grid, quad, opacity, epsilon=0.3, t_final=0.2,
                               dt=0.02, snapshot_stride=2)
        trajectory = run_kinetic(config, np.full(grid.shape, 0.7))
        assert abs(hs_norm(trajectory, 0.45) - 0.2 * 0.49) < 1e-12

    def test_static_cosine_matches_multiplier_arithmetic(self):
        grid, _, quad, opacity = small_problem(32)
        config = KineticConfig(grid, quad, opacity, epsilon=0.3, t_final=0.75,
                               dt=0.025)
        x = grid.coords()[0]
        rho = np.cos(2.0 * np.pi * x)
        zeros = np.zeros(config.n_steps + 1)
        trajectory = KineticTrajectory(
            config, np.array([0.0, 0.375, 0.75]), np.stack([rho, rho, rho]),
            zeros, zeros, zeros, zeros, None,
        )
        s = 0.45
        expected = 0.75 * 0.5 * (1.0 + 4.0 * math.pi**2) ** s
        assert abs(hs_norm(trajectory, s) - expected) < 1e-12

    def test_order_gate_for_kinetic_trajectories(self):
        # the two-speed smoothing exponent 1 caps the order below 1/2
        grid, rho0, quad, opacity = small_problem()
        config = KineticConfig(grid, quad, opacity, epsilon=0.4, t_final=0.04)
        trajectory = run_kinetic(config, rho0)
        with pytest.raises(ValueError):
            hs_norm(trajectory, 0.5)
        with pytest.raises(ValueError):
            hs_norm(trajectory, 0.0)
        assert hs_norm(trajectory, 0.49) > 0.0

    def test_limit_trajectories_have_no_velocity_gate(self):
        grid, rho0, _, opacity = small_problem()
        config = SpdeConfig(grid, opacity, 1.0, 0.02)
        trajectory = run_limit(config, rho0)
        assert hs_norm(trajectory, 0.8) > 0.0
