"""Tests for reconstruction module."""

import logging
import math

import numpy as np
import pytest

import hilbert
import reconstruction
import theory
from dynamics import PulseParams, RotationSpec, evolve_displacement, rotate
from errors import (
    AccuracyError,
    ContractViolation,
    ConvergenceError,
    ExtractionError,
    InfeasibleBoundError,
)
from hilbert import JointState, SpinState
from measurement import ShotPlan, project_spin
from reconstruction import Grid, SignalSet

RABI = 2 * math.pi * 19.0e3


def postselected(g, theta, n_max=48):
    joint = JointState.product(SpinState.down(), hilbert.ground_state(n_max))
    evolved = evolve_displacement(joint, PulseParams.for_coupling(g, 0.08, RABI))
    return project_spin(rotate(evolved, RotationSpec("y", 2 * theta)), "up")[1]


def signal_pair(state, plan=None, key=()):
    ks = reconstruction.default_reconstruction_ks()
    cos_set = reconstruction.generate_signals(state, ks, "sigma_z", "z", plan, key=(*key, 0))
    sin_set = reconstruction.generate_signals(state, ks, "sigma_y", "z", plan, key=(*key, 1))
    return cos_set, sin_set


def true_probabilities(state, grid):
    density = hilbert.position_distribution(state, grid.points)
    return reconstruction.discretize_density(density, grid)


@pytest.fixture
def grid():
    return Grid.uniform()


class TestTypes:
    def test_signal_set_lengths(self):
        with pytest.raises(ContractViolation):
            SignalSet([0.0, 0.1], [1.0], [0.1, 0.1], "cos", "z", 10)

    def test_signal_set_sigmas_positive(self):
        with pytest.raises(ContractViolation):
            SignalSet([0.0], [1.0], [0.0], "cos", "z", 10)

    def test_signal_set_values_bounded(self):
        with pytest.raises(ContractViolation):
            SignalSet([0.0], [1.5], [0.1], "cos", "z", 10)

    def test_signal_set_kind(self):
        with pytest.raises(ContractViolation):
            SignalSet([0.0], [1.0], [0.1], "tan", "z", 10)

    def test_grid_must_be_uniform(self):
        with pytest.raises(ContractViolation):
            Grid([0.0, 1.0, 3.0])

    def test_grid_span_check(self, grid):
        grid.check_span(2.0)
        with pytest.raises(AccuracyError):
            grid.check_span(4.0)


class TestSignals:
    @pytest.mark.parametrize("k", [-1.0, 0.3, 2.0])
    def test_coherent_state_characteristic_function(self, k):
        a = 0.4
        state = hilbert.coherent_state(a, 40)
        envelope = math.exp(-k**2 / 2)
        cos_value = reconstruction.observable_expectation(state, k, "sigma_z", "z")
        sin_value = reconstruction.observable_expectation(state, k, "sigma_y", "z")
        assert cos_value == pytest.approx(math.cos(2 * a * k) * envelope, abs=1e-8)
        assert sin_value == pytest.approx(math.sin(2 * a * k) * envelope, abs=1e-8)

    def test_momentum_quadrature(self):
        b = 0.3
        k = 0.8
        state = hilbert.coherent_state(1j * b, 40)
        value = reconstruction.observable_expectation(state, k, "sigma_y", "p")
        assert value == pytest.approx(math.sin(2 * b * k) * math.exp(-k**2 / 2), abs=1e-8)

    def test_unknown_preparation(self):
        with pytest.raises(ContractViolation):
            reconstruction.observable_expectation(hilbert.ground_state(8), 0.1, "sigma_x", "z")

    def test_exact_signals(self):
        signals = reconstruction.exact_signals(hilbert.ground_state(16), [0.0, 0.5], "sigma_z", "z")
        assert signals.exact
        assert signals.kind == "cos"
        assert np.all(signals.sigmas == reconstruction.EXACT_SIGMA)
        assert signals.values[0] == pytest.approx(1.0)

    def test_sampling_is_keyed(self):
        exact = reconstruction.exact_signals(
            hilbert.coherent_state(0.3, 24), np.linspace(0, 1, 5), "sigma_y", "z"
        )
        plan = ShotPlan(shots=200, seed=11)
        a = reconstruction.sample_signals(exact, plan, key=(1,))
        b = reconstruction.sample_signals(exact, plan, key=(1,))
        c = reconstruction.sample_signals(exact, plan, key=(2,))
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)
        assert a.shots == 200
        assert np.all(a.sigmas > 0)


    def test_generated_signals_follow_keyed_binomial_streams(self):
        # vacuum, 5 k-points, 400 shots: each point is one Binomial(400, p)
        # draw from the stream SeedSequence(seed, spawn_key=(*key, index))
        ks = np.linspace(0.0, 1.0, 5)
        state = hilbert.ground_state(24)
        plan = ShotPlan(shots=400, seed=2024)
        signals = reconstruction.generate_signals(state, ks, "sigma_z", "z", plan, key=(3,))
        exact = reconstruction.exact_signals(state, ks, "sigma_z", "z")
        expected = []
        for index, value in enumerate(exact.values):
            rng = np.random.default_rng(np.random.SeedSequence(2024, spawn_key=(3, index)))
            expected.append(2.0 * rng.binomial(400, (1.0 + value) / 2.0) / 400 - 1.0)
        assert np.array_equal(signals.values, np.array(expected))
        assert np.allclose(exact.values, np.exp(-ks**2 / 2), atol=1e-8)
        assert np.all(np.abs(signals.values - exact.values) <= 5 * signals.sigmas + 1e-12)
        again = reconstruction.generate_signals(state, ks, "sigma_z", "z", plan, key=(3,))
        assert np.array_equal(signals.values, again.values)
        assert np.array_equal(signals.sigmas, again.sigmas)


class TestSolverPieces:
    def test_project_simplex(self):
        p = reconstruction.project_simplex(np.array([0.5, -0.2, 1.3, 0.1]))
        assert np.all(p >= 0)
        assert p.sum() == pytest.approx(1.0)

    def test_project_simplex_keeps_simplex_points(self):
        q = np.array([0.2, 0.3, 0.5])
        assert np.allclose(reconstruction.project_simplex(q), q)

    def test_discretize_and_l1(self, grid):
        p = true_probabilities(hilbert.ground_state(16), grid)
        assert p.sum() == pytest.approx(1.0)
        assert reconstruction.l1_distance(p, p) == 0.0


class TestReconstruction:
    def test_vacuum_from_exact_signals(self, grid):
        state = hilbert.ground_state(32)
        cos_set, sin_set = signal_pair(state)
        result = reconstruction.reconstruct_distribution(
            cos_set, sin_set, grid, hilbert.expect_p2(state), restarts=3
        )
        p = result.probabilities
        assert np.all(p >= 0.0)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        assert result.fisher_information <= result.kinetic_bound * (1 + 1e-9)
        assert reconstruction.l1_distance(p, true_probabilities(state, grid)) < 0.02

    def test_postselected_state_from_exact_signals(self, grid):
        state = postselected(0.8, 0.3)
        cos_set, sin_set = signal_pair(state)
        result = reconstruction.reconstruct_distribution(
            cos_set, sin_set, grid, hilbert.expect_p2(state), restarts=3
        )
        assert reconstruction.l1_distance(
            result.probabilities, true_probabilities(state, grid)
        ) < 0.05

    def test_vacuum_from_noisy_signals(self, grid):
        state = hilbert.ground_state(32)
        cos_set, sin_set = signal_pair(state, ShotPlan(shots=1000, seed=7))
        result = reconstruction.reconstruct_distribution(
            cos_set, sin_set, grid, hilbert.expect_p2(state), restarts=3, seed=7
        )
        assert reconstruction.l1_distance(
            result.probabilities, true_probabilities(state, grid)
        ) < 0.15

    def test_tight_bound_is_active(self, grid):
        state = hilbert.ground_state(32)
        cos_set, sin_set = signal_pair(state)
        result = reconstruction.reconstruct_distribution(
            cos_set, sin_set, grid, 0.5, restarts=2
        )
        assert result.kinetic_bound_active
        assert result.fisher_information <= 0.5 * (1 + 1e-9)

    def test_amplified_pointer_from_exact_signals(self, grid):
        state = postselected(0.04, 0.02)
        cos_set, sin_set = signal_pair(state)
        result = reconstruction.reconstruct_distribution(
            cos_set, sin_set, grid, hilbert.expect_p2(state), restarts=3
        )
        assert result.converged
        assert reconstruction.l1_distance(
            result.probabilities, true_probabilities(state, grid)
        ) < 0.05

    def test_objective_history_never_increases(self, grid):
        state = postselected(0.8, 0.3)
        cos_set, sin_set = signal_pair(state)
        result = reconstruction.reconstruct_distribution(
            cos_set, sin_set, grid, hilbert.expect_p2(state), restarts=1
        )
        history = np.array(result.objective_history)
        assert history.size >= 2
        assert np.all(np.diff(history) <= 1e-12)
        assert history[-1] == pytest.approx(result.objective)
        assert history[0] > history[-1]

    def test_flat_characteristic_function(self, grid):
        # C_k = 1 at k = 0 and 0 elsewhere asks for a flat distribution,
        # which the kinetic bound forbids
        ks = reconstruction.default_reconstruction_ks()
        cos_values = np.where(ks == 0.0, 1.0, 0.0)
        sigmas = np.full(ks.size, 1e-3)
        cos_set = SignalSet(ks, cos_values, sigmas, "cos", "z", 0)
        sin_set = SignalSet(ks, np.zeros(ks.size), sigmas, "sin", "z", 0)
        result = reconstruction.reconstruct_distribution(
            cos_set, sin_set, grid, 0.5, restarts=2
        )
        p = result.probabilities
        assert np.all(p >= 0.0)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        assert result.fisher_information <= 0.5 + 1e-9
        assert result.kinetic_bound_active

    def test_infeasible_bound(self, grid):
        cos_set, sin_set = signal_pair(hilbert.ground_state(32))
        with pytest.raises(InfeasibleBoundError):
            reconstruction.reconstruct_distribution(cos_set, sin_set, grid, 1e-3)

    def test_iteration_cap_raises_with_best(self, grid):
        cos_set, sin_set = signal_pair(hilbert.ground_state(32))
        with pytest.raises(ConvergenceError) as exc:
            reconstruction.reconstruct_distribution(
                cos_set, sin_set, grid, 1.0, restarts=2, max_iterations=1
            )
        assert exc.value.best is not None
        assert exc.value.best.probabilities.sum() == pytest.approx(1.0)

    def test_mismatched_sets(self, grid):
        state = hilbert.ground_state(32)
        cos_set, sin_set = signal_pair(state)
        with pytest.raises(ContractViolation):
            reconstruction.reconstruct_distribution(sin_set, cos_set, grid, 1.0)
        short = reconstruction.exact_signals(state, [0.0, 1.0], "sigma_y", "z")
        with pytest.raises(ContractViolation):
            reconstruction.reconstruct_distribution(cos_set, short, grid, 1.0)

    def test_same_seed_same_result(self, grid):
        state = postselected(0.5, 0.4)
        cos_set, sin_set = signal_pair(state, ShotPlan(shots=500, seed=3))
        a = reconstruction.reconstruct_distribution(cos_set, sin_set, grid, 2.0, restarts=3, seed=5)
        b = reconstruction.reconstruct_distribution(cos_set, sin_set, grid, 2.0, restarts=3, seed=5)
        assert np.array_equal(a.probabilities, b.probabilities)
        assert a.best_restart == b.best_restart

    def test_metadata_keys(self, grid):
        cos_set, sin_set = signal_pair(hilbert.ground_state(32))
        result = reconstruction.reconstruct_distribution(
            cos_set, sin_set, grid, 1.0, restarts=1, kinetic_source="extracted"
        )
        meta = result.metadata()
        assert meta["kinetic_source"] == "extracted"
        assert meta["restarts"] == 1
        assert set(meta) >= {"objective", "iterations", "kinetic_bound_active"}


class TestMomentExtraction:
    def test_mean_from_exact_small_k_signals(self):
        g, theta = 0.2, 0.2
        state = postselected(g, theta)
        signals = reconstruction.exact_signals(state, np.linspace(0, 5e-4, 6), "sigma_y", "z")
        mean, _ = reconstruction.extract_mean(signals)
        assert mean == pytest.approx(theory.delta_z(g, theta), abs=1e-6)

    @pytest.mark.parametrize("quadrature", ["z", "p"])
    def test_mean_of_random_coherent_states(self, quadrature):
        rng = np.random.default_rng(31)
        ks = np.linspace(0, 5e-4, 6)
        for _ in range(20):
            alpha = rng.uniform(0.0, 1.0) * np.exp(1j * rng.uniform(0.0, 2 * math.pi))
            state = hilbert.coherent_state(alpha, 40)
            truth = hilbert.expect_z(state) if quadrature == "z" else hilbert.expect_p(state)
            signals = reconstruction.exact_signals(state, ks, "sigma_y", quadrature)
            mean, _ = reconstruction.extract_mean(signals)
            assert mean == pytest.approx(truth, abs=1e-6)

    def test_mean_from_noisy_signals_within_three_sigma(self):
        g, theta = 0.2, 0.2
        state = postselected(g, theta)
        signals = reconstruction.generate_signals(
            state, reconstruction.default_slope_ks(), "sigma_y", "z",
            ShotPlan(shots=400, seed=8),
        )
        mean, sigma = reconstruction.extract_mean(signals)
        assert abs(mean - theory.delta_z(g, theta)) < 3 * sigma

    def test_two_sigma_coverage(self):
        state = postselected(0.2, 0.2)
        truth = hilbert.expect_z(state)
        exact = reconstruction.exact_signals(state, np.linspace(0, 0.1, 6), "sigma_y", "z")
        plan = ShotPlan(shots=400, seed=99)
        covered = 0
        for rep in range(200):
            mean, sigma = reconstruction.extract_mean(
                reconstruction.sample_signals(exact, plan, key=(rep,))
            )
            covered += abs(mean - truth) <= 2 * sigma
        assert 0.90 <= covered / 200 <= 0.99

    def test_linear_regime_warning(self, caplog):
        signals = reconstruction.exact_signals(
            hilbert.coherent_state(1.0, 40), np.linspace(0, 3, 6), "sigma_y", "z"
        )
        with caplog.at_level(logging.WARNING):
            reconstruction.extract_mean(signals)
        assert "linear regime" in caplog.text

    def test_mean_needs_sin_signals(self):
        signals = reconstruction.exact_signals(hilbert.ground_state(8), [0, 0.1, 0.2], "sigma_z", "z")
        with pytest.raises(ContractViolation):
            reconstruction.extract_mean(signals)

    def test_p2_of_vacuum(self):
        signals = reconstruction.exact_signals(
            hilbert.ground_state(16), reconstruction.default_slope_ks(), "sigma_z", "p"
        )
        assert reconstruction.extract_p2(signals) == pytest.approx(1.0, rel=1e-3)

    def test_p2_of_postselected_state(self):
        state = postselected(0.8, 0.3)
        signals = reconstruction.exact_signals(
            state, reconstruction.default_slope_ks(), "sigma_z", "p"
        )
        assert reconstruction.extract_p2(signals) == pytest.approx(hilbert.expect_p2(state), rel=1e-3)

    def test_p2_needs_momentum_signals(self):
        signals = reconstruction.exact_signals(
            hilbert.ground_state(16), reconstruction.default_slope_ks(), "sigma_z", "z"
        )
        with pytest.raises(ContractViolation):
            reconstruction.extract_p2(signals)

    def test_p2_needs_five_points(self):
        signals = reconstruction.exact_signals(hilbert.ground_state(8), [0, 0.1, 0.2], "sigma_z", "p")
        with pytest.raises(ExtractionError):
            reconstruction.extract_p2(signals)

    def test_p2_needs_concave_signal(self):
        flat = SignalSet(np.linspace(0, 0.3, 6), np.ones(6), np.full(6, 0.01), "cos", "p", 100)
        with pytest.raises(ExtractionError):
            reconstruction.extract_p2(flat)
