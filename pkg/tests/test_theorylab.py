"""Tests for the staged versus pooled SGD comparison."""

import math

import numpy as np
import pytest

from cmarl.core import ConfigurationError, NumericError, RngStream
from cmarl.theorylab import (
    QuadraticFamily,
    TheoryInstance,
    canonical_instance,
    check_assumptions,
    compare,
    curriculum_run,
    failure_probability_bound,
    iteration_budget,
    loss_bound,
    make_quadratic_family,
    pooled_run,
    run_trial,
)


def _noiseless(eta=0.1, K=(5, 7, 3), theta0=(5.0,)):
    family = make_quadratic_family([[0.0], [1.0], [2.0]], sigma=0.0)
    return TheoryInstance(family, n=(10, 10, 10), eta=eta, K=K, epsilon1=0.05, theta0=np.array(theta0))


class TestQuadraticFamily:
    """Test cases for the loss family."""

    def test_noiseless_samples_sit_on_optimum(self):
        family = make_quadratic_family([[0.0, 1.0], [2.0, 3.0]], sigma=0.0)
        samples = family.sample(1, 5, RngStream(0, 0))

        assert samples.shape == (5, 2)
        assert np.all(samples == [2.0, 3.0])

    def test_noise_truncated(self):
        """Test samples never stray beyond six standard deviations."""
        family = make_quadratic_family([[0.0]], sigma=0.5)
        samples = family.sample(0, 20000, RngStream(1, 0))
        assert np.max(np.abs(samples)) <= 3.0
        assert abs(samples.std() - 0.5) < 0.02

    def test_empirical_minimizer_is_sample_mean(self):
        family = make_quadratic_family([[1.0, -1.0]], sigma=0.3)
        samples = family.sample(0, 50, RngStream(2, 0))

        minimizer = family.empirical_minimizer(samples)
        assert np.allclose(minimizer, samples.mean(axis=0))
        assert np.allclose(family.empirical_gradient(minimizer, samples), 0.0, atol=1e-12)

    def test_pooled_optimum(self):
        family = canonical_instance().family
        assert np.allclose(family.pooled_optimum(), [1.0])

    def test_negative_sigma(self):
        with pytest.raises(ConfigurationError):
            QuadraticFamily([[0.0]], sigma=-1.0)


class TestAssumptions:
    """Test cases for the PL and smoothness checks."""

    def test_quadratic_passes(self):
        check_assumptions(canonical_instance().family, RngStream(0, 0))

    def test_overstated_pl_constant(self):
        family = QuadraticFamily([[0.0]], sigma=0.1, mu=10.0)
        with pytest.raises(NumericError, match="PL"):
            check_assumptions(family, RngStream(0, 0))

    def test_understated_smoothness(self):
        family = QuadraticFamily([[0.0]], sigma=0.1, l2=1.0)
        with pytest.raises(NumericError, match="Lipschitz"):
            check_assumptions(family, RngStream(0, 0))


class TestInstance:
    """Test cases for instance validation and derived constants."""

    def test_canonical_constants(self):
        instance = canonical_instance()

        assert instance.delta == pytest.approx(1.0)
        assert instance.upper_threshold == pytest.approx(0.1)
        assert instance.lower_threshold == pytest.approx(0.48)
        assert instance.lower_bound_applies

    @pytest.mark.parametrize("overrides", [
        {"eta": 0.6},
        {"eta": 0.0},
        {"epsilon1": 1.0},
        {"n": (10, 10)},
        {"K": (1, 1, -1)},
        {"batch_size": 0},
        {"theta0": np.zeros(2)},
    ])
    def test_invalid(self, overrides):
        family = make_quadratic_family([[0.0], [1.0], [2.0]], sigma=0.1)
        kwargs = dict(n=(10, 10, 10), eta=0.25, K=(5, 5, 5), epsilon1=0.05)
        kwargs.update(overrides)
        with pytest.raises(ConfigurationError):
            TheoryInstance(family, **kwargs)

    def test_iteration_budget(self):
        """Test the sufficient iteration counts on the canonical instance."""
        k_cl, k_rg = iteration_budget(canonical_instance())

        assert k_cl == pytest.approx(4 * math.log(40.0))
        assert k_rg == pytest.approx(2 * math.log(40.0))

    def test_failure_bound(self):
        instance = canonical_instance()
        bound = failure_probability_bound(instance, loss_bound(instance))

        assert 0.0 < bound <= 1.0
        assert bound >= (instance.J + 1) * instance.epsilon1
        with pytest.raises(ConfigurationError):
            failure_probability_bound(instance, 0.0)


class TestRuns:
    """Test cases for curriculum and pooled runs."""

    def test_noiseless_contraction(self):
        """Test each full-batch step contracts the squared distance by (1 - 2 eta)^2."""
        instance = _noiseless()
        result = curriculum_run(instance, RngStream(0, 0))

        for trace in result.stages:
            start = float(np.sum((trace.start - instance.family.optimum(trace.stage)) ** 2))
            expected = start * (1 - 2 * instance.eta) ** (2 * instance.K[trace.stage])
            assert abs(trace.distance_to_optimum ** 2 - expected) < 1e-12

    def test_stages_chain(self):
        """Test each stage starts where the previous one ended."""
        result = curriculum_run(_noiseless(), RngStream(0, 0))

        assert np.array_equal(result.stages[0].start, [5.0])
        for previous, current in zip(result.stages[:-1], result.stages[1:]):
            assert np.array_equal(current.start, previous.end)
        assert np.array_equal(result.theta, result.stages[-1].end)

    def test_zero_iterations_keep_start(self):
        result = curriculum_run(_noiseless(K=(0, 0, 0)), RngStream(0, 0))
        assert np.array_equal(result.theta, [5.0])

    def test_converges_to_empirical_minimizer(self):
        """Test a long full-batch stage lands on the mean of its samples."""
        result = curriculum_run(canonical_instance(), RngStream(3, 0))
        for trace in result.stages:
            assert trace.distance_to_empirical_minimizer < 1e-9

    def test_pooled_run_targets_mixture(self):
        theta = pooled_run(canonical_instance(sigma=0.0), RngStream(0, 0))
        assert abs(theta[0] - 1.0) < 1e-9

    def test_pooled_needs_equal_counts(self):
        family = make_quadratic_family([[0.0], [1.0]], sigma=0.1)
        instance = TheoryInstance(family, n=(10, 20), eta=0.25, K=(5, 5), epsilon1=0.05)
        with pytest.raises(ConfigurationError):
            pooled_run(instance, RngStream(0, 0))

    def test_minibatch_deterministic(self):
        instance = canonical_instance(batch_size=8)
        first = curriculum_run(instance, RngStream(4, 0)).theta
        second = curriculum_run(instance, RngStream(4, 0)).theta

        assert np.array_equal(first, second)
        assert not np.array_equal(first, curriculum_run(canonical_instance(), RngStream(4, 0)).theta)


class TestCompare:
    """Test cases for the trial loop and report."""

    def test_canonical_pass_rates(self):
        """Test the canonical instance passes every check on at least 95 of 100 trials."""
        report = compare(canonical_instance(), 100, RngStream(0, 0))

        assert report.pass_rates["upper"] >= 0.95
        assert report.pass_rates["lower"] >= 0.95
        assert report.pass_rates["head_to_head"] >= 0.95
        assert len(report.rows()) == 100

    def test_single_sample_steps_miss_lower_bound(self):
        """Test why runs default to full batch: one-sample steps fall short on the lower bound only."""
        report = compare(canonical_instance(batch_size=1), 100, RngStream(0, 0))

        assert report.pass_rates["lower"] < 0.95
        assert report.pass_rates["upper"] >= 0.95
        assert report.pass_rates["head_to_head"] >= 0.95

    def test_head_to_head_compares_squared_to_unsquared(self):
        trial = run_trial(canonical_instance(), RngStream(1, 0), 3)

        assert trial.head_to_head == (trial.cl_error_sq < trial.rg_error)
        assert trial.cl_error == pytest.approx(math.sqrt(trial.cl_error_sq))
        assert trial.rg_error_sq == pytest.approx(trial.rg_error ** 2)

    def test_lower_bound_skipped_without_shift(self):
        """Test delta = 0 skips the lower bound."""
        family = make_quadratic_family([[1.0], [0.0], [2.0], [1.0]], sigma=0.1)
        instance = TheoryInstance(family, n=(50,) * 4, eta=0.25, K=(20,) * 4, epsilon1=0.05)

        report = compare(instance, 3, RngStream(0, 0))

        assert report.delta == 0.0
        assert not report.lower_checked
        assert math.isnan(report.pass_rates["lower"])
        assert all(row["pass_lower"] == "" for row in report.rows())
        assert "skipped" in report.summary()

    def test_deterministic_and_thread_independent(self):
        instance = canonical_instance(batch_size=16)
        first = compare(instance, 6, RngStream(2, 0))
        second = compare(instance, 6, RngStream(2, 0), threads=3)

        assert first.results == second.results
        assert np.array_equal(first.cl_error, second.cl_error)

    def test_summary_lines(self):
        report = compare(canonical_instance(), 2, RngStream(0, 0))
        summary = report.summary()

        assert "trials: 2" in summary
        assert "upper bound" in summary
        assert "lower bound" in summary
        assert "squared norm against an unsquared one" in summary

    def test_trial_count(self):
        with pytest.raises(ConfigurationError):
            compare(canonical_instance(), 0, RngStream(0, 0))
