"""Tests for the linear autoregressive policy."""

import numpy as np
import pytest

from cmarl.core import Case, ConfigurationError, NumericError, RngStream, ShapeError, Vocabulary
from cmarl.policy import (
    PolicyParams,
    context_features,
    entropies,
    entropy_logit_gradient,
    exact_step_kl,
    greedy_response,
    init_params,
    kl_logit_gradient,
    mean_policy_entropy,
    response_contexts,
    sample_response,
    sequence_log_prob,
    sequence_log_prob_gradient,
    softmax,
    step_distribution,
    token_entropy,
)


def _case(features, case_id="case-1"):
    return Case(case_id, features, ("A", "B", "C", "D"), 0, 0)


def _random_params(seed, vocab_size=17, feature_dim=3, conditioning_dim=0, max_length=8, scale=0.5):
    return init_params(vocab_size, feature_dim, conditioning_dim, RngStream(seed, 0), max_length, scale)


class TestContextFeatures:
    """Test cases for the step context layout."""

    def test_hand_concatenated_context(self):
        """Test features, one-hot previous token, position and conditioning order."""
        ctx = context_features(_case([0.5, -1.0]), None, 1, 1, 4, 3)

        assert ctx.tolist() == [0.5, -1.0, 0.0, 1.0, 0.0, 0.25]

    def test_start_of_sequence(self):
        """Test that the start of sequence has an all-zero one-hot block."""
        ctx = context_features(_case([0.5, -1.0]), [1.0, 2.0], None, 0, 16, 5)

        assert ctx[2:7].tolist() == [0.0] * 5
        assert ctx[7] == 0.0
        assert ctx[8:].tolist() == [1.0, 2.0]

    def test_last_position(self):
        ctx = context_features(_case([0.0]), None, None, 15, 16, 3)
        assert ctx[4] == pytest.approx(15 / 16)

    def test_conditioning_length_mismatch(self):
        """Test that a conditioning vector of the wrong length is rejected."""
        with pytest.raises(ConfigurationError, match="conditioning"):
            context_features(_case([0.0]), [1.0], None, 0, 4, 3, conditioning_dim=2)

    def test_position_out_of_range(self):
        with pytest.raises(ConfigurationError):
            context_features(_case([0.0]), None, None, 4, 4, 3)

    def test_teacher_forced_contexts_match_step_contexts(self):
        """Test batched contexts equal step-by-step contexts."""
        params = _random_params(0, conditioning_dim=4)
        case = _case([0.3, -0.2, 1.0])
        cond = [1.0, 0.0, 2.0, 0.0]
        tokens = [0, 15, 1, 2, 5, 3]

        contexts = response_contexts(params, case, cond, tokens)
        for t, token in enumerate(tokens):
            prev = None if t == 0 else tokens[t - 1]
            expected = context_features(case, cond, prev, t, params.max_length, params.vocab_size)
            assert np.array_equal(contexts[t], expected)


class TestDistributions:
    """Test cases for softmax and step distributions."""

    def test_softmax_values(self):
        """Test softmax of [1, 2, 3]."""
        assert np.allclose(softmax(np.array([1.0, 2.0, 3.0])), [0.09003057, 0.24472847, 0.66524096], atol=1e-8)

    def test_zero_weights_uniform(self):
        """Test that zero weights give the uniform distribution."""
        params = init_params(17, 3, 0, RngStream(0, 0), scale=0.0)
        dist = step_distribution(params, np.ones(params.context_dim))

        assert np.allclose(dist, 1.0 / 17)

    def test_shift_invariance(self):
        """Test adding a constant to every logit leaves the distribution unchanged."""
        rng = np.random.default_rng(1)
        for _ in range(100):
            logits = rng.normal(size=9) * 5
            assert np.max(np.abs(softmax(logits) - softmax(logits + rng.normal() * 100))) < 1e-12

    def test_argmax_invariant_under_temperature(self):
        """Test that the most probable token does not depend on temperature."""
        rng = np.random.default_rng(2)
        for _ in range(100):
            logits = rng.normal(size=11)
            top = int(np.argmax(logits))
            for tau in (0.1, 0.5, 1.0, 3.0, 50.0):
                assert int(np.argmax(softmax(logits, tau))) == top

    def test_sums_to_one(self):
        params = _random_params(3, scale=3.0)
        dist = step_distribution(params, np.ones(params.context_dim), 0.7)
        assert abs(dist.sum() - 1.0) < 1e-12

    def test_non_finite_logits(self):
        with pytest.raises(NumericError):
            softmax(np.array([0.0, np.nan]))

    def test_non_positive_temperature(self):
        with pytest.raises(ConfigurationError):
            softmax(np.array([0.0, 1.0]), 0.0)


class TestSampling:
    """Test cases for sampling and greedy decoding."""

    def test_forced_stop(self):
        """Test that a policy putting all mass on the closing tag stops after one token."""
        params = init_params(17, 2, 0, RngStream(0, 0), scale=0.0)
        weights = np.array(params.weights)
        weights[Vocabulary.ANS_CLOSE, :2] = 50.0
        params = params.with_weights(weights)

        response = sample_response(params, _case([1.0, 1.0]), None, RngStream(0, 1))

        assert response.tokens == (Vocabulary.ANS_CLOSE,)
        assert response.terminated

    def test_same_stream_same_tokens(self):
        """Test determinism of sampling under identical streams."""
        params = _random_params(4)
        case = _case([0.1, 0.2, 0.3])

        a = sample_response(params, case, None, RngStream(9, 9))
        b = sample_response(params, case, None, RngStream(9, 9))

        assert a.tokens == b.tokens
        assert np.array_equal(a.step_logprobs, b.step_logprobs)

    def test_length_limit(self):
        """Test responses never exceed the length limit and stop only at the closing tag."""
        params = _random_params(5)
        rng = RngStream(1, 1)
        for _ in range(200):
            response = sample_response(params, _case([0.0, 0.0, 0.0]), None, rng)
            assert 1 <= len(response) <= params.max_length
            assert response.terminated == (response.tokens[-1] == Vocabulary.ANS_CLOSE)
            assert Vocabulary.ANS_CLOSE not in response.tokens[:-1]

    def test_uniform_first_token_frequencies(self):
        """Test zero weights sample every token uniformly."""
        params = init_params(17, 1, 0, RngStream(0, 0), max_length=16, scale=0.0)
        rng = RngStream(2, 2)
        draws = 20000
        counts = np.zeros(17)
        for _ in range(draws):
            response = sample_response(params, _case([0.0]), None, rng, max_length=1)
            counts[response.tokens[0]] += 1

        expected = draws / 17
        sd = np.sqrt(draws * (1 / 17) * (16 / 17))
        assert np.all(np.abs(counts - expected) < 4 * sd)

    def test_invalid_length_limit(self):
        params = _random_params(0)
        with pytest.raises(ConfigurationError):
            sample_response(params, _case([0.0, 0.0, 0.0]), None, RngStream(0, 0), max_length=params.max_length + 1)

    def test_greedy_picks_argmax(self):
        """Test greedy decoding takes the most probable token at every step."""
        params = _random_params(6, scale=2.0)
        response = greedy_response(params, _case([1.0, -1.0, 0.5]), None)

        for t, token in enumerate(response.tokens):
            assert token == int(np.argmax(response.step_dists[t]))


class TestLogProbabilities:
    """Test cases for sequence log-probabilities and their gradient."""

    def test_recompute_matches_cache(self):
        """Test recomputed log-probs equal the cached ones of sampled responses."""
        params = _random_params(7, conditioning_dim=4)
        case = _case([0.2, 0.4, -0.6])
        cond = [0.0, 1.0, 2.0, 0.0]
        rng = RngStream(3, 3)
        for _ in range(20):
            response = sample_response(params, case, cond, rng, temperature=0.8)
            recomputed = sequence_log_prob(params, case, cond, response.tokens, 0.8)
            assert abs(recomputed - response.log_prob) < 1e-10

    def test_uniform_sequence(self):
        """Test a uniform policy gives -n ln V."""
        params = init_params(17, 3, 0, RngStream(0, 0), scale=0.0)
        assert sequence_log_prob(params, _case([1.0, 2.0, 3.0]), None, [0, 5, 3]) == pytest.approx(-3 * np.log(17))

    @pytest.mark.parametrize("temperature", [1.0, 0.7])
    def test_gradient_matches_finite_differences(self, temperature):
        """Test the closed-form gradient against central differences at random points."""
        rng = np.random.default_rng(3)
        for point in range(20):
            params = _random_params(100 + point, conditioning_dim=2)
            case = _case(rng.normal(size=3))
            cond = rng.normal(size=2)
            tokens = [int(t) for t in rng.integers(0, params.vocab_size, size=int(rng.integers(1, 6)))]

            grad = sequence_log_prob_gradient(params, case, cond, tokens, temperature)
            for _ in range(5):
                i = int(rng.integers(0, params.shape[0]))
                j = int(rng.integers(0, params.shape[1]))
                step = np.zeros(params.shape)
                step[i, j] = 1e-5
                up = sequence_log_prob(params.with_weights(params.weights + step), case, cond, tokens, temperature)
                down = sequence_log_prob(params.with_weights(params.weights - step), case, cond, tokens, temperature)
                numeric = (up - down) / 2e-5
                assert abs(grad[i, j] - numeric) <= 1e-5 * max(1.0, abs(numeric))

    def test_token_outside_vocabulary(self):
        params = _random_params(0)
        with pytest.raises(ConfigurationError):
            sequence_log_prob(params, _case([0.0, 0.0, 0.0]), None, [params.vocab_size])
        with pytest.raises(ConfigurationError):
            sequence_log_prob(params, _case([0.0, 0.0, 0.0]), None, [])


class TestEntropyAndKl:
    """Test cases for exact entropy and KL terms."""

    def test_entropy_values(self):
        """Test entropy of uniform, one-hot and a skewed distribution."""
        assert token_entropy(np.full(4, 0.25)) == pytest.approx(np.log(4))
        assert token_entropy(np.array([0.0, 1.0, 0.0])) == 0.0
        assert token_entropy(np.array([0.5, 0.25, 0.25])) == pytest.approx(1.5 * np.log(2))

    def test_negative_probability(self):
        with pytest.raises(NumericError):
            token_entropy(np.array([1.5, -0.5]))

    def test_entropy_bounds(self):
        """Test 0 <= H <= ln V for sampled distributions."""
        params = _random_params(8, scale=2.0)
        rng = RngStream(4, 4)
        for _ in range(50):
            response = sample_response(params, _case([1.0, 0.0, -1.0]), None, rng)
            h = entropies(response.step_dists)
            assert np.all(h >= 0)
            assert np.all(h <= np.log(params.vocab_size) + 1e-12)

    def test_kl_values(self):
        """Test KL identity and point mass against uniform."""
        p = np.array([0.2, 0.3, 0.5])
        assert exact_step_kl(p, p) == 0.0
        assert exact_step_kl(np.array([1.0, 0.0]), np.array([0.5, 0.5])) == pytest.approx(np.log(2))

    def test_kl_non_negative(self):
        """Test Gibbs' inequality on random pairs."""
        rng = np.random.default_rng(5)
        for _ in range(1000):
            p, q = rng.dirichlet(np.ones(6), size=2)
            assert exact_step_kl(p, q) >= -1e-12

    def test_kl_support_violation(self):
        with pytest.raises(NumericError):
            exact_step_kl(np.array([0.5, 0.5]), np.array([1.0, 0.0]))

    def test_logit_gradients_match_finite_differences(self):
        """Test entropy and KL logit gradients against central differences."""
        rng = np.random.default_rng(6)
        for _ in range(20):
            z = rng.normal(size=7)
            q = softmax(rng.normal(size=7))
            tau = float(rng.uniform(0.5, 2.0))
            p = softmax(z, tau)
            h_grad = entropy_logit_gradient(p[None, :], tau)[0]
            kl_grad = kl_logit_gradient(p[None, :], q[None, :], tau)[0]
            for j in range(7):
                e = np.zeros(7)
                e[j] = 1e-6
                h_num = (token_entropy(softmax(z + e, tau)) - token_entropy(softmax(z - e, tau))) / 2e-6
                kl_num = (exact_step_kl(softmax(z + e, tau), q) - exact_step_kl(softmax(z - e, tau), q)) / 2e-6
                assert h_grad[j] == pytest.approx(h_num, abs=1e-7)
                assert kl_grad[j] == pytest.approx(kl_num, abs=1e-7)

    def test_mean_policy_entropy_uniform(self):
        """Test mean probe entropy of a uniform policy is ln V."""
        params = init_params(17, 3, 0, RngStream(0, 0), scale=0.0)
        probes = [(_case([1.0, 0.0, 0.0]), None, [0, 15, 1]), (_case([0.0, 1.0, 0.0]), None, [2, 5])]

        assert mean_policy_entropy(params, probes) == pytest.approx(np.log(17))

    def test_mean_policy_entropy_empty(self):
        params = _random_params(0)
        with pytest.raises(ConfigurationError):
            mean_policy_entropy(params, [])


class TestPolicyParams:
    """Test cases for parameter snapshots."""

    def test_shape_checked(self):
        """Test that the column count must equal F + V + 1 + C."""
        with pytest.raises(ShapeError):
            PolicyParams(np.zeros((5, 8)), feature_dim=3)
        with pytest.raises(ShapeError):
            PolicyParams(np.zeros(5), feature_dim=3)

    def test_non_finite_rejected(self):
        weights = np.zeros((5, 9))
        weights[0, 0] = np.inf
        with pytest.raises(NumericError):
            PolicyParams(weights, feature_dim=3)

    def test_weights_read_only(self):
        """Test snapshots are immutable and copies share layout."""
        params = _random_params(0)
        with pytest.raises(ValueError):
            params.weights[0, 0] = 1.0
        assert params.same_layout(params.with_weights(np.zeros(params.shape)))

    def test_wrong_feature_count(self):
        params = _random_params(0)
        with pytest.raises(ShapeError):
            sequence_log_prob(params, _case([0.0, 0.0]), None, [0])
