"""Autoregressive categorical policy with linear logits.

The context of step t is ``features ++ one_hot(prev_token) ++ [t / L_max] ++
conditioning``; logits are ``weights @ context`` and the next-token
distribution is ``softmax(logits / temperature)``.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .core import (
    ConfigurationError,
    NumericError,
    Response,
    RngStream,
    ShapeError,
    Vocabulary,
    DEFAULT_MAX_LENGTH,
)


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """Immutable weight snapshot of shape V x (F + V + 1 + C)."""

    weights: np.ndarray
    feature_dim: int
    conditioning_dim: int = 0
    max_length: int = DEFAULT_MAX_LENGTH

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64)
        weights.flags.writeable = False
        object.__setattr__(self, "weights", weights)
        if weights.ndim != 2:
            raise ShapeError(f"weights must be a matrix, got shape {weights.shape}")
        expected = self.feature_dim + weights.shape[0] + 1 + self.conditioning_dim
        if weights.shape[1] != expected:
            raise ShapeError(
                f"weights have {weights.shape[1]} columns, expected F + V + 1 + C = {expected}"
            )
        if self.max_length < 1:
            raise ConfigurationError(f"max_length must be positive, got {self.max_length}")
        if not np.all(np.isfinite(weights)):
            raise NumericError("policy weights must be finite", "weights")

    @property
    def vocab_size(self) -> int:
        return self.weights.shape[0]

    @property
    def context_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.weights.shape

    def with_weights(self, weights: np.ndarray) -> "PolicyParams":
        return PolicyParams(weights, self.feature_dim, self.conditioning_dim, self.max_length)

    def same_layout(self, other: "PolicyParams") -> bool:
        return (
            self.shape == other.shape
            and self.feature_dim == other.feature_dim
            and self.conditioning_dim == other.conditioning_dim
            and self.max_length == other.max_length
        )


def init_params(
    vocab_size: int,
    feature_dim: int,
    conditioning_dim: int,
    rng: RngStream,
    max_length: int = DEFAULT_MAX_LENGTH,
    scale: float = 0.01,
) -> PolicyParams:
    """Small Gaussian initialisation."""
    context_dim = feature_dim + vocab_size + 1 + conditioning_dim
    weights = rng.normal((vocab_size, context_dim), scale=scale) if scale > 0 else np.zeros((vocab_size, context_dim))
    return PolicyParams(weights, feature_dim, conditioning_dim, max_length)


def _conditioning(conditioning, conditioning_dim: Optional[int]) -> np.ndarray:
    vector = np.zeros(0) if conditioning is None else np.asarray(conditioning, dtype=np.float64).reshape(-1)
    if conditioning_dim is not None and vector.shape[0] != conditioning_dim:
        raise ConfigurationError(
            f"conditioning has length {vector.shape[0]}, policy expects {conditioning_dim}"
        )
    return vector


def context_features(
    case,
    conditioning,
    prev_token: Optional[int],
    position: int,
    max_length: int,
    vocab_size: int,
    conditioning_dim: Optional[int] = None,
) -> np.ndarray:
    """Context vector of one decoding step; ``prev_token=None`` is start of sequence."""
    if not 0 <= position < max_length:
        raise ConfigurationError(f"position {position} outside [0, {max_length})")
    cond = _conditioning(conditioning, conditioning_dim)
    one_hot = np.zeros(vocab_size)
    if prev_token is not None:
        one_hot[prev_token] = 1.0
    return np.concatenate([np.asarray(case.features, dtype=np.float64), one_hot, [position / max_length], cond])


def response_contexts(params: PolicyParams, case, conditioning, tokens: Sequence[int]) -> np.ndarray:
    """Contexts of every step of ``tokens``, each built from the true prefix (T x F_ctx)."""
    steps = len(tokens)
    cond = _conditioning(conditioning, params.conditioning_dim)
    features = np.asarray(case.features, dtype=np.float64)
    if features.shape[0] != params.feature_dim:
        raise ShapeError(f"case has {features.shape[0]} features, policy expects {params.feature_dim}")
    if steps > params.max_length:
        raise ConfigurationError(f"sequence of length {steps} exceeds max_length {params.max_length}")
    vocab_size = params.vocab_size
    contexts = np.zeros((steps, params.context_dim))
    contexts[:, : params.feature_dim] = features
    for t in range(1, steps):
        contexts[t, params.feature_dim + tokens[t - 1]] = 1.0
    position_col = params.feature_dim + vocab_size
    contexts[:, position_col] = np.arange(steps) / params.max_length
    contexts[:, position_col + 1 :] = cond
    return contexts


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise softmax of ``logits / temperature`` with max subtraction."""
    if temperature <= 0:
        raise ConfigurationError(f"temperature must be positive, got {temperature}")
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits", "logits")
    scaled = logits / temperature
    scaled = scaled - np.max(scaled, axis=-1, keepdims=True)
    exp = np.exp(scaled)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def step_distribution(params: PolicyParams, ctx: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    return softmax(params.weights @ ctx, temperature)


def step_distributions(params: PolicyParams, contexts: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    return softmax(contexts @ params.weights.T, temperature)


def sample_response(
    params: PolicyParams,
    case,
    conditioning,
    rng: RngStream,
    temperature: float = 1.0,
    max_length: Optional[int] = None,
) -> Response:
    """Sample tokens until ANS_CLOSE or ``max_length`` (default: the policy's)."""
    limit = params.max_length if max_length is None else max_length
    if not 1 <= limit <= params.max_length:
        raise ConfigurationError(f"max_length must be in [1, {params.max_length}], got {limit}")
    cond = _conditioning(conditioning, params.conditioning_dim)

    tokens = []
    dists = []
    logprobs = []
    prev = None
    terminated = False
    for position in range(limit):
        ctx = context_features(case, cond, prev, position, params.max_length, params.vocab_size)
        dist = step_distribution(params, ctx, temperature)
        cumulative = np.cumsum(dist)
        token = int(np.searchsorted(cumulative, rng.uniform() * cumulative[-1], side="right"))
        token = min(token, params.vocab_size - 1)
        tokens.append(token)
        dists.append(dist)
        logprobs.append(np.log(dist[token]))
        prev = token
        if token == Vocabulary.ANS_CLOSE:
            terminated = True
            break
    return Response(tuple(tokens), np.array(dists), np.array(logprobs), terminated)


def greedy_response(params: PolicyParams, case, conditioning, temperature: float = 1.0) -> Response:
    """Argmax decoding; ties go to the lowest token index."""
    cond = _conditioning(conditioning, params.conditioning_dim)
    tokens, dists, logprobs = [], [], []
    prev = None
    terminated = False
    for position in range(params.max_length):
        ctx = context_features(case, cond, prev, position, params.max_length, params.vocab_size)
        dist = step_distribution(params, ctx, temperature)
        token = int(np.argmax(dist))
        tokens.append(token)
        dists.append(dist)
        logprobs.append(np.log(dist[token]))
        prev = token
        if token == Vocabulary.ANS_CLOSE:
            terminated = True
            break
    return Response(tuple(tokens), np.array(dists), np.array(logprobs), terminated)


def _check_tokens(params: PolicyParams, tokens: Sequence[int]):
    if len(tokens) == 0:
        raise ConfigurationError("token sequence must be non-empty")
    if any(not 0 <= t < params.vocab_size for t in tokens):
        raise ConfigurationError(f"token index outside vocabulary of size {params.vocab_size}")


def sequence_log_prob(params: PolicyParams, case, conditioning, tokens: Sequence[int], temperature: float = 1.0) -> float:
    """Log-probability of ``tokens`` recomputed from ``params``."""
    _check_tokens(params, tokens)
    dists = step_distributions(params, response_contexts(params, case, conditioning, tokens), temperature)
    picked = dists[np.arange(len(tokens)), list(tokens)]
    return float(np.sum(np.log(picked)))


def sequence_log_prob_gradient(
    params: PolicyParams, case, conditioning, tokens: Sequence[int], temperature: float = 1.0
) -> np.ndarray:
    """Gradient of ``sequence_log_prob`` w.r.t. weights: sum_t (e_y - p_t) c_t^T / tau."""
    _check_tokens(params, tokens)
    contexts = response_contexts(params, case, conditioning, tokens)
    dists = step_distributions(params, contexts, temperature)
    delta = -dists
    delta[np.arange(len(tokens)), list(tokens)] += 1.0
    return delta.T @ contexts / temperature


def _safe_log(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    np.log(p, out=out, where=p > 0)
    return out


def token_entropy(dist: np.ndarray) -> float:
    dist = np.asarray(dist, dtype=np.float64)
    if np.any(dist < 0):
        raise NumericError("negative probability in distribution", "entropy")
    return float(-np.sum(dist * _safe_log(dist)))


def entropies(dists: np.ndarray) -> np.ndarray:
    """Per-row entropy of a T x V matrix of distributions."""
    return -np.sum(dists * _safe_log(dists), axis=-1)


def exact_step_kl(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) summed exactly over the vocabulary."""
    return float(step_kls(np.asarray(p, dtype=np.float64)[None, :], np.asarray(q, dtype=np.float64)[None, :])[0])


def step_kls(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise KL(p_t || q_t)."""
    if np.any((p > 0) & (q <= 0)):
        raise NumericError("reference distribution has zero mass where policy does not", "kl")
    return np.sum(p * (_safe_log(p) - _safe_log(q)), axis=-1)


def entropy_logit_gradient(dists: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """d H_t / d logits_t for each row: -(1/tau) p (log p + H)."""
    log_p = _safe_log(dists)
    h = -np.sum(dists * log_p, axis=-1, keepdims=True)
    return -dists * (log_p + h) / temperature


def kl_logit_gradient(p: np.ndarray, q: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """d KL(p_t || q_t) / d logits of p, rows: (1/tau) p (log p - log q - KL)."""
    log_ratio = _safe_log(p) - _safe_log(q)
    kl = np.sum(p * log_ratio, axis=-1, keepdims=True)
    return p * (log_ratio - kl) / temperature


def mean_policy_entropy(params: PolicyParams, probes, temperature: float = 1.0) -> float:
    """Mean per-token entropy over probe (case, conditioning, tokens) triples."""
    total = 0.0
    count = 0
    for case, conditioning, tokens in probes:
        dists = step_distributions(params, response_contexts(params, case, conditioning, tokens), temperature)
        total += float(np.sum(entropies(dists)))
        count += len(tokens)
    if count == 0:
        raise ConfigurationError("probe set must contain at least one token")
    return total / count
