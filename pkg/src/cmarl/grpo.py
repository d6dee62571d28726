"""Curriculum entropy-aware GRPO objective, its analytic gradient and the update step.

For a group of G responses to one case the objective is::

    J = (1/G) sum_i [ min(r_i A_i, clip(r_i, 1-eps, 1+eps) A_i) - beta KL_i ] + gamma H_bar

with r_i the sequence probability ratio against the rollout policy, KL_i the
exact per-step KL to the reference policy summed over response i, and H_bar
the mean per-token entropy over all tokens of the group.
"""

import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    ConfigurationError,
    NumericError,
    Response,
    RngStream,
    ShapeError,
    Vocabulary,
    case_index,
    ordered_map,
)
from .logger import get_logger
from .policy import (
    PolicyParams,
    entropies,
    entropy_logit_gradient,
    kl_logit_gradient,
    response_contexts,
    sample_response,
    step_distributions,
    step_kls,
)
from .rewards import OPTION, total_reward

logger = get_logger(__name__)


@dataclass(frozen=True)
class CmarlConfig:
    clip_epsilon: float = 0.2
    kl_beta: float = 1e-3
    entropy_gamma: float = 1e-4
    temperature: float = 1.0
    learning_rate: float = 0.05
    group_size: int = 8
    std_guard: float = 1e-8

    def __post_init__(self):
        if self.clip_epsilon <= 0:
            raise ConfigurationError(f"clip_epsilon must be positive, got {self.clip_epsilon}")
        if self.std_guard <= 0:
            raise ConfigurationError(f"std_guard must be positive, got {self.std_guard}")
        if self.temperature <= 0:
            raise ConfigurationError(f"temperature must be positive, got {self.temperature}")
        if self.group_size < 2:
            raise ConfigurationError(f"group_size must be at least 2, got {self.group_size}")
        if self.kl_beta < 0 or self.entropy_gamma < 0:
            raise ConfigurationError("kl_beta and entropy_gamma must be non-negative")

    def with_stage(self, entropy_gamma: float, kl_beta: float, learning_rate: Optional[float] = None) -> "CmarlConfig":
        return replace(
            self,
            entropy_gamma=entropy_gamma,
            kl_beta=kl_beta,
            learning_rate=self.learning_rate if learning_rate is None else learning_rate,
        )


@dataclass(frozen=True, eq=False)
class RolloutGroup:
    case_id: str
    responses: Tuple[Response, ...]
    rewards: np.ndarray
    advantages: np.ndarray
    old_logprobs: np.ndarray
    format_rewards: Optional[np.ndarray] = None
    accuracy_rewards: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "responses", tuple(self.responses))
        for name in ("rewards", "advantages", "old_logprobs"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        size = len(self.responses)
        for name in ("rewards", "advantages", "old_logprobs"):
            if getattr(self, name).shape != (size,):
                raise ShapeError(f"{name} must have length G={size}")

    @property
    def size(self) -> int:
        return len(self.responses)

    @property
    def num_tokens(self) -> int:
        return sum(len(r) for r in self.responses)


@dataclass(frozen=True)
class ObjectiveTerms:
    """The three additive parts of the objective for one group."""

    surrogate: float
    kl: float
    entropy: float

    def total(self, kl_beta: float, entropy_gamma: float) -> float:
        return self.surrogate - kl_beta * self.kl + entropy_gamma * self.entropy


@dataclass(frozen=True)
class BatchMetrics:
    mean_reward: float
    mean_format: float
    mean_accuracy: float
    mean_entropy: float
    mean_kl: float
    grad_norm: float
    objective: float


def group_advantages(rewards: Sequence[float], std_guard: float = 1e-8) -> np.ndarray:
    """Standardise rewards within a group with the population std plus a guard."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.shape[0] < 2:
        raise ConfigurationError(f"a group needs at least 2 rewards, got {rewards.shape[0]}")
    if np.all(rewards == rewards[0]):
        return np.zeros_like(rewards)
    return (rewards - rewards.mean()) / (rewards.std() + std_guard)


@dataclass
class _ResponseEval:
    contexts: np.ndarray
    dists: np.ndarray
    ref_dists: np.ndarray
    log_prob: float
    entropy: np.ndarray
    kl: np.ndarray


def _evaluate(params, ref_params, case, conditioning, response: Response, temperature) -> _ResponseEval:
    tokens = list(response.tokens)
    contexts = response_contexts(params, case, conditioning, tokens)
    dists = step_distributions(params, contexts, temperature)
    ref_dists = step_distributions(ref_params, contexts, temperature)
    picked = dists[np.arange(len(tokens)), tokens]
    return _ResponseEval(
        contexts=contexts,
        dists=dists,
        ref_dists=ref_dists,
        log_prob=float(np.sum(np.log(picked))),
        entropy=entropies(dists),
        kl=step_kls(dists, ref_dists),
    )


def _check_layouts(params: PolicyParams, *others: PolicyParams):
    for other in others:
        if not params.same_layout(other):
            raise ShapeError(f"policy layouts differ: {params.shape} vs {other.shape}")


def _old_logprobs(old_params, group, case, conditioning, temperature) -> np.ndarray:
    if group.old_logprobs is not None and len(group.old_logprobs) == group.size:
        return group.old_logprobs
    return np.array([
        _evaluate(old_params, old_params, case, conditioning, r, temperature).log_prob for r in group.responses
    ])


def _ratios(evals: List[_ResponseEval], old_logprobs: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        ratios = np.exp(np.array([e.log_prob for e in evals]) - old_logprobs)
    if not np.all(np.isfinite(ratios)):
        raise NumericError("probability ratio overflowed", "ratio")
    return ratios


def objective_terms(
    params: PolicyParams,
    old_params: PolicyParams,
    ref_params: PolicyParams,
    group: RolloutGroup,
    case,
    conditioning,
    cfg: CmarlConfig,
) -> ObjectiveTerms:
    _check_layouts(params, old_params, ref_params)
    evals = [_evaluate(params, ref_params, case, conditioning, r, cfg.temperature) for r in group.responses]
    ratios = _ratios(evals, _old_logprobs(old_params, group, case, conditioning, cfg.temperature))
    clipped = np.clip(ratios, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon)
    adv = group.advantages
    surrogate = float(np.mean(np.minimum(ratios * adv, clipped * adv)))
    kl = float(np.mean([np.sum(e.kl) for e in evals]))
    entropy = float(np.sum([np.sum(e.entropy) for e in evals]) / group.num_tokens)
    for name, value in (("surrogate", surrogate), ("kl", kl), ("entropy", entropy)):
        if not math.isfinite(value):
            raise NumericError(f"objective term is not finite: {value}", name)
    return ObjectiveTerms(surrogate, kl, entropy)


def cmarl_objective(params, old_params, ref_params, group, case, conditioning, cfg: CmarlConfig) -> float:
    terms = objective_terms(params, old_params, ref_params, group, case, conditioning, cfg)
    return terms.total(cfg.kl_beta, cfg.entropy_gamma)


def cmarl_gradient(params, old_params, ref_params, group, case, conditioning, cfg: CmarlConfig) -> np.ndarray:
    """Exact gradient of ``cmarl_objective`` w.r.t. ``params.weights``.

    old_params and ref_params are constants. When r_i A_i equals the clipped
    term the unclipped branch is used.
    """
    _check_layouts(params, old_params, ref_params)
    tau = cfg.temperature
    evals = [_evaluate(params, ref_params, case, conditioning, r, tau) for r in group.responses]
    ratios = _ratios(evals, _old_logprobs(old_params, group, case, conditioning, tau))
    clipped = np.clip(ratios, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon)
    adv = group.advantages
    unclipped_active = ratios * adv <= clipped * adv
    coefficients = np.where(unclipped_active, adv * ratios, 0.0)

    size = group.size
    num_tokens = group.num_tokens
    grad = np.zeros(params.shape)
    for i, (response, ev) in enumerate(zip(group.responses, evals)):
        steps = len(response)
        score = -ev.dists
        score[np.arange(steps), list(response.tokens)] += 1.0
        dlogits = coefficients[i] * score / tau
        if cfg.kl_beta:
            dlogits = dlogits - cfg.kl_beta * kl_logit_gradient(ev.dists, ev.ref_dists, tau)
        dlogits = dlogits / size
        if cfg.entropy_gamma:
            dlogits = dlogits + (cfg.entropy_gamma / num_tokens) * entropy_logit_gradient(ev.dists, tau)
        grad += dlogits.T @ ev.contexts
    if not np.all(np.isfinite(grad)):
        raise NumericError("gradient is not finite", "gradient")
    return grad


def ascent_step(params: PolicyParams, grad: np.ndarray, learning_rate: float) -> PolicyParams:
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape:
        raise ShapeError(f"gradient shape {grad.shape} does not match parameters {params.shape}")
    return params.with_weights(params.weights + learning_rate * grad)


def build_group(
    params: PolicyParams,
    case,
    conditioning,
    gold: int,
    cfg: CmarlConfig,
    rng: RngStream,
    vocab: Vocabulary,
    content: str = OPTION,
) -> RolloutGroup:
    """Sample G responses for one case and score them; generation sees only the prompt."""
    prompt = case.prompt() if hasattr(case, "prompt") else case
    key = case_index(prompt.id)
    responses = [
        sample_response(params, prompt, conditioning, rng.derive("rollout", [key, i]), cfg.temperature)
        for i in range(cfg.group_size)
    ]
    breakdowns = [total_reward(r.tokens, gold, vocab, content) for r in responses]
    rewards = np.array([b.total for b in breakdowns])
    return RolloutGroup(
        case_id=prompt.id,
        responses=tuple(responses),
        rewards=rewards,
        advantages=group_advantages(rewards, cfg.std_guard),
        old_logprobs=np.array([r.log_prob for r in responses]),
        format_rewards=np.array([b.format for b in breakdowns]),
        accuracy_rewards=np.array([b.accuracy for b in breakdowns]),
    )


def collect_groups(params, batch, cfg: CmarlConfig, rng: RngStream, vocab: Vocabulary, content: str = OPTION, threads: int = 1):
    """Rollout phase for a batch of (case, conditioning, gold) items."""
    if not batch:
        raise ConfigurationError("batch must be non-empty")
    items = list(enumerate(batch))

    def _one(item):
        b, (case, conditioning, gold) = item
        return build_group(params, case, conditioning, gold, cfg, rng.derive("batch", [b]), vocab, content)

    return ordered_map(_one, items, threads)


def update_from_groups(
    params: PolicyParams,
    ref_params: PolicyParams,
    batch,
    groups: Sequence[RolloutGroup],
    cfg: CmarlConfig,
    threads: int = 1,
) -> Tuple[PolicyParams, BatchMetrics]:
    """One ascent step on the batch-mean objective with pi_old = params."""
    old_params = params

    def _one(item):
        (case, conditioning, _gold), group = item
        prompt = case.prompt() if hasattr(case, "prompt") else case
        terms = objective_terms(params, old_params, ref_params, group, prompt, conditioning, cfg)
        grad = cmarl_gradient(params, old_params, ref_params, group, prompt, conditioning, cfg)
        return terms, grad

    results = ordered_map(_one, list(zip(batch, groups)), threads)
    grad = np.zeros(params.shape)
    for _terms, g in results:
        grad += g
    grad /= len(results)

    metrics = BatchMetrics(
        mean_reward=float(np.mean([g.rewards.mean() for g in groups])),
        mean_format=float(np.mean([g.format_rewards.mean() for g in groups])),
        mean_accuracy=float(np.mean([g.accuracy_rewards.mean() for g in groups])),
        mean_entropy=float(np.mean([t.entropy for t, _ in results])),
        mean_kl=float(np.mean([t.kl for t, _ in results])),
        grad_norm=float(np.linalg.norm(grad)),
        objective=float(np.mean([t.total(cfg.kl_beta, cfg.entropy_gamma) for t, _ in results])),
    )
    return ascent_step(params, grad, cfg.learning_rate), metrics


def train_on_batch(
    params: PolicyParams,
    ref_params: PolicyParams,
    batch,
    cfg: CmarlConfig,
    rng: RngStream,
    vocab: Vocabulary,
    content: str = OPTION,
    threads: int = 1,
) -> Tuple[PolicyParams, BatchMetrics]:
    """Snapshot pi_old, sample G rollouts per case, score, and take one ascent step."""
    groups = collect_groups(params, batch, cfg, rng, vocab, content, threads)
    new_params, metrics = update_from_groups(params, ref_params, batch, groups, cfg, threads)
    logger.debug(
        f"batch of {len(batch)}: reward={metrics.mean_reward:.4f} entropy={metrics.mean_entropy:.4f} "
        f"kl={metrics.mean_kl:.6f} |grad|={metrics.grad_norm:.4f}"
    )
    return new_params, metrics
