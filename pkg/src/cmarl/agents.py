"""The three roles of a consultation: triage agent, simulated specialists, attending agent."""

from dataclasses import dataclass
from typing import Callable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import (
    DEFAULT_NUM_SPECIALISTS,
    MALFORMED,
    NUM_SPECIALTIES,
    Answer,
    ConfigurationError,
    DataError,
    Response,
    RngStream,
    SpecialistReport,
    Vocabulary,
    case_index,
    derive_stream,
)
from .curriculum import (
    DEFAULT_ENTROPY_GAMMAS,
    DEFAULT_KL_BETAS,
    StagePlan,
    StratifiedDataset,
    build_mixed_plan,
    build_stage_plan,
)
from .grpo import BatchMetrics, CmarlConfig, train_on_batch
from .logger import get_logger
from .policy import (
    PolicyParams,
    context_features,
    greedy_response,
    init_params,
    sample_response,
    step_distribution,
)
from .rewards import OPTION, SPECIALTY, parse_answer

logger = get_logger(__name__)

StepCallback = Callable[[str, int, BatchMetrics], None]

ARGMAX = "argmax"
SAMPLE = "sample"

ROUTING_MODES = ("triage", "gold", "random")
ABLATIONS = ("curriculum", "mixed", "no_entropy")


@dataclass(frozen=True)
class SpecialistProfile:
    specialist_id: int
    in_specialty_accuracy: float = 0.8
    out_of_specialty_accuracy: float = 0.35
    malformed_rate: float = 0.02

    def __post_init__(self):
        for name in ("in_specialty_accuracy", "out_of_specialty_accuracy", "malformed_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1], got {value}")
        if self.in_specialty_accuracy < self.out_of_specialty_accuracy:
            raise ConfigurationError("in_specialty_accuracy must be at least out_of_specialty_accuracy")


def default_profiles(count: int = DEFAULT_NUM_SPECIALISTS, **competence) -> Tuple[SpecialistProfile, ...]:
    return tuple(SpecialistProfile(i, **competence) for i in range(count))


@dataclass(frozen=True, eq=False)
class Consultation:
    case_id: str
    triage_choice: int
    reports: Tuple[SpecialistReport, ...]
    attending_responses: Tuple[Response, ...]
    answers: Tuple[Answer, ...]
    final_answer: int
    malformed: bool

    @property
    def attending_response(self) -> Response:
        return self.attending_responses[0]

    def to_dict(self, vocab: Vocabulary) -> dict:
        return {
            "case_id": self.case_id,
            "triage_choice": self.triage_choice,
            "specialist_answers": [None if r.malformed else int(r.answer_index) for r in self.reports],
            "attending": [vocab.decode(r.tokens) for r in self.attending_responses],
            "answers": [None if a is MALFORMED else int(a) for a in self.answers],
            "final_answer": self.final_answer,
            "malformed": self.malformed,
        }


# --- format prior -----------------------------------------------------------

def format_prior(
    params: PolicyParams,
    vocab: Vocabulary,
    content: str = OPTION,
    strength: float = 3.0,
    penalty: float = 0.0,
    consensus: float = 0.0,
) -> PolicyParams:
    """Add tag-grammar transition weights to the previous-token block.

    Allowed successors of a grammar token gain ``strength``; every other
    successor loses ``penalty``. A policy with conditioning also gets the
    opening tag pushed through the conditioning block at the first step, and
    pulled back once any token exists. ``consensus`` links each option token
    to its own histogram entry, so the untrained attending leans towards the
    specialists' answers.
    """
    if vocab.size != params.vocab_size:
        raise ConfigurationError(f"vocabulary has {vocab.size} tokens, policy has {params.vocab_size}")
    if strength < 0 or penalty < 0 or consensus < 0:
        raise ConfigurationError("format prior weights must be non-negative")
    weights = np.array(params.weights)
    prev = params.feature_dim
    answers = vocab.option_tokens() if content == OPTION else vocab.specialty_tokens()
    fillers = range(vocab.filler_offset, vocab.size)

    def allow(previous: int, following):
        following = set(following)
        for token in range(vocab.size):
            weights[token, prev + previous] += strength if token in following else -penalty

    allow(Vocabulary.THINK_OPEN, [*fillers, Vocabulary.THINK_CLOSE])
    for filler in fillers:
        allow(filler, [*fillers, Vocabulary.THINK_CLOSE])
    allow(Vocabulary.THINK_CLOSE, [Vocabulary.ANS_OPEN])
    allow(Vocabulary.ANS_OPEN, answers)
    for token in answers:
        allow(token, [Vocabulary.ANS_CLOSE])

    if params.conditioning_dim:
        cond = params.feature_dim + params.vocab_size + 1
        opening = strength + penalty
        weights[Vocabulary.THINK_OPEN, cond:] += opening
        weights[Vocabulary.THINK_OPEN, prev : prev + params.vocab_size] -= 2 * opening
        if consensus and content == OPTION:
            for m in range(min(params.conditioning_dim, vocab.num_options)):
                weights[vocab.option_token(m), cond + m] += consensus
    return params.with_weights(weights)


# --- triage -----------------------------------------------------------------

def answer_slot_distribution(params: PolicyParams, case, tokens: Sequence[int], temperature: float = 1.0) -> np.ndarray:
    """Next-token distribution right after the first <answer> tag (or at the canonical slot)."""
    tokens = list(tokens)
    position = 3
    if Vocabulary.ANS_OPEN in tokens:
        position = tokens.index(Vocabulary.ANS_OPEN) + 1
    if position >= params.max_length:
        position = 3
    ctx = context_features(case, None, Vocabulary.ANS_OPEN, position, params.max_length, params.vocab_size, 0)
    return step_distribution(params, ctx, temperature)


def triage_select(
    params: PolicyParams,
    case,
    vocab: Vocabulary,
    mode: str = ARGMAX,
    rng: Optional[RngStream] = None,
    temperature: float = 1.0,
) -> int:
    """Specialty index chosen by the triage agent for ``case``."""
    prompt = case.prompt() if hasattr(case, "prompt") else case
    if mode == ARGMAX:
        response = greedy_response(params, prompt, None, temperature)
    elif mode == SAMPLE:
        if rng is None:
            raise ConfigurationError("sample mode needs a random stream")
        response = sample_response(params, prompt, None, rng, temperature)
    else:
        raise ConfigurationError(f"unknown triage mode {mode!r}")
    choice = parse_answer(response.tokens, vocab, SPECIALTY)
    if choice is not MALFORMED:
        return int(choice)
    dist = answer_slot_distribution(params, prompt, response.tokens, temperature)
    fallback = int(np.argmax(dist[vocab.specialty_offset : vocab.filler_offset]))
    logger.debug(f"Triage answer malformed for {prompt.id}; falling back to specialty {fallback}")
    return fallback


def route(case, triage_params: Optional[PolicyParams], vocab: Vocabulary, mode: str = "triage", rng: Optional[RngStream] = None) -> int:
    """Department a case is sent to under a routing mode."""
    if mode == "triage":
        if triage_params is None:
            raise ConfigurationError("triage routing needs triage parameters")
        return triage_select(triage_params, case, vocab, ARGMAX)
    if mode == "gold":
        return int(case.gold_specialty)
    if mode == "random":
        if rng is None:
            raise ConfigurationError("random routing needs a random stream")
        return int(rng.integers(NUM_SPECIALTIES))
    raise ConfigurationError(f"unknown routing mode {mode!r}; expected one of {ROUTING_MODES}")


def _batches(ids: Sequence, batch_size: int, rng: RngStream, step: int) -> List:
    picked = rng.derive("select", [step]).choice(len(ids), batch_size)
    return [ids[int(i)] for i in picked]


def train_triage(
    dataset,
    cfg: CmarlConfig,
    rng: RngStream,
    vocab: Vocabulary,
    steps: int,
    batch_size: int = 32,
    initial: Optional[PolicyParams] = None,
    on_step: Optional[StepCallback] = None,
    threads: int = 1,
) -> PolicyParams:
    """Single-stage GRPO on routing; the reward checks the answer against gold_specialty."""
    dataset = list(dataset)
    if not dataset:
        raise ConfigurationError("triage dataset must be non-empty")
    if steps < 0:
        raise ConfigurationError(f"steps must be non-negative, got {steps}")
    if initial is None:
        raise ConfigurationError("train_triage needs initial parameters (see init_triage)")
    params = initial
    ref_params = initial
    for step in range(steps):
        cases = _batches(dataset, batch_size, rng, step)
        batch = [(case, None, case.gold_specialty) for case in cases]
        params, metrics = train_on_batch(
            params, ref_params, batch, cfg, rng.derive("triage", [step]), vocab, SPECIALTY, threads
        )
        if on_step is not None:
            on_step("triage", step, metrics)
    return params


def init_triage(vocab: Vocabulary, feature_dim: int, max_length: int, rng: RngStream, scale: float = 0.01, strength: float = 3.0) -> PolicyParams:
    params = init_params(vocab.size, feature_dim, 0, rng, max_length, scale)
    return format_prior(params, vocab, SPECIALTY, strength)


# --- specialists ------------------------------------------------------------

def specialist_answer(profile: SpecialistProfile, case, assigned_specialty: int, rng: RngStream) -> SpecialistReport:
    """One specialist opinion drawn from the competence profile."""
    if rng.uniform() < profile.malformed_rate:
        return SpecialistReport(profile.specialist_id, assigned_specialty, MALFORMED)
    accuracy = (
        profile.in_specialty_accuracy
        if assigned_specialty == case.gold_specialty
        else profile.out_of_specialty_accuracy
    )
    if rng.uniform() < accuracy:
        return SpecialistReport(profile.specialist_id, assigned_specialty, int(case.gold_index))
    wrong = int(rng.integers(len(case.options) - 1))
    if wrong >= case.gold_index:
        wrong += 1
    return SpecialistReport(profile.specialist_id, assigned_specialty, wrong)


def consult_specialists(case, profiles: Sequence[SpecialistProfile], assigned_specialty: int, run_seed: int) -> Tuple[SpecialistReport, ...]:
    """Reports of every specialist, each on its own (seed, case, specialist) stream."""
    ids = sorted(p.specialist_id for p in profiles)
    if ids != list(range(len(profiles))):
        raise ConfigurationError(f"specialist ids must be 0..{len(profiles) - 1} once each, got {ids}")
    key = case_index(case.id)
    return tuple(
        specialist_answer(p, case, assigned_specialty, derive_stream(run_seed, "specialist", [key, p.specialist_id]))
        for p in profiles
    )


# --- attending --------------------------------------------------------------

def attending_conditioning(case, reports: Sequence[SpecialistReport]) -> np.ndarray:
    """Histogram of specialist answers over the options, scaled by 1/e."""
    if not reports:
        raise ConfigurationError("at least one specialist report is required")
    histogram = np.zeros(len(case.options))
    for report in reports:
        if not report.malformed:
            histogram[int(report.answer_index)] += 1.0
    return histogram / len(reports)


def init_attending(
    vocab: Vocabulary,
    feature_dim: int,
    max_length: int,
    rng: RngStream,
    scale: float = 0.01,
    strength: float = 3.0,
    penalty: float = 20.0,
    consensus: float = 1.0,
) -> PolicyParams:
    """Small random weights plus the grammar prior and the specialist-consensus prior.

    The histogram enters with |h|^2 <= 1 against roughly 30 for the features at
    the default cluster radius, so
    its weights move far slower under training; ``consensus`` seeds them.
    """
    params = init_params(vocab.size, feature_dim, vocab.num_options, rng, max_length, scale)
    return format_prior(params, vocab, OPTION, strength, penalty, consensus)


def copy_baseline_policy(vocab: Vocabulary, feature_dim: int, max_length: int) -> PolicyParams:
    """Deterministic attending that answers the specialist majority, ties to the lowest option.

    Needs at least one valid report: with an empty histogram the first step is uniform.
    """
    num_options = vocab.num_options
    weights = np.zeros((vocab.size, feature_dim + vocab.size + 1 + num_options))
    prev = feature_dim
    cond = feature_dim + vocab.size + 1
    weights[Vocabulary.THINK_OPEN, cond:] = 600.0
    weights[Vocabulary.THINK_OPEN, prev : prev + vocab.size] = -2000.0
    weights[Vocabulary.THINK_CLOSE, prev + Vocabulary.THINK_OPEN] = 2000.0
    weights[Vocabulary.ANS_OPEN, prev + Vocabulary.THINK_CLOSE] = 2000.0
    for m in range(num_options):
        token = vocab.option_token(m)
        weights[token, prev + Vocabulary.ANS_OPEN] = 1000.0 - 10.0 * m
        weights[token, cond + m] = 300.0
        weights[Vocabulary.ANS_CLOSE, prev + token] = 2000.0
    return PolicyParams(weights, feature_dim, num_options, max_length)


def plan_for_ablation(
    strata: StratifiedDataset,
    ablation: str,
    step_budget: int,
    entropy_gammas: Sequence[float] = DEFAULT_ENTROPY_GAMMAS,
    kl_betas: Sequence[float] = DEFAULT_KL_BETAS,
    learning_rates=0.05,
    rng: Optional[RngStream] = None,
) -> StagePlan:
    if ablation == "curriculum":
        return build_stage_plan(strata, step_budget, entropy_gammas, kl_betas, learning_rates)
    if ablation == "no_entropy":
        return build_stage_plan(strata, step_budget, (0.0, 0.0, 0.0), kl_betas, learning_rates)
    if ablation == "mixed":
        rate = learning_rates if isinstance(learning_rates, (int, float)) else list(learning_rates)[1]
        order = None
        if rng is not None:
            ids = strata.all_ids
            order = [ids[int(i)] for i in rng.derive("mixed-order").choice(len(ids), len(ids))]
        return build_mixed_plan(strata, step_budget, entropy_gammas[1], kl_betas[1], rate, order)
    raise ConfigurationError(f"unknown ablation {ablation!r}; expected one of {ABLATIONS}")


def train_attending(
    plan: StagePlan,
    cases_by_id: Mapping,
    reports_by_case: Mapping[str, Sequence[SpecialistReport]],
    cfg: CmarlConfig,
    rng: RngStream,
    vocab: Vocabulary,
    initial: PolicyParams,
    batch_size: int = 32,
    on_step: Optional[StepCallback] = None,
    threads: int = 1,
) -> PolicyParams:
    """Run the plan's stages in order; each stage re-anchors the KL reference at its start."""
    params = initial
    for stage in plan:
        if not stage.steps:
            continue
        missing = [cid for cid in stage.case_ids if cid not in reports_by_case]
        if missing:
            raise DataError("no specialist reports", missing[0])
        ref_params = params
        stage_cfg = cfg.with_stage(stage.entropy_gamma, stage.kl_beta, stage.learning_rate)
        stage_rng = rng.derive(stage.name)
        logger.info(
            f"Stage {stage.name}: {stage.steps} steps on {len(stage.case_ids)} cases "
            f"(gamma={stage.entropy_gamma}, beta={stage.kl_beta})"
        )
        for step in range(stage.steps):
            ids = _batches(stage.case_ids, batch_size, stage_rng, step)
            batch = []
            for case_id in ids:
                case = cases_by_id[case_id]
                batch.append((case, attending_conditioning(case, reports_by_case[case_id]), case.gold_index))
            params, metrics = train_on_batch(
                params, ref_params, batch, stage_cfg, stage_rng.derive("update", [step]), vocab, OPTION, threads
            )
            if on_step is not None:
                on_step(stage.phase, step, metrics)
    return params
