"""Consultation execution, majority-vote test-time scaling and evaluation."""

import json
import os
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .agents import (
    ARGMAX,
    Consultation,
    SpecialistProfile,
    attending_conditioning,
    consult_specialists,
    triage_select,
)
from .core import (
    MALFORMED,
    STRATA,
    Answer,
    ConfigurationError,
    DataError,
    RngStream,
    SpecialistReport,
    Stratum,
    Vocabulary,
    case_index,
    is_valid_answer,
    ordered_map,
    stage_of,
)
from .logger import get_logger
from .policy import PolicyParams, sample_response
from .rewards import OPTION, parse_answer

logger = get_logger(__name__)

REPORT_VERSION = 1
DEFAULT_TTS_SAMPLES = 3


@dataclass(frozen=True)
class Vote:
    answer: int
    malformed: bool = False


def majority_vote(answers: Sequence[Answer]) -> Vote:
    """Modal valid answer, ties to the lowest index; all-MALFORMED gives option 0 flagged."""
    if not answers:
        raise ConfigurationError("cannot vote over an empty answer list")
    counts = Counter(int(a) for a in answers if is_valid_answer(a))
    if not counts:
        return Vote(0, malformed=True)
    best = max(counts.values())
    return Vote(min(a for a, c in counts.items() if c == best))


def run_consultation(
    case,
    triage_params: Optional[PolicyParams],
    profiles: Sequence[SpecialistProfile],
    attending_params: PolicyParams,
    rng: RngStream,
    vocab: Vocabulary,
    n_samples: int = 1,
    temperature: float = 1.0,
    reports: Optional[Sequence[SpecialistReport]] = None,
) -> Consultation:
    """Triage, specialist reports, then N attending samples reduced by majority vote.

    With ``reports`` given the case may be a gold-free prompt; the triage choice
    is the department those reports came from.
    """
    if n_samples < 1:
        raise ConfigurationError(f"n_samples must be at least 1, got {n_samples}")
    key = case_index(case.id)
    if reports is None:
        if triage_params is None:
            raise ConfigurationError("either reports or triage parameters are required")
        choice = triage_select(triage_params, case, vocab, ARGMAX)
        reports = consult_specialists(case, profiles, choice, rng.seed)
    else:
        if not reports:
            raise DataError("empty specialist reports", case.id)
        choice = reports[0].specialty
    prompt = case.prompt() if hasattr(case, "prompt") else case
    conditioning = attending_conditioning(prompt, reports)
    responses = tuple(
        sample_response(attending_params, prompt, conditioning, rng.derive("attending", [key, n]), temperature)
        for n in range(n_samples)
    )
    answers = tuple(parse_answer(r.tokens, vocab, OPTION) for r in responses)
    vote = majority_vote(answers)
    return Consultation(prompt.id, choice, tuple(reports), responses, answers, vote.answer, vote.malformed)


@dataclass(frozen=True)
class EvalReport:
    overall_accuracy: float
    accuracy_by_difficulty: Dict[Stratum, float]
    n_by_difficulty: Dict[Stratum, int]
    tts_samples: int
    malformed_rate: float
    vote_fallback_rate: float = 0.0

    @property
    def total(self) -> int:
        return sum(self.n_by_difficulty.values())

    def to_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "overall_accuracy": self.overall_accuracy,
            "accuracy_by_difficulty": {s.value: self.accuracy_by_difficulty[s] for s in STRATA},
            "n_by_difficulty": {s.value: self.n_by_difficulty[s] for s in STRATA},
            "tts_samples": self.tts_samples,
            "malformed_rate": self.malformed_rate,
            "vote_fallback_rate": self.vote_fallback_rate,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        if data.get("version") != REPORT_VERSION:
            raise DataError(f"unsupported eval report version {data.get('version')!r}")
        return cls(
            float(data["overall_accuracy"]),
            {s: float(data["accuracy_by_difficulty"][s.value]) for s in STRATA},
            {s: int(data["n_by_difficulty"][s.value]) for s in STRATA},
            int(data["tts_samples"]),
            float(data["malformed_rate"]),
            float(data.get("vote_fallback_rate", 0.0)),
        )


def write_eval_report(report: EvalReport, path: str) -> None:
    """Sorted-key JSON, replaced atomically."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        f.write(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    os.replace(tmp, path)


def read_eval_report(path: str) -> EvalReport:
    if not os.path.exists(path):
        raise DataError(f"eval report not found: {path}")
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"unreadable eval report {path}: {e}") from e
    return EvalReport.from_dict(data)


def _aggregate(strata: Sequence[Stratum], correct: Sequence[bool], tts_samples: int, malformed_rate: float, fallback_rate: float) -> EvalReport:
    n_by = {s: 0 for s in STRATA}
    hits = {s: 0 for s in STRATA}
    for stratum, ok in zip(strata, correct):
        n_by[stratum] += 1
        hits[stratum] += int(ok)
    total = sum(n_by.values())
    accuracy = {s: (hits[s] / n_by[s] if n_by[s] else 0.0) for s in STRATA}
    return EvalReport(
        overall_accuracy=sum(hits.values()) / total if total else 0.0,
        accuracy_by_difficulty=accuracy,
        n_by_difficulty=n_by,
        tts_samples=tts_samples,
        malformed_rate=malformed_rate,
        vote_fallback_rate=fallback_rate,
    )


def _stratum_of(case_id: str, s_by_case: Mapping[str, Fraction]) -> Stratum:
    if case_id not in s_by_case:
        raise DataError("no difficulty value s", case_id)
    return stage_of(Fraction(s_by_case[case_id]))


def run_evaluation(
    test_cases,
    reports_by_case: Mapping[str, Sequence[SpecialistReport]],
    s_by_case: Mapping[str, Fraction],
    attending_params: PolicyParams,
    vocab: Vocabulary,
    n_samples: int,
    rng: RngStream,
    temperature: float = 1.0,
    threads: int = 1,
) -> Tuple[EvalReport, List[Consultation]]:
    """Evaluate on persisted reports; generation receives only gold-free prompts."""
    test_cases = list(test_cases)
    strata = [_stratum_of(case.id, s_by_case) for case in test_cases]
    for case in test_cases:
        if case.id not in reports_by_case:
            raise DataError("no specialist reports", case.id)

    def _one(case):
        return run_consultation(
            case.prompt(), None, (), attending_params, rng, vocab, n_samples, temperature, reports_by_case[case.id]
        )

    consultations = ordered_map(_one, test_cases, threads)
    correct = [c.final_answer == case.gold_index for c, case in zip(consultations, test_cases)]
    samples = sum(len(c.answers) for c in consultations)
    malformed = sum(1 for c in consultations for a in c.answers if a is MALFORMED)
    fallbacks = sum(1 for c in consultations if c.malformed)
    report = _aggregate(
        strata,
        correct,
        n_samples,
        malformed / samples if samples else 0.0,
        fallbacks / len(consultations) if consultations else 0.0,
    )
    logger.info(f"Evaluated {len(test_cases)} cases with N={n_samples}: accuracy {report.overall_accuracy:.4f}")
    return report, consultations


def evaluate(test_cases, reports_by_case, s_by_case, attending_params, vocab, n_samples, rng, temperature=1.0, threads=1) -> EvalReport:
    report, _ = run_evaluation(
        test_cases, reports_by_case, s_by_case, attending_params, vocab, n_samples, rng, temperature, threads
    )
    return report


def copy_baseline_accuracy(test_cases, reports_by_case, s_by_case) -> EvalReport:
    """Score the specialist-majority answer per stratum."""
    test_cases = list(test_cases)
    strata = [_stratum_of(case.id, s_by_case) for case in test_cases]
    votes = []
    for case in test_cases:
        if case.id not in reports_by_case:
            raise DataError("no specialist reports", case.id)
        votes.append(majority_vote([r.answer_index for r in reports_by_case[case.id]]))
    correct = [v.answer == case.gold_index for v, case in zip(votes, test_cases)]
    fallbacks = sum(1 for v in votes if v.malformed)
    return _aggregate(strata, correct, 0, 0.0, fallbacks / len(votes) if votes else 0.0)


def routing_accuracy(test_cases, triage_params: PolicyParams, vocab: Vocabulary, threads: int = 1) -> float:
    """Fraction of cases the triage agent sends to their gold specialty."""
    test_cases = list(test_cases)
    if not test_cases:
        raise ConfigurationError("routing accuracy needs at least one case")
    choices = ordered_map(lambda c: triage_select(triage_params, c.prompt(), vocab, ARGMAX), test_cases, threads)
    return float(np.mean([choice == case.gold_specialty for choice, case in zip(choices, test_cases)]))
