"""Rule-based rewards over the tag grammar.

A well-formed response is::

    <think> (non-tag)* </think> <answer> X </answer>

where X is a single option or specialty token and nothing follows the
closing tag. Format earns 0.5, a correct extracted answer earns 1; the two
are scored independently.
"""

from dataclasses import dataclass, field
from typing import Sequence

from .core import MALFORMED, Answer, ConfigurationError, Vocabulary, is_valid_answer

FORMAT_REWARD = 0.5
ACCURACY_REWARD = 1.0

OPTION = "option"
SPECIALTY = "specialty"
CONTENT_KINDS = (OPTION, SPECIALTY)


@dataclass(frozen=True)
class RewardBreakdown:
    format: float
    accuracy: float
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", self.format + self.accuracy)


def _check_kind(content: str):
    if content not in CONTENT_KINDS:
        raise ConfigurationError(f"content must be one of {CONTENT_KINDS}, got {content!r}")


def answer_span(tokens: Sequence[int], vocab: Vocabulary):
    """Bounds (start, end) of the first <answer> ... </answer> span with no tag inside, or None."""
    for start, token in enumerate(tokens):
        if token != Vocabulary.ANS_OPEN:
            continue
        for end in range(start + 1, len(tokens)):
            if tokens[end] == Vocabulary.ANS_CLOSE:
                return start, end
            if vocab.is_tag(tokens[end]):
                break
    return None


def parse_answer(tokens: Sequence[int], vocab: Vocabulary, content: str = OPTION) -> Answer:
    """Extract the answer of the requested kind, or MALFORMED."""
    _check_kind(content)
    span = answer_span(tokens, vocab)
    if span is None:
        return MALFORMED
    start, end = span
    if end - start != 2:
        return MALFORMED
    token = tokens[start + 1]
    if content == OPTION and vocab.is_option(token):
        return vocab.option_of(token)
    if content == SPECIALTY and vocab.is_specialty(token):
        return vocab.specialty_of(token)
    return MALFORMED


def format_reward(tokens: Sequence[int], vocab: Vocabulary) -> float:
    tokens = list(tokens)
    if len(tokens) < 5 or tokens[0] != Vocabulary.THINK_OPEN:
        return 0.0
    tail = tokens[-4:]
    if tail[0] != Vocabulary.THINK_CLOSE or tail[1] != Vocabulary.ANS_OPEN or tail[3] != Vocabulary.ANS_CLOSE:
        return 0.0
    if not vocab.is_content(tail[2]):
        return 0.0
    if any(vocab.is_tag(t) for t in tokens[1:-4]):
        return 0.0
    return FORMAT_REWARD


def accuracy_reward(parsed: Answer, gold_index: int) -> float:
    if not is_valid_answer(parsed):
        return 0.0
    return ACCURACY_REWARD if int(parsed) == gold_index else 0.0


def total_reward(tokens: Sequence[int], gold_index: int, vocab: Vocabulary, content: str = OPTION) -> RewardBreakdown:
    return RewardBreakdown(
        format_reward(tokens, vocab),
        accuracy_reward(parse_answer(tokens, vocab, content), gold_index),
    )
