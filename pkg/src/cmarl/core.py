"""Domain types, token vocabulary and seeded random streams shared by every module."""

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np

MASK64 = (1 << 64) - 1

SPECIALTIES = (
    "Pathologist",
    "Radiologist",
    "Surgeon",
    "Oncologist",
    "Endocrinologist",
    "Ophthalmologist",
    "Dermatologist",
)
NUM_SPECIALTIES = len(SPECIALTIES)
DEFAULT_NUM_OPTIONS = 4
DEFAULT_NUM_SPECIALISTS = 3
DEFAULT_FEATURE_DIM = 8
DEFAULT_MAX_LENGTH = 16
OPTION_LABELS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"

T = TypeVar("T")
R = TypeVar("R")


# --- errors -----------------------------------------------------------------

class CmarlError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(CmarlError, ValueError):
    """Invalid configuration value or incompatible argument."""


class ShapeError(ConfigurationError):
    """Array or parameter shapes do not agree."""


class NumericError(CmarlError, ArithmeticError):
    """Non-finite or out-of-domain numeric value.

    Attributes:
        term: name of the quantity that failed the check
    """

    def __init__(self, message: str, term: Optional[str] = None):
        super().__init__(message if term is None else f"{message} (term: {term})")
        self.term = term


class DataError(CmarlError, ValueError):
    """Dataset content is missing or inconsistent."""

    def __init__(self, message: str, case_id: Optional[str] = None):
        super().__init__(message if case_id is None else f"{message} (case: {case_id})")
        self.case_id = case_id


class CheckpointError(CmarlError):
    """A checkpoint or artifact file could not be read."""


class VersionMismatchError(CheckpointError):
    """File magic or format version does not match this release."""


class TruncatedCheckpointError(CheckpointError):
    """File ended before the declared payload."""


class PhaseError(CmarlError):
    """An experiment phase failed; partial artifacts are kept on disk."""

    def __init__(self, phase: str, cause: BaseException):
        super().__init__(f"phase '{phase}' failed: {cause}")
        self.phase = phase
        self.cause = cause


# --- answers ----------------------------------------------------------------

class _Malformed:
    """Singleton marking an answer that could not be extracted."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "MALFORMED"

    def __reduce__(self):
        return (_Malformed, ())


MALFORMED = _Malformed()

Answer = Union[int, _Malformed]


def is_valid_answer(value: Answer) -> bool:
    return value is not MALFORMED and isinstance(value, (int, np.integer))


# --- vocabulary -------------------------------------------------------------

@dataclass(frozen=True)
class Vocabulary:
    """Token inventory of the tag grammar.

    Layout is fixed for a configuration: the four tags, one token per answer
    option, one per specialty, then the filler tokens.
    """

    num_options: int = DEFAULT_NUM_OPTIONS
    num_fillers: int = 2
    tokens: Tuple[str, ...] = field(init=False)

    THINK_OPEN = 0
    THINK_CLOSE = 1
    ANS_OPEN = 2
    ANS_CLOSE = 3

    def __post_init__(self):
        if not 2 <= self.num_options <= len(OPTION_LABELS):
            raise ConfigurationError(f"num_options must be in [2, {len(OPTION_LABELS)}], got {self.num_options}")
        if self.num_fillers < 0:
            raise ConfigurationError(f"num_fillers must be non-negative, got {self.num_fillers}")
        tokens = ["<think>", "</think>", "<answer>", "</answer>"]
        tokens.extend(OPTION_LABELS[: self.num_options])
        tokens.extend(SPECIALTIES)
        tokens.extend(f"<f{i}>" for i in range(self.num_fillers))
        object.__setattr__(self, "tokens", tuple(tokens))

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def option_offset(self) -> int:
        return 4

    @property
    def specialty_offset(self) -> int:
        return 4 + self.num_options

    @property
    def filler_offset(self) -> int:
        return 4 + self.num_options + NUM_SPECIALTIES

    def option_token(self, index: int) -> int:
        if not 0 <= index < self.num_options:
            raise ConfigurationError(f"option index {index} out of range")
        return self.option_offset + index

    def specialty_token(self, index: int) -> int:
        if not 0 <= index < NUM_SPECIALTIES:
            raise ConfigurationError(f"specialty index {index} out of range")
        return self.specialty_offset + index

    def filler_token(self, index: int) -> int:
        return self.filler_offset + index

    def is_tag(self, token: int) -> bool:
        return 0 <= token < 4

    def is_option(self, token: int) -> bool:
        return self.option_offset <= token < self.specialty_offset

    def is_specialty(self, token: int) -> bool:
        return self.specialty_offset <= token < self.filler_offset

    def is_content(self, token: int) -> bool:
        return self.is_option(token) or self.is_specialty(token)

    def option_of(self, token: int) -> int:
        return token - self.option_offset

    def specialty_of(self, token: int) -> int:
        return token - self.specialty_offset

    def option_tokens(self) -> range:
        return range(self.option_offset, self.specialty_offset)

    def specialty_tokens(self) -> range:
        return range(self.specialty_offset, self.filler_offset)

    def index(self, name: str) -> int:
        return self.tokens.index(name)

    def decode(self, tokens: Iterable[int]) -> str:
        return " ".join(self.tokens[t] for t in tokens)


# --- cases ------------------------------------------------------------------

def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class CasePrompt:
    """What a generating agent may see of a case: no gold fields."""

    id: str
    features: np.ndarray
    options: Tuple[str, ...]


@dataclass(frozen=True, eq=False)
class Case:
    """One synthetic consultation item."""

    id: str
    features: np.ndarray
    options: Tuple[str, ...]
    gold_index: int
    gold_specialty: int

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen_array(self.features))
        object.__setattr__(self, "options", tuple(self.options))
        if self.features.ndim != 1:
            raise DataError("features must be a vector", self.id)
        if not np.all(np.isfinite(self.features)):
            raise DataError("features must be finite", self.id)
        if not 0 <= self.gold_index < len(self.options):
            raise DataError(f"gold_index {self.gold_index} outside [0, {len(self.options)})", self.id)
        if not 0 <= self.gold_specialty < NUM_SPECIALTIES:
            raise DataError(f"gold_specialty {self.gold_specialty} outside [0, {NUM_SPECIALTIES})", self.id)

    def prompt(self) -> CasePrompt:
        return CasePrompt(self.id, self.features, self.options)

    def with_gold(self, gold_index: int, gold_specialty: Optional[int] = None) -> "Case":
        return Case(
            self.id,
            self.features,
            self.options,
            gold_index,
            self.gold_specialty if gold_specialty is None else gold_specialty,
        )


def default_options(num_options: int = DEFAULT_NUM_OPTIONS) -> Tuple[str, ...]:
    return tuple(OPTION_LABELS[:num_options])


# --- responses --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Response:
    """A sampled token sequence with its cached per-step distributions."""

    tokens: Tuple[int, ...]
    step_dists: np.ndarray
    step_logprobs: np.ndarray
    terminated: bool

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        object.__setattr__(self, "step_dists", _frozen_array(self.step_dists))
        object.__setattr__(self, "step_logprobs", _frozen_array(self.step_logprobs))
        steps = len(self.tokens)
        if self.step_dists.ndim != 2 or self.step_dists.shape[0] != steps:
            raise ShapeError(f"step_dists must have {steps} rows, got shape {self.step_dists.shape}")
        if self.step_logprobs.shape != (steps,):
            raise ShapeError(f"step_logprobs must have length {steps}")
        if steps and np.max(np.abs(self.step_dists.sum(axis=1) - 1.0)) > 1e-9:
            raise NumericError("step distribution does not sum to 1", "step_dists")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def log_prob(self) -> float:
        return float(np.sum(self.step_logprobs))


# --- specialists and difficulty --------------------------------------------

@dataclass(frozen=True)
class SpecialistReport:
    specialist_id: int
    specialty: int
    answer_index: Answer

    def __post_init__(self):
        if self.specialist_id < 0:
            raise ConfigurationError(f"specialist_id must be non-negative, got {self.specialist_id}")
        if not 0 <= self.specialty < NUM_SPECIALTIES:
            raise ConfigurationError(f"specialty {self.specialty} out of range")

    @property
    def malformed(self) -> bool:
        return self.answer_index is MALFORMED


class Stratum(Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"

    @property
    def title(self) -> str:
        return self.value.capitalize()


STRATA = (Stratum.EASY, Stratum.MEDIUM, Stratum.HARD)


@dataclass(frozen=True)
class DifficultyLevel:
    """Curriculum level of a case, derived from the specialists' accuracy s."""

    level: Stratum
    s: Fraction

    def __post_init__(self):
        if not 0 <= self.s <= 1:
            raise ConfigurationError(f"s must be in [0, 1], got {self.s}")
        if self.level is not stage_of(self.s):
            raise ConfigurationError(f"level {self.level.value} inconsistent with s={self.s}")

    @classmethod
    def from_s(cls, s: Fraction) -> "DifficultyLevel":
        s = Fraction(s)
        return cls(stage_of(s), s)


def stage_of(s: Fraction) -> Stratum:
    if s == 1:
        return Stratum.EASY
    if s == 0:
        return Stratum.HARD
    return Stratum.MEDIUM


# --- random streams ---------------------------------------------------------

def _mix(run_seed: int, purpose: str, indices: Sequence[int]) -> int:
    key = f"{run_seed & MASK64}|{purpose}|{','.join(str(int(i)) for i in indices)}"
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class RngStream:
    """Deterministic random stream keyed by (seed, stream_id).

    A stream owns a stateful numpy Generator and must have a single consumer.
    """

    seed: int
    stream_id: int
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        sequence = np.random.SeedSequence([self.seed & MASK64, self.stream_id & MASK64])
        object.__setattr__(self, "generator", np.random.Generator(np.random.PCG64(sequence)))

    def uniform(self, size=None):
        return self.generator.random(size)

    def normal(self, size=None, scale: float = 1.0):
        return self.generator.normal(0.0, scale, size)

    def integers(self, high: int, size=None):
        return self.generator.integers(0, high, size)

    def choice(self, n: int, size: int) -> np.ndarray:
        """``min(size, n)`` distinct indices in [0, n), in draw order."""
        return self.generator.choice(n, size=min(size, n), replace=False)

    def derive(self, purpose: str, indices: Sequence[int] = ()) -> "RngStream":
        return derive_stream(self.seed, f"{self.stream_id}/{purpose}", indices)


def derive_stream(run_seed: int, purpose: str, indices: Sequence[int] = ()) -> RngStream:
    """Stream for a (run seed, purpose, index tuple) key; pure in its inputs."""
    return RngStream(int(run_seed) & MASK64, _mix(int(run_seed), purpose, indices))


def case_index(case_id: str) -> int:
    """Stable integer key for a case id, used in stream index tuples."""
    return int.from_bytes(hashlib.blake2b(case_id.encode("utf-8"), digest_size=8).digest(), "little")


# --- execution --------------------------------------------------------------

def ordered_map(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> List[R]:
    """Map ``fn`` over ``items``, optionally on a thread pool; results keep input order."""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
