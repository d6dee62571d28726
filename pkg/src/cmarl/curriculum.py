"""Difficulty stratification by specialist accuracy and the staged training schedule."""

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

from .core import (
    STRATA,
    ConfigurationError,
    DataError,
    SpecialistReport,
    Stratum,
    stage_of,
)
from .logger import get_logger

logger = get_logger(__name__)

DEFAULT_ENTROPY_GAMMAS = (1e-4, 5e-3, 3e-2)
DEFAULT_KL_BETAS = (1e-3, 4e-3, 1e-2)
MIXED = "mixed"


def specialist_accuracy(reports: Sequence[SpecialistReport], gold_index: int) -> Fraction:
    """Fraction of reports whose answer is gold; MALFORMED counts as wrong."""
    if not reports:
        raise ConfigurationError("at least one specialist report is required")
    correct = sum(1 for r in reports if not r.malformed and int(r.answer_index) == gold_index)
    return Fraction(correct, len(reports))


@dataclass(frozen=True)
class StratifiedDataset:
    easy: Tuple[str, ...]
    medium: Tuple[str, ...]
    hard: Tuple[str, ...]
    s_by_case: Dict[str, Fraction] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("easy", "medium", "hard"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        ids = self.easy + self.medium + self.hard
        if len(set(ids)) != len(ids):
            raise DataError("strata overlap")
        if set(ids) != set(self.s_by_case):
            raise DataError("strata do not cover the s map exactly")
        for stratum in STRATA:
            for case_id in self.ids(stratum):
                if stage_of(self.s_by_case[case_id]) is not stratum:
                    raise DataError(f"s={self.s_by_case[case_id]} does not belong to {stratum.value}", case_id)

    def ids(self, stratum: Stratum) -> Tuple[str, ...]:
        return getattr(self, stratum.value)

    def counts(self) -> Dict[Stratum, int]:
        return {stratum: len(self.ids(stratum)) for stratum in STRATA}

    @property
    def all_ids(self) -> Tuple[str, ...]:
        return self.easy + self.medium + self.hard


def stratify(cases, reports_by_case: Mapping[str, Sequence[SpecialistReport]], e: int) -> StratifiedDataset:
    """Partition cases into easy (s=1), medium (0<s<1) and hard (s=0), keeping input order."""
    buckets: Dict[Stratum, List[str]] = {stratum: [] for stratum in STRATA}
    s_by_case: Dict[str, Fraction] = {}
    for case in cases:
        reports = reports_by_case.get(case.id)
        if reports is None:
            raise DataError("no specialist reports", case.id)
        if len(reports) != e:
            raise DataError(f"expected {e} specialist reports, got {len(reports)}", case.id)
        ids = sorted(r.specialist_id for r in reports)
        if ids != list(range(e)):
            raise DataError(f"specialist ids must be 0..{e - 1} once each, got {ids}", case.id)
        s = specialist_accuracy(reports, case.gold_index)
        s_by_case[case.id] = s
        buckets[stage_of(s)].append(case.id)
    strata = StratifiedDataset(
        buckets[Stratum.EASY], buckets[Stratum.MEDIUM], buckets[Stratum.HARD], s_by_case
    )
    counts = strata.counts()
    logger.info(
        f"Stratified {len(s_by_case)} cases: easy={counts[Stratum.EASY]} "
        f"medium={counts[Stratum.MEDIUM]} hard={counts[Stratum.HARD]}"
    )
    return strata


@dataclass(frozen=True)
class Stage:
    name: str
    case_ids: Tuple[str, ...]
    entropy_gamma: float
    kl_beta: float
    steps: int
    learning_rate: float

    def __post_init__(self):
        object.__setattr__(self, "case_ids", tuple(self.case_ids))
        if self.entropy_gamma < 0 or self.kl_beta < 0:
            raise ConfigurationError(f"stage {self.name}: coefficients must be non-negative")
        if self.steps < 0:
            raise ConfigurationError(f"stage {self.name}: steps must be non-negative")
        if self.steps and not self.case_ids:
            raise ConfigurationError(f"stage {self.name}: steps scheduled on an empty dataset")

    @property
    def phase(self) -> str:
        return f"attending-{self.name}"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "case_ids": list(self.case_ids),
            "entropy_gamma": self.entropy_gamma,
            "kl_beta": self.kl_beta,
            "steps": self.steps,
            "learning_rate": self.learning_rate,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Stage":
        return cls(
            data["name"],
            tuple(data["case_ids"]),
            float(data["entropy_gamma"]),
            float(data["kl_beta"]),
            int(data["steps"]),
            float(data["learning_rate"]),
        )


@dataclass(frozen=True)
class StagePlan:
    """Ordered training stages; a curriculum plan runs Easy, Medium, Hard."""

    stages: Tuple[Stage, ...]

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        names = [s.name for s in self.stages]
        if len(names) == 3 and names != [s.value for s in STRATA]:
            raise ConfigurationError(f"curriculum stages must run easy, medium, hard; got {names}")

    @property
    def total_steps(self) -> int:
        return sum(s.steps for s in self.stages)

    def __iter__(self) -> Iterator[Stage]:
        return iter(self.stages)

    def stage_at(self, step: int) -> Tuple[Stage, int]:
        """Stage active at global ``step`` and the step index within it."""
        if not 0 <= step < self.total_steps:
            raise ConfigurationError(f"step {step} outside plan of {self.total_steps} steps")
        for stage in self.stages:
            if step < stage.steps:
                return stage, step
            step -= stage.steps
        raise AssertionError("unreachable")

    def to_dict(self) -> dict:
        return {"stages": [s.to_dict() for s in self.stages]}

    @classmethod
    def from_dict(cls, data: dict) -> "StagePlan":
        return cls(tuple(Stage.from_dict(s) for s in data["stages"]))


def split_budget(sizes: Sequence[int], step_budget: int) -> List[int]:
    """Equal split over non-empty datasets, remainder to the last of them."""
    if step_budget < 0:
        raise ConfigurationError(f"step budget must be non-negative, got {step_budget}")
    active = [i for i, size in enumerate(sizes) if size > 0]
    steps = [0] * len(sizes)
    if not active:
        return steps
    share, remainder = divmod(step_budget, len(active))
    for i in active:
        steps[i] = share
    steps[active[-1]] += remainder
    return steps


def _triple(values: Union[float, Sequence[float]], name: str) -> Tuple[float, float, float]:
    if isinstance(values, (int, float)):
        return (float(values),) * 3
    values = tuple(float(v) for v in values)
    if len(values) != 3:
        raise ConfigurationError(f"{name} needs three values (easy, medium, hard), got {len(values)}")
    return values


def build_stage_plan(
    strata: StratifiedDataset,
    step_budget: int,
    entropy_gammas: Sequence[float] = DEFAULT_ENTROPY_GAMMAS,
    kl_betas: Sequence[float] = DEFAULT_KL_BETAS,
    learning_rates: Union[float, Sequence[float]] = 0.05,
) -> StagePlan:
    gammas = _triple(entropy_gammas, "entropy_gammas")
    betas = _triple(kl_betas, "kl_betas")
    rates = _triple(learning_rates, "learning_rates")
    sizes = [len(strata.ids(s)) for s in STRATA]
    steps = split_budget(sizes, step_budget)
    stages = tuple(
        Stage(stratum.value, strata.ids(stratum), gammas[i], betas[i], steps[i], rates[i])
        for i, stratum in enumerate(STRATA)
    )
    for stage in stages:
        if not stage.case_ids:
            logger.info(f"Stage {stage.name} skipped (no cases)")
    return StagePlan(stages)


def build_mixed_plan(
    strata: StratifiedDataset,
    step_budget: int,
    entropy_gamma: float,
    kl_beta: float,
    learning_rate: float = 0.05,
    case_order: Optional[Sequence[str]] = None,
) -> StagePlan:
    """Single stage over the pooled strata, the no-curriculum ablation."""
    if step_budget < 0:
        raise ConfigurationError(f"step budget must be non-negative, got {step_budget}")
    ids = tuple(case_order) if case_order is not None else strata.all_ids
    return StagePlan((Stage(MIXED, ids, entropy_gamma, kl_beta, step_budget if ids else 0, learning_rate),))
