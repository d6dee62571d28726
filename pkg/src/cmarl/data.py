"""Synthetic consultation task and its line-delimited dataset file.

File layout: the first line is a header object carrying the format version,
the hidden option-scoring weights and the specialty centroids; every further
line is one case record with sorted keys.
"""

import json
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Tuple

import numpy as np

from .core import (
    MALFORMED,
    NUM_SPECIALTIES,
    Case,
    ConfigurationError,
    DataError,
    RngStream,
    SpecialistReport,
    VersionMismatchError,
    default_options,
)
from .logger import get_logger

logger = get_logger(__name__)

DATASET_FORMAT = "cmarl-dataset"
DATASET_VERSION = 1
TRAIN = "train"
TEST = "test"


@dataclass
class DatasetFile:
    cases: List[Case]
    splits: Dict[str, str]
    hidden_weights: np.ndarray
    centroids: np.ndarray
    reports_by_case: Dict[str, Tuple[SpecialistReport, ...]] = field(default_factory=dict)
    s_by_case: Dict[str, Fraction] = field(default_factory=dict)

    def split(self, name: str) -> List[Case]:
        return [c for c in self.cases if self.splits[c.id] == name]

    @property
    def by_id(self) -> Dict[str, Case]:
        return {c.id: c for c in self.cases}

    @property
    def consulted(self) -> bool:
        return bool(self.reports_by_case)


def make_centroids(num_specialties: int, feature_dim: int, radius: float, rng: RngStream) -> np.ndarray:
    """Scaled basis vectors when there is room, random directions otherwise."""
    if feature_dim >= num_specialties:
        centroids = np.zeros((num_specialties, feature_dim))
        centroids[np.arange(num_specialties), np.arange(num_specialties)] = radius
        return centroids
    directions = rng.normal((num_specialties, feature_dim))
    return radius * directions / np.linalg.norm(directions, axis=1, keepdims=True)


def label_cases(features: np.ndarray, hidden_weights: np.ndarray) -> np.ndarray:
    """Gold option of each row: argmax of the hidden linear option scores."""
    return np.argmax(features @ hidden_weights.T, axis=1)


def generate_synthetic(config, rng: RngStream) -> DatasetFile:
    """Clustered features, specialty = cluster, gold option from a hidden linear rule."""
    total = config.train_size + config.test_size
    if config.train_size < 1 or config.test_size < 1:
        raise ConfigurationError("train and test sizes must be at least 1")
    centroids = make_centroids(NUM_SPECIALTIES, config.feature_dim, config.cluster_radius, rng.derive("centroids"))
    hidden_weights = rng.derive("hidden-weights").normal((config.num_options, config.feature_dim))
    specialties = rng.derive("specialties").integers(NUM_SPECIALTIES, total)
    noise = rng.derive("features").normal((total, config.feature_dim))
    features = noise + centroids[specialties]
    gold = label_cases(features, hidden_weights)
    options = default_options(config.num_options)

    cases = []
    splits = {}
    for i in range(total):
        case_id = f"case-{i:05d}"
        cases.append(Case(case_id, features[i], options, int(gold[i]), int(specialties[i])))
        splits[case_id] = TRAIN if i < config.train_size else TEST
    logger.info(f"Generated {config.train_size} train and {config.test_size} test cases")
    return DatasetFile(cases, splits, hidden_weights, centroids)


def _answer_out(answer):
    return None if answer is MALFORMED else int(answer)


def _answer_in(value):
    return MALFORMED if value is None else int(value)


def _record(dataset: DatasetFile, case: Case) -> dict:
    record = {
        "id": case.id,
        "features": [float(v) for v in case.features],
        "options": list(case.options),
        "gold_index": case.gold_index,
        "gold_specialty": case.gold_specialty,
        "split": dataset.splits[case.id],
    }
    reports = dataset.reports_by_case.get(case.id)
    if reports is not None:
        if case.id not in dataset.s_by_case:
            raise DataError("specialist answers without s", case.id)
        record["specialist_answers"] = [_answer_out(r.answer_index) for r in reports]
        record["routed_specialty"] = reports[0].specialty
        s = dataset.s_by_case[case.id]
        record["s"] = f"{s.numerator}/{s.denominator}"
    return record


def write_dataset(dataset: DatasetFile, path: str) -> None:
    """Write atomically: a crash leaves either the old file or the new one."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "hidden_weights": dataset.hidden_weights.tolist(),
        "centroids": dataset.centroids.tolist(),
    }
    lines = [json.dumps(header, sort_keys=True)]
    lines.extend(json.dumps(_record(dataset, case), sort_keys=True) for case in dataset.cases)
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        f.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_dataset(path: str) -> DatasetFile:
    if not os.path.exists(path):
        raise DataError(f"dataset file not found: {path}")
    with open(path) as f:
        lines = [line for line in f.read().splitlines() if line.strip()]
    if not lines:
        raise DataError(f"dataset file is empty: {path}")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DataError(f"unreadable dataset header in {path}: {e}") from e
    if header.get("format") != DATASET_FORMAT or header.get("version") != DATASET_VERSION:
        raise VersionMismatchError(
            f"{path}: expected {DATASET_FORMAT} v{DATASET_VERSION}, "
            f"got {header.get('format')} v{header.get('version')}"
        )

    cases, splits, reports_by_case, s_by_case = [], {}, {}, {}
    for number, line in enumerate(lines[1:], start=2):
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}:{number}: invalid record: {e}") from e
        case = Case(
            record["id"],
            record["features"],
            tuple(record["options"]),
            int(record["gold_index"]),
            int(record["gold_specialty"]),
        )
        if case.id in splits:
            raise DataError("duplicate case id", case.id)
        cases.append(case)
        splits[case.id] = record["split"]
        has_answers = "specialist_answers" in record
        if has_answers != ("s" in record):
            raise DataError("specialist_answers and s must be present together", case.id)
        if has_answers:
            specialty = int(record["routed_specialty"])
            reports_by_case[case.id] = tuple(
                SpecialistReport(i, specialty, _answer_in(a)) for i, a in enumerate(record["specialist_answers"])
            )
            s_by_case[case.id] = Fraction(record["s"])
    return DatasetFile(
        cases,
        splits,
        np.asarray(header["hidden_weights"], dtype=np.float64),
        np.asarray(header["centroids"], dtype=np.float64),
        reports_by_case,
        s_by_case,
    )


def nearest_centroid(features: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the closest centroid for each row of ``features``."""
    distances = np.linalg.norm(features[:, None, :] - centroids[None, :, :], axis=-1)
    return np.argmin(distances, axis=1)
