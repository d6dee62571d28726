"""Tests for the synthetic task and dataset files."""

import json
import os
from fractions import Fraction

import numpy as np
import pytest

from cmarl.config import RunConfig
from cmarl.core import MALFORMED, NUM_SPECIALTIES, ConfigurationError, DataError, SpecialistReport, VersionMismatchError
from cmarl.core import derive_stream
from cmarl.data import (
    TEST,
    TRAIN,
    generate_synthetic,
    label_cases,
    make_centroids,
    nearest_centroid,
    read_dataset,
    write_dataset,
)


def _small(seed=0, **overrides):
    values = dict(train_size=40, test_size=10)
    values.update(overrides)
    return generate_synthetic(RunConfig(**values), derive_stream(seed, "data"))


class TestGenerateSynthetic:
    """Test cases for the synthetic case generator."""

    def test_regeneration_is_byte_identical(self, tmp_path):
        """Test two generations from the same seed write identical files."""
        first, second = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_dataset(_small(), str(first))
        write_dataset(_small(), str(second))

        assert first.read_bytes() == second.read_bytes()

    def test_seed_changes_data(self):
        assert not np.array_equal(_small(0).cases[0].features, _small(1).cases[0].features)

    def test_labels_follow_hidden_rule(self):
        """Test every gold option is the argmax of the hidden option scores."""
        dataset = _small()
        features = np.array([c.features for c in dataset.cases])

        assert [c.gold_index for c in dataset.cases] == list(label_cases(features, dataset.hidden_weights))
        assert dataset.hidden_weights.shape == (4, 8)

    def test_splits(self):
        dataset = _small()

        assert len(dataset.split(TRAIN)) == 40
        assert len(dataset.split(TEST)) == 10
        assert dataset.split(TRAIN)[0].id == "case-00000"
        assert dataset.split(TEST)[0].id == "case-00040"
        assert not dataset.consulted

    def test_specialty_recoverable_from_features(self):
        """Test nearest-centroid classification recovers the gold specialty."""
        dataset = _small(train_size=1000, test_size=200)
        features = np.array([c.features for c in dataset.cases])
        predicted = nearest_centroid(features, dataset.centroids)

        accuracy = np.mean(predicted == [c.gold_specialty for c in dataset.cases])
        assert accuracy >= 0.99

    def test_sizes_validated(self):
        with pytest.raises(ConfigurationError):
            _small(test_size=0)


class TestCentroids:
    """Test cases for specialty centroids."""

    def test_basis_when_room(self):
        centroids = make_centroids(NUM_SPECIALTIES, 8, 5.0, derive_stream(0, "c"))

        assert centroids.shape == (NUM_SPECIALTIES, 8)
        assert np.array_equal(centroids[:, :NUM_SPECIALTIES], 5.0 * np.eye(NUM_SPECIALTIES))
        assert np.all(centroids[:, NUM_SPECIALTIES:] == 0.0)

    def test_random_directions_in_low_dimension(self):
        centroids = make_centroids(NUM_SPECIALTIES, 3, 5.0, derive_stream(0, "c"))

        assert centroids.shape == (NUM_SPECIALTIES, 3)
        assert np.allclose(np.linalg.norm(centroids, axis=1), 5.0)


class TestDatasetFile:
    """Test cases for reading and writing dataset files."""

    def test_round_trip(self, tmp_path):
        dataset = _small()
        path = str(tmp_path / "data" / "dataset.jsonl")
        write_dataset(dataset, path)

        loaded = read_dataset(path)

        assert [c.id for c in loaded.cases] == [c.id for c in dataset.cases]
        for before, after in zip(dataset.cases, loaded.cases):
            assert np.array_equal(before.features, after.features)
            assert (before.gold_index, before.gold_specialty, before.options) == \
                   (after.gold_index, after.gold_specialty, after.options)
        assert loaded.splits == dataset.splits
        assert np.array_equal(loaded.hidden_weights, dataset.hidden_weights)
        assert np.array_equal(loaded.centroids, dataset.centroids)
        assert not os.path.exists(path + ".tmp")

    def test_reports_round_trip(self, tmp_path):
        """Test specialist answers, MALFORMED included, and s survive the file."""
        dataset = _small()
        case_id = dataset.cases[0].id
        reports = (SpecialistReport(0, 4, 1), SpecialistReport(1, 4, MALFORMED), SpecialistReport(2, 4, 3))
        dataset.reports_by_case[case_id] = reports
        dataset.s_by_case[case_id] = Fraction(1, 3)
        path = str(tmp_path / "consulted.jsonl")
        write_dataset(dataset, path)

        loaded = read_dataset(path)

        assert loaded.consulted
        assert loaded.reports_by_case == {case_id: reports}
        assert loaded.reports_by_case[case_id][1].answer_index is MALFORMED
        assert loaded.s_by_case == {case_id: Fraction(1, 3)}

    def test_reports_without_s(self, tmp_path):
        dataset = _small()
        dataset.reports_by_case[dataset.cases[0].id] = (SpecialistReport(0, 0, 1),)
        with pytest.raises(DataError):
            write_dataset(dataset, str(tmp_path / "x.jsonl"))

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "dataset.jsonl"
        write_dataset(_small(), str(path))
        lines = path.read_text().splitlines()
        header = json.loads(lines[0])
        header["version"] = 2
        path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")

        with pytest.raises(VersionMismatchError, match="v2"):
            read_dataset(str(path))

    def test_duplicate_case(self, tmp_path):
        path = tmp_path / "dataset.jsonl"
        write_dataset(_small(), str(path))
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines + [lines[1]]) + "\n")

        with pytest.raises(DataError, match="duplicate"):
            read_dataset(str(path))

    def test_missing_and_empty(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            read_dataset(str(tmp_path / "missing.jsonl"))
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        with pytest.raises(DataError, match="empty"):
            read_dataset(str(empty))
