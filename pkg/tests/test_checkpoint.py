"""Tests for binary policy checkpoints."""

import os
import struct

import numpy as np
import pytest

from cmarl.checkpoint import HEADER, read_checkpoint, write_checkpoint
from cmarl.core import RngStream, ShapeError, TruncatedCheckpointError, VersionMismatchError
from cmarl.policy import init_params


def _params():
    return init_params(17, 5, 4, RngStream(0, 0), max_length=12, scale=1.0)


def _written(tmp_path):
    path = str(tmp_path / "checkpoints" / "attending.ckpt")
    write_checkpoint(_params(), path)
    return path


class TestCheckpoint:
    """Test cases for checkpoint files."""

    def test_bitwise_round_trip(self, tmp_path):
        path = _written(tmp_path)
        params = _params()

        loaded = read_checkpoint(path, expected_shape=params.shape)

        assert loaded.weights.tobytes() == params.weights.tobytes()
        assert (loaded.feature_dim, loaded.conditioning_dim, loaded.max_length) == (5, 4, 12)
        assert os.path.getsize(path) == HEADER.size + 8 * 17 * (5 + 17 + 1 + 4)
        assert not os.path.exists(path + ".tmp")

    def test_header_fields(self, tmp_path):
        with open(_written(tmp_path), "rb") as f:
            fields = HEADER.unpack(f.read(HEADER.size))
        assert fields == (b"CMRL", 1, 0, 17, 5, 4, 27, 12)

    def test_bad_magic(self, tmp_path):
        path = _written(tmp_path)
        with open(path, "r+b") as f:
            f.write(b"XXXX")
        with pytest.raises(VersionMismatchError, match="magic"):
            read_checkpoint(path)

    def test_unknown_version(self, tmp_path):
        path = _written(tmp_path)
        with open(path, "r+b") as f:
            f.seek(4)
            f.write(struct.pack("<H", 7))
        with pytest.raises(VersionMismatchError, match="version 7"):
            read_checkpoint(path)

    @pytest.mark.parametrize("keep", [0, 10, HEADER.size, HEADER.size + 100])
    def test_truncated(self, tmp_path, keep):
        """Test files cut inside the header or the payload are rejected."""
        path = _written(tmp_path)
        with open(path, "rb") as f:
            data = f.read()
        with open(path, "wb") as f:
            f.write(data[:keep])
        with pytest.raises(TruncatedCheckpointError):
            read_checkpoint(path)

    def test_trailing_bytes(self, tmp_path):
        path = _written(tmp_path)
        with open(path, "ab") as f:
            f.write(b"\0" * 8)
        with pytest.raises(VersionMismatchError, match="trailing"):
            read_checkpoint(path)

    def test_inconsistent_header(self, tmp_path):
        path = _written(tmp_path)
        with open(path, "r+b") as f:
            f.seek(20)
            f.write(struct.pack("<I", 99))
        with pytest.raises(ShapeError, match="inconsistent"):
            read_checkpoint(path)

    def test_shape_mismatch(self, tmp_path):
        path = _written(tmp_path)
        with pytest.raises(ShapeError, match="does not match"):
            read_checkpoint(path, expected_shape=(17, 23))

    def test_overwrite_replaces(self, tmp_path):
        path = _written(tmp_path)
        other = _params().with_weights(np.zeros(_params().shape))
        write_checkpoint(other, path)

        assert np.all(read_checkpoint(path).weights == 0.0)
