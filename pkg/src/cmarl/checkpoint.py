"""Versioned binary checkpoints for policy parameters.

Layout, little-endian::

    offset  size  field
    0       4     magic b"CMRL"
    4       2     format version (u16)
    6       2     reserved, zero (u16)
    8       4     V, vocabulary size (u32)
    12      4     F, feature dimension (u32)
    16      4     C, conditioning dimension (u32)
    20      4     F_ctx = F + V + 1 + C (u32)
    24      4     L_max (u32)
    28      8*V*F_ctx  weights, row-major IEEE-754 doubles
"""

import os
import struct
from typing import Optional, Tuple

import numpy as np

from .core import ShapeError, TruncatedCheckpointError, VersionMismatchError
from .policy import PolicyParams

MAGIC = b"CMRL"
VERSION = 1
HEADER = struct.Struct("<4sHHIIIII")


def write_checkpoint(params: PolicyParams, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    vocab_size, context_dim = params.shape
    header = HEADER.pack(
        MAGIC, VERSION, 0, vocab_size, params.feature_dim, params.conditioning_dim, context_dim, params.max_length
    )
    payload = np.ascontiguousarray(params.weights, dtype="<f8").tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(header + payload)
    os.replace(tmp, path)


def read_checkpoint(path: str, expected_shape: Optional[Tuple[int, int]] = None) -> PolicyParams:
    """Read a checkpoint; ``expected_shape`` is the (V, F_ctx) the caller's config implies."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < HEADER.size:
        raise TruncatedCheckpointError(f"{path}: {len(data)} bytes is shorter than the {HEADER.size}-byte header")
    magic, version, _reserved, vocab_size, feature_dim, cond_dim, context_dim, max_length = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise VersionMismatchError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatchError(f"{path}: checkpoint version {version}, this release reads {VERSION}")
    if context_dim != feature_dim + vocab_size + 1 + cond_dim:
        raise ShapeError(f"{path}: inconsistent header dimensions")
    expected_bytes = 8 * vocab_size * context_dim
    payload = data[HEADER.size :]
    if len(payload) < expected_bytes:
        raise TruncatedCheckpointError(f"{path}: payload has {len(payload)} of {expected_bytes} bytes")
    if len(payload) > expected_bytes:
        raise VersionMismatchError(f"{path}: {len(payload) - expected_bytes} unexpected trailing bytes")
    if expected_shape is not None and tuple(expected_shape) != (vocab_size, context_dim):
        raise ShapeError(f"{path}: checkpoint shape {(vocab_size, context_dim)} does not match configured {tuple(expected_shape)}")
    weights = np.frombuffer(payload, dtype="<f8").reshape(vocab_size, context_dim).astype(np.float64)
    return PolicyParams(weights, feature_dim, cond_dim, max_length)
