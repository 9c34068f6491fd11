"""Bit-exact binary I/O for per-frame feature matrices (HHAF format).

Layout: 16-byte header (magic ``HHAF``, version, T, D as little-endian
uint32) followed by T*D little-endian float32 values, row major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .datamodel import FeatureSequence

MAGIC = b"HHAF"
VERSION = 1
HEADER_SIZE = 16
_HEADER = struct.Struct("<4sIII")

# Reject hostile headers before allocating the payload buffer.
MAX_ELEMENTS = 1 << 28


class FeatureIOError(Exception):
    """Base class for HHAF format errors."""


class BadMagicError(FeatureIOError):
    pass


class BadVersionError(FeatureIOError):
    pass


class TruncatedPayloadError(FeatureIOError):
    pass


@dataclass(frozen=True)
class FeatureFileHeader:
    num_frames: int
    dim: int


def _parse_header(raw: bytes, path: str, max_elements: int) -> FeatureFileHeader:
    if len(raw) < HEADER_SIZE:
        raise TruncatedPayloadError(f"{path}: file shorter than the {HEADER_SIZE}-byte header")
    magic, version, num_frames, dim = _HEADER.unpack(raw[:HEADER_SIZE])
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise BadVersionError(f"{path}: unsupported version {version}")
    if num_frames < 1 or dim < 1:
        raise FeatureIOError(f"{path}: header declares empty matrix {num_frames}x{dim}")
    if num_frames * dim > max_elements:
        raise FeatureIOError(
            f"{path}: header declares {num_frames * dim} elements, cap is {max_elements}"
        )
    return FeatureFileHeader(num_frames, dim)


def read_header(path: str, max_elements: int = MAX_ELEMENTS) -> FeatureFileHeader:
    """Read and validate only the 16-byte header."""
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_SIZE)
    return _parse_header(raw, path, max_elements)


def read_features(path: str, max_elements: int = MAX_ELEMENTS) -> FeatureSequence:
    """Read a full HHAF file into a FeatureSequence (float32)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    header = _parse_header(raw, path, max_elements)
    expected = 4 * header.num_frames * header.dim
    payload = raw[HEADER_SIZE:]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(payload)} bytes, expected {expected}"
        )
    if len(payload) > expected:
        raise FeatureIOError(f"{path}: {len(payload) - expected} trailing bytes")
    values = np.frombuffer(payload, dtype="<f4").reshape(header.num_frames, header.dim)
    return FeatureSequence(values.astype(np.float32, copy=True))


def write_features(seq: FeatureSequence, path: str) -> int:
    """Write ``seq`` as an HHAF file; returns the number of bytes written."""
    values = np.ascontiguousarray(seq.values, dtype="<f4")
    num_frames, dim = values.shape
    header = _HEADER.pack(MAGIC, VERSION, num_frames, dim)
    payload = values.tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise FeatureIOError(f"{path}: write failed ({exc})") from exc
    return len(header) + len(payload)
