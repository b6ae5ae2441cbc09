"""Versioned little-endian binary format for mode bases and operators.

Layout: 4-byte magic ``MCHB``, uint32 format version, uint32 record kind,
then a kind-specific payload of uint64 sizes followed by float64 data.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MCHB"
VERSION = 1
KIND_MODES = 1
KIND_OPERATOR = 2

_HEADER = struct.Struct("<4sII")


def _write(path, kind, sizes, floats, arrays):
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, kind))
        fh.write(struct.pack(f"<{len(sizes)}Q", *sizes))
        fh.write(struct.pack(f"<{len(floats)}d", *floats))
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_header(fh, kind):
    magic, version, got = _HEADER.unpack(fh.read(_HEADER.size))
    if magic != MAGIC:
        raise ValueError("not a microchannel cache file")
    if version != VERSION:
        raise ValueError(f"unsupported cache version {version}")
    if got != kind:
        raise ValueError(f"cache record kind {got}, expected {kind}")


def write_modes(path, length: float, energies: np.ndarray, vectors: np.ndarray) -> None:
    n_modes, points = vectors.shape
    _write(path, KIND_MODES, (points, n_modes), (length,), (energies, vectors))


def read_modes(path):
    with open(Path(path), "rb") as fh:
        _read_header(fh, KIND_MODES)
        points, n_modes = struct.unpack("<2Q", fh.read(16))
        (length,) = struct.unpack("<d", fh.read(8))
        energies = np.frombuffer(fh.read(8 * n_modes), dtype="<f8").astype(float)
        vectors = np.frombuffer(fh.read(8 * n_modes * points), dtype="<f8")
    return length, energies, vectors.reshape(n_modes, points).astype(float)


def write_operator(path, matrix) -> None:
    a = np.asarray(matrix.toarray() if hasattr(matrix, "toarray") else matrix, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("operator must be a square matrix")
    _write(path, KIND_OPERATOR, (a.shape[0],), (), (a.real, a.imag))


def read_operator(path) -> np.ndarray:
    with open(Path(path), "rb") as fh:
        _read_header(fh, KIND_OPERATOR)
        (dim,) = struct.unpack("<Q", fh.read(8))
        re = np.frombuffer(fh.read(8 * dim * dim), dtype="<f8").reshape(dim, dim)
        im = np.frombuffer(fh.read(8 * dim * dim), dtype="<f8").reshape(dim, dim)
    return re + 1j * im
