"""Deterministic seeding and content hashing helpers."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_rng(seed: int, *labels) -> np.random.Generator:
    """Generator keyed by (seed, labels) via SHA-256, independent of call order.

    Python's builtin hash() is salted per process, so stream derivation goes
    through hashlib to stay reproducible across runs.
    """
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    words = [int.from_bytes(h.digest()[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence(words))


def content_hash(*arrays: np.ndarray) -> str:
    """SHA-256 hex digest over dtype, shape, and raw bytes of the arrays."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def format_float(x: float) -> str:
    """Decimal text with 17 significant digits; round-trips float64 exactly."""
    return format(float(x), ".17g")
