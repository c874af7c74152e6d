"""Deterministic RNG streams and weight-init helpers.

Every random draw in the package flows through ``seeded_rng`` so that a
run is reproducible from a single integer seed plus a short purpose tag.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _as_word(part) -> int:
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "little")
    return int(part) & 0xFFFFFFFF


def seeded_rng(*parts) -> np.random.Generator:
    """Generator keyed on a tuple of integers and/or short tag strings."""
    if not parts:
        raise ValueError("seeded_rng: need at least one seed part")
    return np.random.default_rng(np.random.SeedSequence([_as_word(p) for p in parts]))


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
    """Normal draw with resampling outside ``bound`` standard units."""
    x = rng.standard_normal(shape)
    while True:
        bad = np.abs(x) > bound
        if not bad.any():
            break
        x[bad] = rng.standard_normal(int(bad.sum()))
    return x * std


def normal_init(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return rng.standard_normal(shape) * std
