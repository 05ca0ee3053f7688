"""
Deterministic random streams.

Every realization owns three independent Philox streams (envelope, fill, ray)
spawned from one 64-bit seed, so drawing more rays never moves the geometry and
workers never share a generator. Sweep seeds come from a SplitMix64 mix of
(global seed, sweep point, realization).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MASK64",
    "STREAM_KEYS",
    "RealizationStreams",
    "derive_seed",
    "spawn_streams",
    "splitmix64",
    "stream",
]

MASK64 = (1 << 64) - 1

# Spawn keys are part of the reproducibility contract; never renumber.
STREAM_KEYS: dict[str, int] = {"envelope": 0, "fill": 1, "ray": 2}


def splitmix64(value: int) -> int:
    """SplitMix64 finalizer over unsigned 64-bit integers."""
    z = (value + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _float_bits(value: float) -> int:
    # +0.0 folds -0.0 onto the same identity.
    return struct.unpack("<Q", struct.pack("<d", float(value) + 0.0))[0]


def derive_seed(global_seed: int, point_value: float, realization: int) -> int:
    """
    Per-realization seed.

    The sweep point enters through the bit pattern of its value rather than its
    position in the list, so adding a point leaves every other point untouched.
    """
    h = splitmix64(int(global_seed) & MASK64)
    h = splitmix64(h ^ _float_bits(point_value))
    return splitmix64(h ^ (int(realization) & MASK64))


def stream(seed: int, name: str, salt: int = 0) -> np.random.Generator:
    """Return the named Philox stream for ``seed``; a nonzero ``salt`` selects a sibling stream."""
    try:
        key = STREAM_KEYS[name]
    except KeyError as exc:
        raise KeyError(f"unknown stream '{name}' (expected one of {sorted(STREAM_KEYS)})") from exc
    seq = np.random.SeedSequence(int(seed) & MASK64, spawn_key=(key,) if not salt else (key, int(salt) & MASK64))
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class RealizationStreams:
    envelope: np.random.Generator
    fill: np.random.Generator
    ray: np.random.Generator


def spawn_streams(seed: int, ray_salt: int = 0) -> RealizationStreams:
    """Streams of one realization. ``ray_salt`` re-draws the ray lattice only."""
    return RealizationStreams(
        envelope=stream(seed, "envelope"),
        fill=stream(seed, "fill"),
        ray=stream(seed, "ray", ray_salt),
    )
