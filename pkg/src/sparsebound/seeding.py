"""Splittable seed derivation.

Every random object is generated from a 64-bit seed. Child seeds are derived
from a parent seed plus a path of keys through :class:`numpy.random.SeedSequence`:
the parent seed is the entropy and the keys (integers, or strings hashed with
CRC-32) form the ``spawn_key``. A child seed depends only on ``(parent, keys)``,
so generation order and thread scheduling never change any stream.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["derive_seed", "key_to_int", "rng_from"]

_MASK64 = (1 << 64) - 1


def key_to_int(key: int | str) -> int:
    if isinstance(key, (bool, np.bool_)):
        raise TypeError("boolean seed keys are ambiguous")
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"seed keys must be non-negative, got {key}")
        return int(key)
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"unsupported seed key type {type(key).__name__}")


def derive_seed(seed: int, *keys: int | str) -> int:
    """Return the 64-bit child seed of ``seed`` along the path ``keys``."""
    seed = int(seed) & _MASK64
    ss = np.random.SeedSequence(seed, spawn_key=tuple(key_to_int(k) for k in keys))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return (int(hi) << 32) | int(lo)


def rng_from(seed: int, *keys: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys) if keys else int(seed) & _MASK64)
