"""Splittable random streams.

Every stochastic stage derives its generator from (seed, *keys) so runs are
reproducible and per-query streams are independent of iteration order.
"""
from __future__ import annotations

import zlib

import numpy as np


def _as_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key)
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"stream key must be int or str, got {type(key).__name__}")


def stream(seed: int, *keys) -> np.random.Generator:
    entropy = [int(seed)] + [_as_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
