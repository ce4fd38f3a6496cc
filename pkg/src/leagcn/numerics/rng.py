"""Seeded random streams and Xavier initialization."""
from __future__ import annotations

import math
import zlib

import numpy as np


def stream(seed: int, *labels: str | int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by the run seed plus a label path.

    Distinct labels give independent streams, so adding or removing one
    consumer never shifts the draws seen by another.
    """
    words = [int(seed) & 0xFFFFFFFF]
    for label in labels:
        if isinstance(label, int):
            words.append(label & 0xFFFFFFFF)
        else:
            words.append(zlib.crc32(label.encode("utf-8")))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def fans(shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 1:
        return shape[0], shape[0]
    receptive = math.prod(shape[:-2])
    return shape[-2] * receptive, shape[-1] * receptive


def xavier_init(shape, seed: int, label: str = "") -> np.ndarray:
    shape = tuple(int(s) for s in shape)
    if not shape:
        raise ValueError("xavier_init needs at least one extent")
    if any(s <= 0 for s in shape):
        raise ValueError(f"xavier_init: zero extent in shape {shape}")
    fan_in, fan_out = fans(shape)
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return stream(seed, "init", label).uniform(-bound, bound, size=shape)
