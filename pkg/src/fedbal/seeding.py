"""Deterministic seed derivation.

Child seeds are produced by folding each part through the splitmix64
finalizer::

    state = 0
    for part in parts:
        state = splitmix64(state XOR part)

String parts are first mapped to integers with CRC-32 of their UTF-8 bytes.
All arithmetic is modulo 2**64, so any language with unsigned 64-bit
integers reproduces the same child seeds.
"""

from __future__ import annotations

import zlib

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _as_int(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & MASK64


def derive_seed(*parts: int | str) -> int:
    """Fold ``parts`` into a 64-bit child seed."""
    state = 0
    for part in parts:
        state = splitmix64(state ^ _as_int(part))
    return state


def rng_for(*parts: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
