"""Seed mixing and counter-based random streams.

Every random draw in the engine goes through a stream keyed by a node seed and
an attribute tag, so adding a new attribute never shifts the values drawn for
existing ones.
"""

import hashlib
import struct

import numpy as np

MASK64 = (1 << 64) - 1


def _digest(size: int, person: bytes, seed: int, parts: tuple[int | str, ...]) -> int:
    h = hashlib.blake2b(digest_size=size, person=person)
    h.update(struct.pack("<Q", seed & MASK64))
    for part in parts:
        if isinstance(part, str):
            encoded = part.encode("utf-8")
            h.update(b"s" + struct.pack("<I", len(encoded)) + encoded)
        else:
            h.update(b"i" + struct.pack("<Q", part & MASK64))
    return int.from_bytes(h.digest(), "little")


def mix_seed(seed: int, *parts: int | str) -> int:
    """Mix a 64-bit seed with integer/string parts into a new 64-bit seed."""
    return _digest(8, b"sne-mix", seed, parts)


def attribute_rng(seed: int, tag: str, *parts: int | str) -> np.random.Generator:
    """Return a Philox stream keyed by ``(seed, tag, *parts)``."""
    key = _digest(16, b"sne-attr", seed, (tag,) + parts)
    return np.random.Generator(np.random.Philox(key=key))
