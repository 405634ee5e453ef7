"""Derivation of independent seeds from one run seed."""
from __future__ import annotations

import hashlib

SEED_MAX = 2 ** 64 - 1


def derive_seed(seed: int, tag: str) -> int:
    """64-bit seed from a run seed and a purpose tag, stable across platforms."""
    if not 0 <= int(seed) <= SEED_MAX:
        raise ValueError("seed must be an unsigned 64-bit integer")
    h = hashlib.blake2b(int(seed).to_bytes(8, "little") + tag.encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little")
