"""Stable seed derivation shared by every random component."""

import hashlib

import numpy as np


def derive_seed(seed: int, *parts) -> int:
    """Hash ``seed`` and a purpose tag into a 63-bit sub-seed.

    The hash is independent of Python's per-process string hashing, so the
    same inputs give the same sub-seed in every process.
    """
    text = "|".join([str(int(seed))] + [str(p) for p in parts])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def rng_for(seed: int, *parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *parts))
