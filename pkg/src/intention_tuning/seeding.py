"""Labelled sub-seed derivation.

One integer seed drives a whole experiment. Each component draws from a
generator keyed by ``(seed, *labels)`` so that, e.g., two strategies share
data order and base weights and differ only where they are meant to.
"""

import hashlib

import numpy as np


def derive_seed(seed: int, *labels) -> int:
    key = "/".join([str(int(seed))] + [str(x) for x in labels]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


def derive_rng(seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *labels))
