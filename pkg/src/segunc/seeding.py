"""Deterministic seed derivation.

Random streams are keyed by ``(seed, *tags)`` rather than drawn from a shared
generator, so results do not depend on the order in which patients or
measures are processed.
"""
import hashlib

import numpy as np


def derive_seed(seed, *tags):
    """Return a 64-bit integer seed from a base seed and string tags."""
    h = hashlib.sha256(str(int(seed)).encode())
    for tag in tags:
        h.update(b"\x00")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(seed, *tags):
    return np.random.default_rng(derive_seed(seed, *tags))
