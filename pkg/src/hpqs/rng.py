"""Counter-based random streams keyed by (master seed, purpose label, indices).

Streams never depend on the order in which they are requested, so shot
sampling, noise trajectories and parameter-shift branches can be evaluated in
any order (or in parallel) and still reproduce bit-for-bit.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode()).digest()[:8], "little")


def stream(seed: int, label: str, *indices: int) -> np.random.Generator:
    """Return an independent Philox generator for ``(seed, label, *indices)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_label_key(label), *map(int, indices)))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, label: str, *indices: int) -> int:
    """Derive a 63-bit integer seed, for APIs that take an int rather than a generator."""
    return int(stream(seed, label, *indices).integers(0, 2**63 - 1))
