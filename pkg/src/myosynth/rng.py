"""Deterministic, purpose-keyed random streams.

Every random draw in the pipeline flows through a stream derived from
(master_seed, *tags) via SHA-256, feeding a Philox counter-based generator.
Streams for different (tag, instance) tuples are statistically independent
and reproducible regardless of evaluation order or thread count.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream(master_seed: int, *tags) -> np.random.Generator:
    """Return an independent Generator keyed by the master seed and tags.

    Tags may be strings or integers; they are canonicalized into a single
    byte string so that ("a", 1) and ("a1",) produce distinct streams.
    """
    h = hashlib.sha256()
    h.update(int(master_seed).to_bytes(8, "little", signed=False))
    for tag in tags:
        part = str(tag).encode("utf-8")
        h.update(len(part).to_bytes(4, "little"))
        h.update(part)
    key = int.from_bytes(h.digest()[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))
