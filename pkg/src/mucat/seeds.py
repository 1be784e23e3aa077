"""Deterministic derivation of independent random streams.

Every stochastic routine takes (master seed, label, index) and hashes the
triple with SHA-256 into a numpy SeedSequence, so streams are independent
across tests, replica chunks, and runs, and never depend on scheduling or
on Python's per-process hash randomization.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream_seed", "stream_rng"]


def stream_seed(master: int, label: str, index: int = 0) -> np.random.SeedSequence:
    digest = hashlib.sha256(f"{int(master)}|{label}|{int(index)}".encode()).digest()
    entropy = int.from_bytes(digest[:16], "little")
    return np.random.SeedSequence(entropy)


def stream_rng(master: int, label: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(stream_seed(master, label, index))
