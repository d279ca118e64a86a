"""Seed derivation for independent, replayable random streams.

Every stream is keyed by ``(race index, purpose tag, bettor id)`` under a
master seed.  The key is fed to :class:`numpy.random.SeedSequence` as its
spawn key, so streams never overlap and do not depend on the order in
which races or bettors are processed.
"""
from __future__ import annotations

import numpy as np

PURPOSES = {
    "pool": 0,      # competitor parameter draw
    "race": 1,      # per-tick race noise
    "agent": 2,     # bettor decisions and cadence
    "rollout": 3,   # private RP rollouts
    "split": 4,
    "cv": 5,
    "boost": 6,
}


def derive_seed(master: int, race_index: int, purpose: str, bettor_id: int = 0) -> int:
    """Return a 64-bit integer seed for the stream ``(race_index, purpose, bettor_id)``."""
    try:
        tag = PURPOSES[purpose]
    except KeyError:
        raise ValueError(f"unknown stream purpose {purpose!r}") from None
    ss = np.random.SeedSequence(int(master), spawn_key=(int(race_index), tag, int(bettor_id)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def stream(master: int, race_index: int, purpose: str, bettor_id: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, race_index, purpose, bettor_id)))
