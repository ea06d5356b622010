"""Deterministic substream derivation from a single master seed.

Every randomized stage draws from ``substream(master, stage, index)``.  The
scheme is a documented counter: the numpy SeedSequence entropy is the tuple
``(master, STAGE_IDS[stage], index)``, so any (stage, index) pair maps to the
same generator on every run and paired comparisons can replay identical
profile/disturbance draws across estimators.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

# Stage ids are append-only; never renumber, or old runs stop being replayable.
STAGE_IDS = {
    "dataset-episode": 0,
    "dataset-profile": 1,
    "dataset-policy": 2,
    "iql-train": 3,
    "detector-train": 4,
    "eval-env": 5,
    "eval-estimator": 6,
    "sweep": 7,
    "labelset": 8,
    "bootstrap": 9,
}


def substream(master: int, stage: str, index: int = 0) -> np.random.Generator:
    """Return the PCG64 generator for (master seed, stage, counter index)."""
    if stage not in STAGE_IDS:
        raise ConfigError(f"unknown seed stage {stage!r}; known: {sorted(STAGE_IDS)}")
    seq = np.random.SeedSequence(entropy=(int(master), STAGE_IDS[stage], int(index)))
    return np.random.Generator(np.random.PCG64(seq))
