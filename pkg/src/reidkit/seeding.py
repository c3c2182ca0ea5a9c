"""Deterministic seed fan-out.

A single user-facing seed is expanded into per-subsystem sub-seeds so that
changing one stage (e.g. augmentation) never perturbs the draws of another.
The CLI passes its --seed through these offsets; library callers may use
them directly or supply their own seeds.
"""

from __future__ import annotations

import numpy as np

# Fixed role tags mixed into the seed stream, one per randomized subsystem.
ROLE_SPLIT = 0
ROLE_NETWORK = 1
ROLE_SAMPLING = 2
ROLE_AUGMENT = 3
ROLE_SYNTH = 4
ROLE_EPOCH = 5
ROLE_VAL_SAMPLING = 6
ROLE_ANCHOR = 7


def derive_seed(seed: int, *parts: int) -> int:
    """Derive a 32-bit sub-seed from a base seed and role/index parts."""
    state = np.random.SeedSequence((seed, *parts)).generate_state(1)
    return int(state[0])
