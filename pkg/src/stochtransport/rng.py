"""Seed derivation for reproducible, order-independent sample paths.

Every path gets its own ``SeedSequence`` built from ``(base_seed, stream,
path_index)``. The spawn key addresses the child directly, so adding more
paths to an ensemble never changes the draws of existing ones, and the
result does not depend on which worker ran which path.
"""
from __future__ import annotations

import numpy as np

STREAM_SDE = 0
STREAM_MC = 1
STREAM_SHEET = 2


def path_seed_sequence(base_seed: int, path_index: int, stream: int = STREAM_SDE) -> np.random.SeedSequence:
    if base_seed < 0 or path_index < 0:
        raise ValueError("seeds and path indices must be non-negative")
    return np.random.SeedSequence(entropy=int(base_seed), spawn_key=(int(stream), int(path_index)))


def path_generator(base_seed: int, path_index: int, stream: int = STREAM_SDE) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(path_seed_sequence(base_seed, path_index, stream)))
