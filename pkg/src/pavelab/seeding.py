"""Deterministic seed splitting for parallel/sequential Monte-Carlo.

Every randomized operation in the package accepts an integer root seed.
Sub-streams (per trial, per restart, per attempt) are derived with
``child_rng(root, *path)``; the path is a tuple of small integers naming the
sub-task.  Identical (root, path) always yields a bit-identical stream, and
distinct paths yield independent streams, so trials can run in any order or
in parallel and still merge deterministically.
"""

from __future__ import annotations

import numpy as np


def child_seed(root: int, *path: int) -> np.random.SeedSequence:
    """Seed sequence for sub-task `path` of the root seed."""
    return np.random.SeedSequence(entropy=root, spawn_key=tuple(path))


def child_rng(root, *path: int) -> np.random.Generator:
    """Generator for sub-task `path` of the root seed.

    Accepts an int root, a SeedSequence, or (with an empty path) a live
    Generator, so callers can thread a raw seed or an already-derived stream.
    """
    if isinstance(root, np.random.Generator):
        if path:
            raise ValueError("cannot derive a child stream from a live Generator")
        return root
    if isinstance(root, np.random.SeedSequence):
        key = tuple(root.spawn_key) + tuple(path)
        return np.random.default_rng(
            np.random.SeedSequence(entropy=root.entropy, spawn_key=key))
    return np.random.default_rng(child_seed(int(root), *path))
