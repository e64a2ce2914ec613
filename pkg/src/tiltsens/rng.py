"""Seeded, splittable random streams."""

from __future__ import annotations

import numpy as np


def spawn_generators(seed: int, n: int) -> list[np.random.Generator]:
    """``n`` independent generators derived from one seed.

    Stream k depends only on (seed, k), so work assigned to stream k gives the
    same draws no matter how it is scheduled.
    """
    return [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(n)]
