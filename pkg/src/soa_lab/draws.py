"""Quasi-random standard-normal draws for simulated likelihoods.

Classic (unscrambled) Halton points with one prime base per dimension, the
customary first 50 points discarded, mapped through the normal inverse CDF.
Each individual receives a contiguous block of the common sequence, so the
draw set is a pure function of (n_individuals, n_draws, dim) — no seed —
and is generated once per fit and cached.
"""

from __future__ import annotations

import numpy as np
from scipy import stats
from scipy.stats import qmc

from .errors import InvalidInputError

_DISCARD = 50


def halton_normal_draws(n_individuals: int, n_draws: int, dim: int) -> np.ndarray:
    """(n_individuals, n_draws, dim) block-partitioned normal Halton draws."""
    if min(n_individuals, n_draws, dim) < 1:
        raise InvalidInputError("n_individuals, n_draws, dim must be >= 1")
    sampler = qmc.Halton(d=dim, scramble=False)
    sampler.fast_forward(_DISCARD)
    u = sampler.random(n_individuals * n_draws)
    z = stats.norm.ppf(u)
    return z.reshape(n_individuals, n_draws, dim)
