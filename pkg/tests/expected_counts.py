"""Noise-free ensemble statistics built straight from the bin probabilities."""

import math

import numpy as np

from frhom.coincidence import CoincidenceConfig, EnsembleStats
from frhom.model import Branch, bin_probability_table


def expected_stats(model, grid, delay, pairs_per_run, n_r, cc=CoincidenceConfig()):
    """Mean counts per run equal to their expectation, Poisson standard errors."""
    table = bin_probability_table(model, grid, delay) * pairs_per_run
    mean, sem, included = {}, {}, {}
    total = []
    for idx, branch in enumerate(Branch):
        p = table[idx]
        # unordered pixel pairs: both orientations land in the upper triangle
        upper = np.triu(p + p.T, 1) + np.diag(np.diag(p))
        mean[branch] = upper + np.triu(upper, 1).T
        sem[branch] = np.sqrt(mean[branch] / n_r)
        included[branch] = cc.included_mask(branch, grid.size)
        total.append(mean[branch][included[branch]])
    big_n = n_r * math.fsum(np.concatenate(total))
    return EnsembleStats(mean, sem, included, n_r, big_n, delay)
