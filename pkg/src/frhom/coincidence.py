"""Greedy two-pointer coincidence counting and coincidence-matrix statistics.

The counter walks two sorted tag lists: a pair closer than the window is a
coincidence and consumes both tags; otherwise only the earlier tag is
discarded.  It is greedy, not a maximum matching.

By default every element of both lists is visited.  ``strict_fidelity=True``
reproduces the 1-based loop bound ``while i < n_a and j < n_b`` literally,
which never looks at the last tag of either list.
"""

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ConfigurationError
from .model import Branch, beat_frequency
from .simulate import to_fs


@njit(cache=True)
def _greedy_count(t_a, t_b, cw, last_a, last_b):
    i = 0
    j = 0
    cc = 0
    while i < last_a and j < last_b:
        dt = t_b[j] - t_a[i]
        if abs(dt) < cw:
            cc += 1
            i += 1
            j += 1
        elif dt > 0:
            i += 1
        else:
            j += 1
    return cc


@njit(cache=True)
def _greedy_self_count(t, cw):
    # consecutive tags of one list paired greedily; each tag used at most once
    n = t.shape[0]
    i = 0
    cc = 0
    while i + 1 < n:
        if t[i + 1] - t[i] < cw:
            cc += 1
            i += 2
        else:
            i += 1
    return cc


def _as_sorted(t, name):
    arr = np.asarray(t)
    if arr.dtype.kind not in "iuf":
        arr = arr.astype(float)
    if arr.dtype.kind == "u":
        arr = arr.astype(np.int64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if arr.size > 1 and np.any(np.diff(arr) < 0):
        raise ValueError(f"{name} must be sorted nondecreasing")
    return np.ascontiguousarray(arr)


def count_coincidences(t_a, t_b, cw, strict_fidelity=False):
    """Count coincidences ``|t_b[j] - t_a[i]| < cw`` between two sorted tag lists."""
    a = _as_sorted(t_a, "t_a")
    b = _as_sorted(t_b, "t_b")
    if a.size == 0 or b.size == 0:
        return 0
    if a.dtype != b.dtype:
        a, b = a.astype(float), b.astype(float)
    cw = a.dtype.type(cw)
    shift = 1 if strict_fidelity else 0
    return int(_greedy_count(a, b, cw, a.size - shift, b.size - shift))


def count_self_coincidences(t, cw):
    """Coincidences among tags of a single list (same pixel, same port)."""
    arr = _as_sorted(t, "t")
    if arr.size < 2:
        return 0
    return int(_greedy_self_count(arr, arr.dtype.type(cw)))


def _pair_key(i, j):
    return (i, j) if i <= j else (j, i)


@dataclass(frozen=True)
class CoincidenceConfig:
    """Coincidence window, antibunching lag and analysis-time pair exclusions.

    ``excluded_bunching`` / ``excluded_antibunching`` hold unordered pixel
    pairs; ``None`` means the default rule: bunching drops self-pairs and
    adjacent pairs (cross-talk lands there), antibunching keeps everything.
    """

    window: float = 2e-9
    antibunch_center: float = 12.5e-9
    excluded_bunching: frozenset | None = None
    excluded_antibunching: frozenset | None = None
    strict_fidelity: bool = False

    def __post_init__(self):
        if not self.window > 0:
            raise ConfigurationError("coincidence window must be positive")
        if not self.antibunch_center > self.window:
            raise ConfigurationError("antibunch_center must exceed the window")
        for name in ("excluded_bunching", "excluded_antibunching"):
            pairs = getattr(self, name)
            if pairs is not None:
                object.__setattr__(self, name, frozenset(_pair_key(*p) for p in pairs))

    def excluded(self, branch, pixel_count):
        pairs = self.excluded_bunching if branch is Branch.B else self.excluded_antibunching
        if pairs is not None:
            return pairs
        if branch is Branch.A:
            return frozenset()
        return frozenset(
            (i, j) for i in range(pixel_count) for j in range(i, min(i + 2, pixel_count))
        )

    def included_mask(self, branch, pixel_count):
        """Upper-triangular boolean mask of pairs that enter the analysis."""
        mask = np.triu(np.ones((pixel_count, pixel_count), bool))
        for i, j in self.excluded(branch, pixel_count):
            if j < pixel_count:
                mask[i, j] = False
        return mask


@dataclass(frozen=True, eq=False)
class CoincidenceMatrix:
    """Raw symmetric coincidence counts for every pixel pair, both branches."""

    counts_A: np.ndarray
    counts_B: np.ndarray
    delay_setting: float

    def counts(self, branch):
        return self.counts_A if branch is Branch.A else self.counts_B

    @property
    def pixel_count(self):
        return self.counts_A.shape[0]


def classify_and_count(stream, config=CoincidenceConfig(), delay_setting=0.0):
    """Bunching and antibunching coincidence matrices of one stream.

    Bunching pairs are counted at zero lag.  Antibunching shifts the second
    pixel's list back by ``antibunch_center`` and counts both orientations
    for distinct pixels.  Exclusions are *not* applied here.
    """
    n = stream.pixel_count
    # per-pixel lists of a stream are sorted already, so the kernels run unchecked
    lists = stream.pixel_times()
    cw = np.int64(to_fs(config.window))
    shift = to_fs(config.antibunch_center)
    late = [t - shift for t in lists]
    cut = 1 if config.strict_fidelity else 0

    def pair(a, b):
        if a.size == 0 or b.size == 0:
            return 0
        return int(_greedy_count(a, b, cw, a.size - cut, b.size - cut))

    ca = np.zeros((n, n), np.int64)
    cb = np.zeros((n, n), np.int64)
    for i in range(n):
        for j in range(i, n):
            if i == j:
                cb[i, i] = int(_greedy_self_count(lists[i], cw)) if lists[i].size > 1 else 0
                ca[i, i] = pair(lists[i], late[i])
                continue
            b = pair(lists[i], lists[j])
            a = pair(lists[i], late[j]) + pair(lists[j], late[i])
            cb[i, j] = cb[j, i] = b
            ca[i, j] = ca[j, i] = a
    return CoincidenceMatrix(ca, cb, delay_setting)


@dataclass
class EnsembleStats:
    """Repetition means and standard errors of the coincidence matrices."""

    mean: dict
    sem: dict
    included: dict
    n_r: int
    N: float
    delay_setting: float
    spread: dict = field(default_factory=dict)

    @property
    def pixel_count(self):
        return self.mean[Branch.A].shape[0]


def aggregate(matrices, config=CoincidenceConfig()):
    """Mean, sample standard deviation and standard error over repetitions.

    ``N`` is ``n_r`` times the summed mean count over included pairs of both
    branches.
    """
    matrices = list(matrices)
    if len(matrices) < 2:
        raise ValueError("at least two repetitions are needed to estimate a spread")
    delays = {m.delay_setting for m in matrices}
    if len(delays) != 1:
        raise ValueError(f"matrices come from different delay settings: {sorted(delays)}")
    n_r = len(matrices)
    n = matrices[0].pixel_count
    mean, sem, spread, included = {}, {}, {}, {}
    total = []
    for branch in Branch:
        stack = np.stack([m.counts(branch) for m in matrices]).astype(float)
        mean[branch] = stack.mean(axis=0)
        spread[branch] = stack.std(axis=0, ddof=1)
        sem[branch] = spread[branch] / math.sqrt(n_r)
        included[branch] = config.included_mask(branch, n)
        total.append(mean[branch][included[branch]])
    big_n = n_r * math.fsum(np.concatenate(total))
    return EnsembleStats(mean, sem, included, n_r, big_n, delays.pop(), spread)


@dataclass(frozen=True)
class SeparationPoint:
    branch: Branch
    k: int
    mean: float
    sem: float
    delta_omega: float


def collapse_by_separation(stats, grid):
    """Sum included pairs sharing the same separation ``k = |i - j|``.

    Means add; standard errors combine in quadrature.  Returns a dict keyed
    by ``(branch, k)``, holding only separations with at least one included pair.
    """
    if not grid.is_uniform():
        raise ConfigurationError("collapsing by separation needs a uniform grid")
    n = stats.pixel_count
    out = {}
    for branch in Branch:
        for k in range(n):
            idx = [(i, i + k) for i in range(n - k) if stats.included[branch][i, i + k]]
            if not idx:
                continue
            rows, cols = zip(*idx)
            means = stats.mean[branch][rows, cols]
            sems = stats.sem[branch][rows, cols]
            out[(branch, k)] = SeparationPoint(
                branch, k, math.fsum(means), math.sqrt(math.fsum(sems**2)),
                beat_frequency(grid, 0, k),
            )
    return out


MATRIX_CSV_HEADER = ("branch", "i", "j", "k", "delta_omega_rad_s", "mean", "sem")


def write_matrix_csv(path, stats, grid, include_excluded=False):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MATRIX_CSV_HEADER)
        for branch in Branch:
            for i in range(stats.pixel_count):
                for j in range(i, stats.pixel_count):
                    if not include_excluded and not stats.included[branch][i, j]:
                        continue
                    w.writerow([
                        branch.value, i, j, j - i, repr(beat_frequency(grid, i, j)),
                        repr(float(stats.mean[branch][i, j])), repr(float(stats.sem[branch][i, j])),
                    ])
    os.replace(tmp, path)
