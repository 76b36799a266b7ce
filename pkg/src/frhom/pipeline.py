"""End-to-end chain: simulated runs to coincidence statistics to fits to estimates."""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .coincidence import CoincidenceConfig, aggregate, classify_and_count, collapse_by_separation
from .errors import EstimationError, FitError
from .fisher import (
    _map,
    _threads,
    appendix_grid,
    fisher_nonresolved,
    fisher_postselected,
    fisher_resolved,
    qfi,
)
from .inference import (
    DelayEstimate,
    Method,
    estimate_mle,
    estimate_nr,
    fit_beats,
    fit_dip,
    nr_uncertainty,
)
from .model import Branch
from .simulate import generate_run


def acquire(config, model, grid, delay, cc=CoincidenceConfig()):
    """Simulate and count all repetitions at one delay; returns one matrix per run."""
    return [
        classify_and_count(generate_run(config, model, grid, delay, r), cc, delay)
        for r in range(config.repetitions)
    ]


def acquire_scan(config, model, grid, delays, cc=CoincidenceConfig(), workers=None):
    """Coincidence matrices for every delay: a list (per delay) of lists (per run)."""
    workers = _threads() if workers is None else workers
    return _map(lambda d: acquire(config, model, grid, float(d), cc), delays, workers)


@dataclass
class Series:
    """One scan curve: counts against delay setting."""

    delays: np.ndarray
    mean: np.ndarray
    sem: np.ndarray
    delta_omega: float = 0.0


def split_runs(matrices):
    """Alternate runs into a fitting half and an estimation half."""
    if len(matrices) < 4:
        raise ValueError("split-sample mode needs at least four repetitions")
    return matrices[0::2], matrices[1::2]


def ensemble(scan, cc=CoincidenceConfig()):
    return [aggregate(runs, cc) for runs in scan]


def beat_series(stats_list, grid):
    """Collapse every delay point by separation and assemble per-(branch, k) series."""
    points = [collapse_by_separation(s, grid) for s in stats_list]
    delays = np.array([s.delay_setting for s in stats_list])
    out = {}
    for key in points[0]:
        mean = np.array([p[key].mean for p in points])
        sem = np.array([p[key].sem for p in points])
        out[key] = Series(delays, mean, sem, points[0][key].delta_omega)
    return out


def dip_series(stats_list):
    """Antibunching total against delay.

    On a single-bin grid this is the bucket-detector dip.  On a pixel array it
    sums every pair, which only approximates a bucket because light falling
    between pixels is lost.
    """
    delays = np.array([s.delay_setting for s in stats_list])
    mean, sem = [], []
    for s in stats_list:
        mask = np.triu(np.ones_like(s.mean[Branch.A], bool))
        mean.append(math.fsum(s.mean[Branch.A][mask]))
        sem.append(math.sqrt(math.fsum(s.sem[Branch.A][mask] ** 2)))
    return Series(delays, np.array(mean), np.array(sem))


def dip_series_from_runs(scan):
    """Like :func:`dip_series` but with the spread taken over per-run totals."""
    delays, mean, sem = [], [], []
    for runs in scan:
        totals = np.array([np.triu(m.counts_A).sum() for m in runs], float)
        delays.append(runs[0].delay_setting)
        mean.append(totals.mean())
        sem.append(totals.std(ddof=1) / math.sqrt(totals.size))
    return Series(np.array(delays), np.array(mean), np.array(sem))


def fit_all_beats(series, resolution_seed, min_counts=1.0):
    """Fit each series; failures are collected instead of raised.

    Series whose mean count stays below ``min_counts`` are reported as failed
    without attempting a fit.
    """
    fits, failures = {}, {}
    for key, s in sorted(series.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
        branch, k = key
        if s.mean.mean() < min_counts:
            failures[key] = f"mean count {s.mean.mean():.3g} below {min_counts}"
            continue
        try:
            fits[key] = fit_beats(s.delays, s.mean, s.sem, branch, k, s.delta_omega,
                                  resolution_seed)
        except FitError as exc:
            failures[key] = str(exc)
    return fits, failures


@dataclass
class UncertaintyRow:
    delay_setting: float
    method: Method
    estimate: DelayEstimate | None
    uncertainty: float
    N: float
    status: str

    @property
    def scaled(self):
        return math.sqrt(self.N) * self.uncertainty if self.N > 0 else math.nan


def nr_rows(dip_fit, series, n_r):
    """Dip-inversion estimate at every scan point.

    Where the observed count cannot be inverted the propagated uncertainty
    is still reported, evaluated at the delay setting, so that the
    divergence at large delays stays visible.
    """
    rows = []
    for d, c, e in zip(series.delays, series.mean, series.sem):
        try:
            est = estimate_nr(c, e, dip_fit, n_r)
            rows.append(UncertaintyRow(d, Method.NR_INVERSION, est, est.uncertainty, est.N, "ok"))
        except EstimationError as exc:
            try:
                unc = nr_uncertainty(dip_fit, abs(d), e)
            except EstimationError:
                unc = math.inf
            rows.append(UncertaintyRow(d, Method.NR_INVERSION, None, unc, c * n_r,
                                       f"at_setting: {exc}"))
    return rows


def mle_rows(fits, stats_list, grid, search_halfwidth, tau, normalize=True):
    """MLE at every scan point, searching ``setting +/- search_halfwidth``."""
    rows = []
    for s in stats_list:
        point = collapse_by_separation(s, grid)
        counts = {key: p.mean for key, p in point.items() if key in fits}
        sems = {key: p.sem for key, p in point.items() if key in fits}
        d = s.delay_setting
        try:
            est = estimate_mle(counts, sems, fits, (d - search_halfwidth, d + search_halfwidth),
                               s.n_r, tau, normalize)
            rows.append(UncertaintyRow(d, Method.MLE, est, est.uncertainty, est.N, "ok"))
        except EstimationError as exc:
            rows.append(UncertaintyRow(d, Method.MLE, None, math.nan,
                                       s.n_r * math.fsum(counts.values()), f"failed: {exc}"))
    return rows


def outcome_mask(cc, pixel_count):
    """``(2, n, n)`` mask of ordered outcomes kept by the coincidence exclusions."""
    out = []
    for branch in Branch:
        upper = cc.included_mask(branch, pixel_count)
        out.append(upper | upper.T)
    return np.stack(out)


@dataclass(frozen=True)
class Bounds:
    """Per-pair Cramer-Rao bounds ``1/sqrt(F)`` in seconds."""

    quantum: float
    finite: float
    detector: float
    nonresolved: float


def _inv_sqrt(f):
    return 1 / math.sqrt(f) if f > 0 else math.inf


def bounds(model, delay, resolution, grid=None, cc=CoincidenceConfig()):
    """Quantum, finite-resolution (contiguous grid at ``resolution``),
    recorded-pair (``grid`` with exclusions; NaN without a grid) and
    non-resolved bounds."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        f_res = fisher_resolved(model, appendix_grid(model, resolution), delay)
    det = math.nan
    if grid is not None:
        det = _inv_sqrt(fisher_postselected(model, grid, delay, outcome_mask(cc, grid.size)))
    try:
        f_nr = fisher_nonresolved(model, delay)
    except ArithmeticError:
        f_nr = 0.0
    return Bounds(_inv_sqrt(qfi(model)), _inv_sqrt(f_res), det, _inv_sqrt(f_nr))


def fit_dip_series(series):
    return fit_dip(series.delays, series.mean, series.sem)
