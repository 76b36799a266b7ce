"""Fisher information for delay estimation, quantum and classical.

Four kinds are produced: the quantum Fisher information ``H``, the bucket
detector (non-resolved) information, the infinite-resolution limit computed
from the continuous joint density, and the finite-resolution information
summed over a :class:`~frhom.model.PixelGrid`.
"""

import csv
import enum
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import SingularConfigurationError
from .model import (
    Branch,
    PixelGrid,
    bin_derivative_table,
    bin_probability_table,
    nonresolved_probability,
)
from .quadrature import integrate_1d, integrate_2d

SKIP_THRESHOLD = 1e-30
MIN_COVERAGE_SIGMA = 4.0


class FisherKind(enum.Enum):
    QUANTUM = "quantum"
    NONRESOLVED = "nonresolved"
    RESOLVED_INFINITE = "resolved_infinite"
    RESOLVED_FINITE = "resolved_finite"


@dataclass
class FisherCurve:
    delays: np.ndarray
    values: np.ndarray
    kind: FisherKind
    visibility: float
    tau: float
    resolution: float | None = None
    normalized: np.ndarray = field(default=None, repr=False)


def spectral_variance(model, rtol=1e-13):
    """Second central moment of the single-photon spectrum, by quadrature.

    Moments are taken about the carrier so the subtraction
    ``<w^2> - <w>^2`` does not lose digits to the optical frequency.
    """
    s = model.sigma

    def f(x):
        phi = np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
        return np.stack([phi, phi * x, phi * x * x])

    m0, m1, m2 = integrate_1d(f, -12.0, 12.0, rtol=rtol, initial_panels=4).value
    mean = m1 / m0
    return (m2 / m0 - mean * mean) * s * s


def photon_qfi(model, n_photons=1):
    """QFI of an ``n``-photon Fock wavepacket with respect to its arrival time."""
    return 4.0 * n_photons * spectral_variance(model)


def qfi(model):
    """Quantum Fisher information for the delay, per post-selected pair.

    The post-selected two-photon state mixes |1,1> (weight 1/2) with |2,0>
    and |0,2> (1/4 each); the information for each arrival time adds over
    these orthogonal sectors, and the delay ``t1 - t2`` is reached through
    the Jacobian (1, -1).
    """
    per_time = 0.5 * photon_qfi(model, 1) + 0.25 * photon_qfi(model, 2)
    inverse = np.diag([1.0 / per_time, 1.0 / per_time])
    jac = np.array([1.0, -1.0])
    return float(1.0 / (jac @ inverse @ jac))


def quantum_bound(model, n_pairs=1):
    """Quantum Cramér-Rao bound on the delay after ``n_pairs`` pairs."""
    return 1.0 / math.sqrt(n_pairs * qfi(model))


def fisher_nonresolved(model, delay):
    """Bucket-detector Fisher information in the closed form for Gaussian packets."""
    v, tau = model.visibility, model.tau
    h = 1.0 / (2.0 * tau**2)
    ratio = (delay / tau) ** 2
    denom = math.exp(ratio / 2.0) - v * v
    if denom <= 0.0:
        raise SingularConfigurationError("unit visibility at zero delay: information is singular")
    return 0.5 * h * v * v / denom * ratio


def fisher_nonresolved_numeric(model, delay):
    """Two-outcome Fisher information built directly from the bucket probabilities."""
    tau = model.tau
    total = 0.0
    for branch in Branch:
        p = float(nonresolved_probability(model, delay, branch))
        if not 0.0 < p < 1.0:
            raise SingularConfigurationError(f"degenerate outcome probability {p}")
        envelope = math.exp(-(delay**2) / (4 * tau**2))
        dp = 0.5 * branch.sign * model.visibility * envelope * (-delay / (2 * tau**2))
        total += dp * dp / p
    return total


def _resolved_terms(model, grid, delay, threshold=SKIP_THRESHOLD):
    p = bin_probability_table(model, grid, delay)
    dp = bin_derivative_table(model, grid, delay)
    keep = p >= threshold
    terms = np.zeros_like(p)
    terms[keep] = dp[keep] ** 2 / p[keep]
    return terms


def fisher_resolved(model, grid, delay, threshold=SKIP_THRESHOLD):
    """Finite-resolution Fisher information summed over all bin pairs and branches.

    Bins with probability below ``threshold`` are skipped to avoid 0/0.
    """
    coverage = grid.coverage(model)
    if coverage < MIN_COVERAGE_SIGMA:
        warnings.warn(
            f"grid covers only ±{coverage:.2f} sigma of the spectrum", RuntimeWarning, stacklevel=2
        )
    terms = _resolved_terms(model, grid, delay, threshold)
    return math.fsum(terms.ravel())


def fisher_postselected(model, grid, delay, included=None, threshold=SKIP_THRESHOLD):
    """Information per *recorded* pair when only some outcomes are kept.

    ``included`` is a boolean ``(2, n, n)`` mask over ``[A/B, i, j]`` (all
    outcomes when ``None``).  The distribution is renormalized to the kept
    set, as happens when light between pixels or excluded pairs is simply
    never counted.
    """
    p = bin_probability_table(model, grid, delay)
    dp = bin_derivative_table(model, grid, delay)
    keep = p >= threshold
    if included is not None:
        keep &= np.asarray(included, bool)
    total = math.fsum(p[keep])
    dtotal = math.fsum(dp[keep])
    if not total > 0:
        raise SingularConfigurationError("no probability mass in the kept outcomes")
    raw = math.fsum((dp[keep] ** 2 / p[keep]).ravel())
    return raw / total - (dtotal / total) ** 2


def fisher_resolved_infinite(model, delay, rtol=1e-9, span=8.0):
    """Fisher information of the continuous joint-frequency distribution.

    Integrates ``sum_X (dP_X/d dt)^2 / P_X`` over ``±span`` sigma in both
    frequencies.  With ``x`` in units of sigma the integrand reduces to
    ``phi(x1) phi(x2) V^2 sigma^2 (x1-x2)^2 sin^2 / (1 - V^2 cos^2)``.
    """
    v, s = model.visibility, model.sigma
    theta = s * delay

    def f(x1, x2):
        u = x1 - x2
        phase = u * theta
        sin2 = np.sin(phase) ** 2
        denom = (1.0 - v * v) + v * v * sin2
        ratio = np.divide(sin2, denom, out=np.ones_like(sin2), where=denom > 0)
        phi = np.exp(-0.5 * (x1 * x1 + x2 * x2)) / (2 * math.pi)
        return phi * v * v * u * u * ratio

    panels = max(2, int(math.ceil(abs(theta) * span / math.pi)))
    res = integrate_2d(f, (-span, span), (-span, span), rtol=rtol, initial_panels=min(panels, 16))
    return float(res.value) * s * s


def _threads():
    try:
        return max(1, int(os.environ.get("HOMSIM_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items, workers):
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def fisher_curves(model, grid, delays, extra_grids=(), workers=None):
    """Evaluate every kind of Fisher information over ``delays``.

    ``grid`` gives one finite-resolution curve; ``extra_grids`` add more.
    Each curve carries ``normalized = values / H``.
    """
    delays = np.asarray(delays, dtype=float)
    if delays.size == 0:
        raise ValueError("delay list is empty")
    workers = _threads() if workers is None else workers
    h = qfi(model)
    v, tau = model.visibility, model.tau

    def curve(kind, values, resolution=None):
        values = np.asarray(values, dtype=float)
        return FisherCurve(delays, values, kind, v, tau, resolution, values / h)

    out = [curve(FisherKind.QUANTUM, np.full(delays.shape, h))]
    out.append(curve(FisherKind.NONRESOLVED, _map(lambda d: fisher_nonresolved(model, d), delays,
                                                  workers)))
    out.append(
        curve(
            FisherKind.RESOLVED_INFINITE,
            _map(lambda d: fisher_resolved_infinite(model, d), delays, workers),
        )
    )
    for g in (grid, *extra_grids):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            vals = _map(lambda d, g=g: fisher_resolved(model, g, d), delays, workers)
        out.append(curve(FisherKind.RESOLVED_FINITE, vals, g.bin_width))
    return out


def nonresolved_ratio(model, delays):
    """Ratio of the numeric two-outcome information to the closed form at each delay."""
    return np.array(
        [fisher_nonresolved_numeric(model, d) / fisher_nonresolved(model, d) for d in delays]
    )


CSV_HEADER = ("delay_s", "kind", "resolution_rad_s", "fi_s2", "fi_over_H")


def write_curves_csv(path, curves):
    """Write curves in long format; rows are sorted by kind order then delay."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for c in curves:
            res = "" if c.resolution is None else repr(float(c.resolution))
            for d, val, norm in zip(c.delays, c.values, c.normalized):
                w.writerow([repr(float(d)), c.kind.value, res, repr(float(val)), repr(float(norm))])
    os.replace(tmp, path)


def read_curves_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def appendix_grid(model, resolution):
    """The 11 x 11 evaluation grid ``center + n * resolution``, ``n`` in -5..5."""
    return PixelGrid.indexed(model, resolution, 5)
