"""Fitting the interference curves and estimating the delay.

Two routes are provided.  The non-resolved route fits the bucket dip
``A (1 - V exp(-dt^2 / 4 tau^2))`` and inverts it at the observed count.
The resolved route fits one beat curve per (branch, separation)

    N (1 -/+ V sinc^2(dt * delta / 2) cos(dw_k * dt))

and maximizes ``sum_x C_x ln m_x(dt)`` over the observed counts.  Fitted
curves are treated as exact when propagating count fluctuations into the
delay uncertainty.
"""

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AmbiguityError,
    CurvatureError,
    DivergentUncertaintyError,
    EstimationError,
    FitError,
    InversionError,
)
from .lm import levenberg_marquardt
from .model import Branch, sinc_derivatives

MIN_DIP_POINTS = 6
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class Method(enum.Enum):
    NR_INVERSION = "nr_inversion"
    MLE = "mle"


def _weights(sems):
    sems = np.asarray(sems, dtype=float)
    positive = sems[sems > 0]
    # repetitions that happen to agree exactly would get infinite weight
    floor = positive.min() if positive.size else 1.0
    return 1.0 / np.maximum(sems, floor)


# ---------------------------------------------------------------------------
# non-resolved dip
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DipFit:
    amplitude: float
    visibility: float
    tau: float
    residual_rms: float
    param_errors: tuple = (math.nan, math.nan, math.nan)
    flags: tuple = ()

    def __call__(self, delay):
        return dip_model(self, delay)


def dip_model(fit, delay, derivative=0):
    d = np.asarray(delay, dtype=float)
    env = np.exp(-d * d / (4 * fit.tau**2))
    if derivative == 0:
        return fit.amplitude * (1 - fit.visibility * env)
    if derivative == 1:
        return fit.amplitude * fit.visibility * env * d / (2 * fit.tau**2)
    raise ValueError("derivative must be 0 or 1")


def _dip_initial(d, c):
    a0 = c.max()
    v0 = 1 - c.min() / a0
    level = 0.5 * (c.max() + c.min())
    centre = d[np.argmin(c)]
    below = np.abs(d[c <= level] - centre)
    step = np.min(np.diff(np.unique(d))) if d.size > 1 else 1.0
    hw = max(below.max() if below.size else step, step / 2)
    return np.array([a0, v0, hw / (2 * math.sqrt(math.log(2)))])


def fit_dip(delays, counts, sems, xtol=1e-10, max_iter=200):
    """Weighted least-squares fit of the bucket-detector dip."""
    d = np.asarray(delays, dtype=float)
    c = np.asarray(counts, dtype=float)
    if d.size < MIN_DIP_POINTS:
        raise FitError(f"need at least {MIN_DIP_POINTS} scan points, got {d.size}")
    if not c.max() > c.min():
        raise FitError("flat scan: visibility and coherence time are not identifiable",
                       {"counts": c.tolist()})
    w = _weights(sems)
    p0 = _dip_initial(d, c)

    def residual(p):
        a, v, tau = p
        return w * (a * (1 - v * np.exp(-d * d / (4 * tau * tau))) - c)

    def jacobian(p):
        a, v, tau = p
        env = np.exp(-d * d / (4 * tau * tau))
        return w[:, None] * np.column_stack(
            [1 - v * env, -a * env, -a * v * env * d * d / (2 * tau**3)]
        )

    res = levenberg_marquardt(residual, jacobian, p0, xtol=xtol, max_iter=max_iter)
    a, v, tau = res.params
    tau = abs(tau)
    diag = {"initial": p0.tolist(), "params": res.params.tolist(), "iterations": res.iterations,
            "message": res.message, "cost": res.cost}
    if not res.converged:
        raise FitError("dip fit did not converge", diag)
    if not (a > 0 and 0 < v <= 1 and tau > 0):
        raise FitError("dip fit left the physical parameter range", diag)
    errs = tuple(np.sqrt(np.diag(res.covariance))) if res.covariance is not None else (math.nan,) * 3
    flags = ()
    if not errs[1] < v / 3:
        flags = ("tau_unidentifiable",)
    model = a * (1 - v * np.exp(-d * d / (4 * tau * tau)))
    rms = float(np.sqrt(np.mean((model - c) ** 2)))
    return DipFit(float(a), float(v), float(tau), rms, tuple(float(e) for e in errs), flags)


def nr_uncertainty(fit, delay, sem):
    """Error-propagated delay uncertainty ``|dC_fit/d dt|^-1 * sem``."""
    slope = abs(float(dip_model(fit, delay, 1)))
    if slope == 0.0:
        raise DivergentUncertaintyError("dip slope vanishes: uncertainty diverges")
    return sem / slope


@dataclass(frozen=True)
class DelayEstimate:
    delay_hat: float
    uncertainty: float
    N: float
    method: Method
    included: tuple = ()

    def __post_init__(self):
        if not (self.uncertainty > 0 and math.isfinite(self.uncertainty)):
            raise DivergentUncertaintyError(f"uncertainty {self.uncertainty} is not usable")

    @property
    def scaled_uncertainty(self):
        """``sqrt(N) * uncertainty``: the per-pair figure compared with bounds."""
        return math.sqrt(self.N) * self.uncertainty


def estimate_nr(count, sem, fit, n_r):
    """Invert the fitted dip on the positive-delay branch.

    ``N`` follows the bucket convention ``count * n_r``.
    """
    a, v, tau = fit.amplitude, fit.visibility, fit.tau
    floor = a * (1 - v)
    if count == floor:
        raise DivergentUncertaintyError("count sits at the dip bottom: zero slope")
    if not floor < count < a:
        raise InversionError(f"count {count} outside the invertible range ({floor}, {a})")
    delay = 2 * tau * math.sqrt(math.log(a * v / (a - count)))
    unc = nr_uncertainty(fit, delay, sem)
    return DelayEstimate(delay, unc, count * n_r, Method.NR_INVERSION)


# ---------------------------------------------------------------------------
# resolved beats
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BeatFit:
    normalization: float
    visibility: float
    resolution: float
    beat_frequency: float
    branch: Branch
    k: int = 0
    residual_rms: float = 0.0
    param_errors: tuple = ()

    def __call__(self, delay):
        return beat_model(self, delay)[0]


def beat_model(fit, delay, order=0):
    """Model value and its first ``order`` delay derivatives, as a list."""
    t = np.asarray(delay, dtype=float)
    half = fit.resolution / 2.0
    s0, s1, s2 = sinc_derivatives(t * half)
    g0 = s0 * s0
    g1 = 2 * s0 * s1 * half
    g2 = 2 * (s1 * s1 + s0 * s2) * half * half
    w = fit.beat_frequency
    c0 = np.cos(w * t)
    c1 = -w * np.sin(w * t)
    c2 = -w * w * c0
    amp = fit.branch.sign * fit.visibility * fit.normalization
    out = [fit.normalization + amp * g0 * c0]
    if order >= 1:
        out.append(amp * (g1 * c0 + g0 * c1))
    if order >= 2:
        out.append(amp * (g2 * c0 + 2 * g1 * c1 + g0 * c2))
    return out


def _beat_design(t, resolution, omega):
    return sinc_derivatives(t * resolution / 2)[0] ** 2 * np.cos(omega * t)


def fit_beats(delays, counts, sems, branch, k, omega_seed, resolution_seed,
              xtol=1e-10, max_iter=200, search=0.15):
    """Weighted least-squares fit of one beat curve.

    The beat frequency is seeded from the grid and refined.  Because the
    chi-square surface is multimodal in frequency, the seed neighbourhood
    ``(1 +/- search) * omega_seed`` and a few resolutions are first scanned
    with the linear parameters solved exactly.  ``k = 0`` fixes the beat
    frequency to zero.
    """
    t = np.asarray(delays, dtype=float)
    c = np.asarray(counts, dtype=float)
    w = _weights(sems)
    sign = branch.sign
    fixed_omega = k == 0 or omega_seed == 0
    n_free = 3 if fixed_omega else 4
    if t.size <= n_free:
        raise FitError(f"need more than {n_free} points, got {t.size}")
    if not np.any(c > 0):
        raise FitError("series has no counts")

    omegas = [0.0] if fixed_omega else np.linspace(1 - search, 1 + search, 61) * omega_seed
    resolutions = resolution_seed * np.array([0.5, 0.75, 1.0, 1.5, 2.0])
    best = None
    for res in resolutions:
        for om in omegas:
            g = _beat_design(t, res, om)
            x = np.column_stack([np.ones_like(t), g]) * w[:, None]
            coef, *_ = np.linalg.lstsq(x, c * w, rcond=None)
            a, b = coef
            if a <= 0 or sign * b <= 0:
                continue
            chi2 = float(np.sum((x @ coef - c * w) ** 2))
            if best is None or chi2 < best[0]:
                best = (chi2, a, min(sign * b / a, 0.99), res, om)
    if best is None:
        raise FitError("no starting point with positive normalization and visibility")
    _, a0, v0, r0, om0 = best
    p0 = np.array([a0, v0, r0] if fixed_omega else [a0, v0, r0, om0])

    def unpack(p):
        return (p[0], p[1], p[2], 0.0 if fixed_omega else p[3])

    def residual(p):
        n, v, res, om = unpack(p)
        return w * (n * (1 + sign * v * _beat_design(t, res, om)) - c)

    def jacobian(p):
        n, v, res, om = unpack(p)
        s0, s1, _ = sinc_derivatives(t * res / 2)
        g = s0 * s0
        cos = np.cos(om * t)
        cols = [
            1 + sign * v * g * cos,
            n * sign * g * cos,
            n * sign * v * 2 * s0 * s1 * (t / 2) * cos,
        ]
        if not fixed_omega:
            cols.append(-n * sign * v * g * t * np.sin(om * t))
        return w[:, None] * np.column_stack(cols)

    fit = levenberg_marquardt(residual, jacobian, p0, xtol=xtol, max_iter=max_iter)
    n, v, res, om = unpack(fit.params)
    res, om = abs(res), abs(om)
    diag = {"initial": p0.tolist(), "params": fit.params.tolist(), "iterations": fit.iterations,
            "message": fit.message, "branch": branch.value, "k": k}
    if not fit.converged:
        raise FitError("beat fit did not converge", diag)
    if not (n > 0 and 0 < v <= 1 and res > 0 and om >= 0):
        raise FitError("beat fit left the physical parameter range", diag)
    errs = (
        tuple(float(e) for e in np.sqrt(np.abs(np.diag(fit.covariance))))
        if fit.covariance is not None else ()
    )
    model = n * (1 + sign * v * _beat_design(t, res, om))
    rms = float(np.sqrt(np.mean((model - c) ** 2)))
    return BeatFit(float(n), float(v), float(res), float(om), branch, k, rms, errs)


# ---------------------------------------------------------------------------
# likelihood
# ---------------------------------------------------------------------------


def _terms(counts, fits):
    keys = [key for key in counts if key in fits]
    if not keys:
        raise EstimationError("no (branch, k) entries shared by counts and fits")
    return keys


def _model_stack(fits, keys, delay, order):
    vals = [beat_model(fits[key], delay, order) for key in keys]
    return [np.array([v[o] for v in vals]) for o in range(order + 1)]


def log_likelihood(counts, fits, delay, normalize=False):
    """``sum_x C_x ln m_x(delay)`` over the (branch, k) keys present in both maps.

    With ``normalize=True`` each model value is divided by the summed model,
    turning the fitted curves into a probability mass function over the
    included outcomes.
    """
    keys = _terms(counts, fits)
    (m,) = _model_stack(fits, keys, delay, 0)
    if np.any(m <= 0):
        raise EstimationError("model value is not positive at this delay")
    c = np.array([counts[key] for key in keys], dtype=float).reshape((-1,) + (1,) * np.ndim(delay))
    logm = np.log(m)
    if normalize:
        logm = logm - np.log(m.sum(axis=0))
    out = np.sum(c * logm, axis=0)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class LikelihoodDerivatives:
    """First and second delay derivatives of the log-likelihood at one delay.

    ``mixed[x]`` is ``d^2 L / dC_x d(dt)``, i.e. the delay derivative of
    ``ln m_x`` (normalized if requested).
    """

    keys: list
    first: float
    second: float
    mixed: np.ndarray = field(repr=False)


def likelihood_derivatives(counts, fits, delay, normalize=False):
    keys = _terms(counts, fits)
    m, m1, m2 = _model_stack(fits, keys, float(delay), 2)
    if np.any(m <= 0):
        raise EstimationError("model value is not positive at this delay")
    dlog = m1 / m
    d2log = m2 / m - dlog**2
    if normalize:
        total, total1, total2 = m.sum(), m1.sum(), m2.sum()
        dlog = dlog - total1 / total
        d2log = d2log - (total2 / total - (total1 / total) ** 2)
    c = np.array([counts[key] for key in keys], dtype=float)
    return LikelihoodDerivatives(keys, float(c @ dlog), float(c @ d2log), dlog)


def likelihood_derivatives_fd(counts, fits, delay, step=None, normalize=False):
    """Five-point finite differences of the log-likelihood; cross-check only."""
    keys = _terms(counts, fits)
    h = scan_step(fits, keys) * 40 / (2 * math.pi) * 1e-3 if step is None else step

    def d1(f):
        return (-f(delay + 2 * h) + 8 * f(delay + h) - 8 * f(delay - h) + f(delay - 2 * h)) / (
            12 * h
        )

    def ll(d):
        return log_likelihood(counts, fits, d, normalize)

    second = (
        -ll(delay + 2 * h) + 16 * ll(delay + h) - 30 * ll(delay) + 16 * ll(delay - h)
        - ll(delay - 2 * h)
    ) / (12 * h * h)
    mixed = []
    for key in keys:
        unit = {k2: (1.0 if k2 == key else 0.0) for k2 in keys}
        mixed.append(d1(lambda d, unit=unit: log_likelihood(unit, fits, d, normalize)))
    return LikelihoodDerivatives(keys, d1(ll), second, np.array(mixed))


def mle_uncertainty(counts, sems, fits, delay, normalize=True):
    """Propagate count errors through the stationarity condition of the likelihood."""
    der = likelihood_derivatives(counts, fits, delay, normalize)
    if not der.second < 0:
        raise CurvatureError(f"log-likelihood curvature {der.second} is not negative")
    dc = np.array([sems[key] for key in der.keys], dtype=float)
    sens = -der.mixed / der.second
    return math.sqrt(math.fsum((dc * sens) ** 2)), der


def _golden_max(f, lo, hi, tol):
    a, b = lo, hi
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = f(x2)
    return 0.5 * (a + b)


def scan_step(fits, keys):
    """Grid step: one fortieth of the shortest beat period (or sinc scale)."""
    periods = []
    for key in keys:
        f = fits[key]
        if f.beat_frequency > 0:
            periods.append(2 * math.pi / f.beat_frequency)
        periods.append(2 * math.pi / f.resolution)
    return min(periods) / 40.0


def estimate_mle(counts, sems, fits, search_interval, n_r, tau=None, normalize=True):
    """Maximum-likelihood delay inside ``search_interval`` with propagated error.

    A dense grid scan locates the global maximum in the interval; golden
    section refines it to ``1e-4 * tau`` (``tau`` defaults to the beat scale).
    ``N`` is ``n_r`` times the summed counts of the included outcomes.
    """
    keys = _terms(counts, fits)
    lo, hi = map(float, search_interval)
    if not hi > lo:
        raise ValueError("search interval must have positive length")
    step = scan_step(fits, keys)
    grid = np.linspace(lo, hi, max(3, int(math.ceil((hi - lo) / step)) + 1))
    sub_c = {key: counts[key] for key in keys}
    (m,) = _model_stack(fits, keys, grid, 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        logm = np.where(m > 0, np.log(np.where(m > 0, m, 1.0)), -np.inf)
        if normalize:
            logm = logm - np.log(m.sum(axis=0))
    c = np.array([counts[key] for key in keys], dtype=float)[:, None]
    ll = np.where(np.isfinite(logm), c * logm, np.where(c > 0, -np.inf, 0.0)).sum(axis=0)
    best = int(np.argmax(ll))
    if best in (0, grid.size - 1):
        raise AmbiguityError(f"likelihood maximum at the interval boundary {grid[best]:.4g}")
    scale = tau if tau is not None else step * 40 / (2 * math.pi)
    hat = _golden_max(
        lambda d: log_likelihood(sub_c, fits, d, normalize),
        grid[best - 1], grid[best + 1], 1e-4 * scale,
    )
    unc, _ = mle_uncertainty(sub_c, sems, fits, hat, normalize)
    big_n = n_r * math.fsum(c.ravel())
    included = tuple((key[0].value, key[1]) for key in keys)
    return DelayEstimate(hat, unc, big_n, Method.MLE, included)


# ---------------------------------------------------------------------------
# JSON records
# ---------------------------------------------------------------------------


def fit_record(fit):
    if isinstance(fit, DipFit):
        return {
            "type": "dip_fit",
            "amplitude_counts": fit.amplitude,
            "visibility": fit.visibility,
            "tau_s": fit.tau,
            "residual_rms_counts": fit.residual_rms,
            "flags": list(fit.flags),
        }
    return {
        "type": "beat_fit",
        "branch": fit.branch.value,
        "k": fit.k,
        "normalization_counts": fit.normalization,
        "visibility": fit.visibility,
        "resolution_rad_s": fit.resolution,
        "beat_frequency_rad_s": fit.beat_frequency,
        "residual_rms_counts": fit.residual_rms,
    }


def beat_fit_from_record(rec):
    return BeatFit(rec["normalization_counts"], rec["visibility"], rec["resolution_rad_s"],
                   rec["beat_frequency_rad_s"], Branch(rec["branch"]), rec["k"],
                   rec["residual_rms_counts"])


def estimate_record(est, delay_setting=None):
    rec = {
        "method": est.method.value,
        "delay_hat_s": est.delay_hat,
        "uncertainty_s": est.uncertainty,
        "N_pairs": est.N,
        "sqrtN_uncertainty_s": est.scaled_uncertainty,
        "included": [list(x) for x in est.included],
    }
    if delay_setting is not None:
        rec["delay_setting_s"] = delay_setting
    return rec


def dumps(records):
    return json.dumps(records, indent=2, sort_keys=True)
