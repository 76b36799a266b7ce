"""Interference probabilities for frequency-resolved two-photon interference.

All quantities are SI: delays in seconds, frequencies in rad/s.  Spectra are
Gaussian; internally frequencies are measured from the spectral centre in
units of ``sigma`` so that the beat phase ``(w1 - w2) * dt`` never involves
the ~1e15 rad/s optical carrier.
"""

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtr

from .errors import ConfigurationError
from .quadrature import integrate_1d, integrate_2d

#: speed of light, m/s
SPEED_OF_LIGHT = 299_792_458.0
#: 531.5 nm carrier, rad/s
DEFAULT_CENTER_FREQUENCY = 2 * math.pi * SPEED_OF_LIGHT / 531.5e-9
COHERENT_VISIBILITY_LIMIT = 0.5
BIN_RTOL = 1e-9
_SQRT_2PI = math.sqrt(2 * math.pi)


class Branch(enum.Enum):
    """Antibunching (photons leave different ports) or bunching (same port)."""

    A = "A"
    B = "B"

    @property
    def sign(self):
        """-1 for antibunching, +1 for bunching: the sign in ``1 -/+ V cos``."""
        return -1.0 if self is Branch.A else 1.0

    @property
    def label(self):
        return "antibunching" if self is Branch.A else "bunching"


class SourceKind(enum.Enum):
    COHERENT = "coherent"
    SINGLE_PHOTON = "single_photon"


@dataclass(frozen=True)
class SpectralModel:
    """Gaussian single-photon spectrum plus interference visibility.

    A coherent (phase-randomized) source cannot exceed visibility 0.5;
    pass ``allow_high_visibility=True`` to lift that check.
    """

    center_frequency: float
    sigma: float
    visibility: float
    source_kind: SourceKind = SourceKind.COHERENT
    allow_high_visibility: bool = False

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ConfigurationError(f"sigma must be positive and finite, got {self.sigma}")
        if not 0 < self.visibility <= 1:
            raise ConfigurationError(f"visibility must lie in (0, 1], got {self.visibility}")
        if (
            self.source_kind is SourceKind.COHERENT
            and self.visibility > COHERENT_VISIBILITY_LIMIT
            and not self.allow_high_visibility
        ):
            raise ConfigurationError(
                f"visibility {self.visibility} exceeds {COHERENT_VISIBILITY_LIMIT} "
                "for independent coherent states; set allow_high_visibility=True to override"
            )

    @classmethod
    def from_coherence_time(cls, tau, visibility, center_frequency=DEFAULT_CENTER_FREQUENCY,
                            **kwargs):
        return cls(center_frequency, 1.0 / (2.0 * tau), visibility, **kwargs)

    @property
    def tau(self):
        """Coherence time ``1 / (2 sigma)``."""
        return 1.0 / (2.0 * self.sigma)

    def with_visibility(self, visibility):
        return SpectralModel(self.center_frequency, self.sigma, visibility, self.source_kind,
                             self.allow_high_visibility)


@dataclass(frozen=True)
class PixelGrid:
    """Detector bins along the frequency axis: centres (rad/s) and common width."""

    bin_centers: tuple
    bin_width: float

    def __post_init__(self):
        centers = tuple(float(c) for c in self.bin_centers)
        object.__setattr__(self, "bin_centers", centers)
        if not self.bin_width > 0:
            raise ConfigurationError("bin_width must be positive")
        if not centers:
            raise ConfigurationError("grid needs at least one bin")
        gaps = np.diff(centers)
        if np.any(gaps <= 0):
            raise ConfigurationError("bin centers must be strictly increasing")
        if np.any(gaps < self.bin_width * (1 - 1e-9)):
            raise ConfigurationError("bins overlap: center spacing is below bin_width")

    @classmethod
    def uniform(cls, n, pitch, bin_width=None, center=0.0):
        """``n`` bins at spacing ``pitch`` placed symmetrically about ``center``."""
        offsets = (np.arange(n) - (n - 1) / 2.0) * pitch
        return cls(tuple(center + offsets), pitch if bin_width is None else bin_width)

    @classmethod
    def indexed(cls, model, bin_width, n_max=5):
        """Contiguous bins centred at ``center + n * bin_width`` for ``|n| <= n_max``."""
        n = np.arange(-n_max, n_max + 1)
        return cls(tuple(model.center_frequency + n * bin_width), bin_width)

    @classmethod
    def covering(cls, model, bin_width, n_sigma=6.0):
        """Smallest odd contiguous grid whose outer edges reach ``n_sigma`` on both sides."""
        n_max = max(0, math.ceil(n_sigma * model.sigma / bin_width - 0.5))
        return cls.indexed(model, bin_width, n_max)

    @property
    def centers(self):
        return np.asarray(self.bin_centers)

    @property
    def size(self):
        return len(self.bin_centers)

    @property
    def pitch(self):
        """Common center spacing; raises for non-uniform grids."""
        if self.size < 2:
            return self.bin_width
        gaps = np.diff(self.centers)
        if not np.allclose(gaps, gaps[0], rtol=1e-9, atol=0):
            raise ConfigurationError("grid is not uniform")
        return float(gaps[0])

    def is_uniform(self):
        try:
            self.pitch
        except ConfigurationError:
            return False
        return True

    def edges(self):
        c = self.centers
        return c - self.bin_width / 2, c + self.bin_width / 2

    def coverage(self, model):
        """Distance in units of sigma from the spectral centre to the nearer outer edge."""
        lo, hi = self.edges()
        return min(model.center_frequency - lo[0], hi[-1] - model.center_frequency) / model.sigma

    def refined(self):
        """Split every bin into two halves; the result nests inside this grid."""
        q = self.bin_width / 4
        centers = np.column_stack([self.centers - q, self.centers + q]).ravel()
        return PixelGrid(tuple(centers), self.bin_width / 2)


def sinc(x):
    """``sin(x)/x`` with the removable singularity at 0 handled by a Taylor series."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-4
    safe = np.where(small, 1.0, x)
    x2 = x * x
    return np.where(small, 1.0 - x2 / 6.0 + x2 * x2 / 120.0, np.sin(safe) / safe)


def spectral_density(model, omega):
    """Normalized Gaussian spectral density f(omega) in s/rad."""
    z = (np.asarray(omega, dtype=float) - model.center_frequency) / model.sigma
    return np.exp(-0.5 * z * z) / (_SQRT_2PI * model.sigma)


def joint_density(model, delay, omega1, omega2, branch):
    """Joint frequency density for the given branch at delay ``delay``."""
    beat = (np.asarray(omega1, dtype=float) - np.asarray(omega2, dtype=float)) * delay
    return (
        0.5
        * spectral_density(model, omega1)
        * spectral_density(model, omega2)
        * (1.0 + branch.sign * model.visibility * np.cos(beat))
    )


def nonresolved_probability(model, delay, branch):
    """Bucket-detector probability ``(1 -/+ V exp(-dt^2 / 4 tau^2)) / 2``."""
    envelope = np.exp(-np.square(delay) / (4.0 * model.tau**2))
    return 0.5 * (1.0 + branch.sign * model.visibility * envelope)


def beat_frequency(grid, i, j):
    """Absolute difference of two bin centres, rad/s."""
    return abs(grid.bin_centers[i] - grid.bin_centers[j])


def bin_probability_approx(model, grid, delay, i, j, branch):
    """Closed-form bin probability assuming f is flat inside each bin."""
    w1, w2 = grid.bin_centers[i], grid.bin_centers[j]
    dw = grid.bin_width
    fringe = sinc(delay * dw / 2.0) ** 2 * np.cos((w1 - w2) * delay)
    return float(
        0.5
        * spectral_density(model, w1)
        * spectral_density(model, w2)
        * dw**2
        * (1.0 + branch.sign * model.visibility * fringe)
    )


# ---------------------------------------------------------------------------
# exact bin probabilities via per-bin spectral moments
#
# With x = (w - w0)/sigma and theta = sigma*dt the beat term separates:
#   cos((x1 - x2) theta) = cos x1θ cos x2θ + sin x1θ sin x2θ
# so each bin needs five 1-D moments of the standard normal density:
#   I0 = ∫φ, C = ∫φ cos xθ, S = ∫φ sin xθ, XC = ∫φ x cos xθ, XS = ∫φ x sin xθ
# ---------------------------------------------------------------------------


def _moment_integrand(theta):
    def f(x):
        phi = np.exp(-0.5 * x * x) / _SQRT_2PI
        c, s = np.cos(x * theta), np.sin(x * theta)
        return np.stack([phi, phi * c, phi * s, phi * x * c, phi * x * s])

    return f


@lru_cache(maxsize=4096)
def _bin_moments(lo, hi, theta, rtol):
    if hi <= -40.0 or lo >= 40.0:
        return np.zeros(5)
    lo, hi = max(lo, -40.0), min(hi, 40.0)
    res = integrate_1d(_moment_integrand(theta), lo, hi, rtol=rtol)
    return np.asarray(res.value)


def grid_moments(model, grid, delay, rtol=BIN_RTOL):
    """Moments ``(5, n_bins)`` of every bin at ``delay`` (dimensionless units)."""
    lo, hi = grid.edges()
    lo = (lo - model.center_frequency) / model.sigma
    hi = (hi - model.center_frequency) / model.sigma
    theta = float(model.sigma * delay)
    # the product of two moments carries roughly twice the per-moment error
    return np.column_stack(
        [_bin_moments(float(a), float(b), theta, rtol / 4) for a, b in zip(lo, hi)]
    )


def bin_probability_table(model, grid, delay, rtol=BIN_RTOL):
    """Exact bin probabilities as an array ``(2, n, n)`` indexed ``[A/B, i, j]``."""
    m = grid_moments(model, grid, delay, rtol)
    i0, c, s = m[0], m[1], m[2]
    flat = 0.5 * np.outer(i0, i0)
    beat = 0.5 * model.visibility * (np.outer(c, c) + np.outer(s, s))
    return np.stack([flat - beat, flat + beat]).clip(min=0.0)


def bin_derivative_table(model, grid, delay, rtol=BIN_RTOL):
    """``dP/d(dt)`` for every bin pair, differentiated under the integral sign."""
    m = grid_moments(model, grid, delay, rtol)
    c, s, xc, xs = m[1], m[2], m[3], m[4]
    # D_ij = ∫∫ φφ (x1 - x2) sin((x1 - x2)θ)
    d = np.outer(xs, c) - np.outer(xc, s) - np.outer(s, xc) + np.outer(c, xs)
    da = 0.5 * model.visibility * model.sigma * d
    return np.stack([da, -da])


def _branch_index(branch):
    return 0 if branch is Branch.A else 1


def _check_indices(grid, i, j):
    for k in (i, j):
        if not 0 <= k < grid.size:
            raise ConfigurationError(f"bin index {k} outside grid of {grid.size} bins")


def bin_probability(model, grid, delay, i, j, branch, rtol=BIN_RTOL, method="moments"):
    """Probability that the pair lands in bins ``(i, j)`` on ``branch``.

    ``method="moments"`` uses the separable per-bin moments (the default);
    ``method="direct"`` integrates the joint density over the rectangle with
    the 2-D adaptive rule and is kept as an independent cross-check.
    """
    _check_indices(grid, i, j)
    if method == "moments":
        sub = PixelGrid((grid.bin_centers[i],), grid.bin_width)
        mi = grid_moments(model, sub, delay, rtol)[:, 0]
        sub = PixelGrid((grid.bin_centers[j],), grid.bin_width)
        mj = grid_moments(model, sub, delay, rtol)[:, 0]
        flat = 0.5 * mi[0] * mj[0]
        beat = 0.5 * model.visibility * (mi[1] * mj[1] + mi[2] * mj[2])
        return max(flat + branch.sign * beat, 0.0)
    if method == "direct":
        lo, hi = grid.edges()
        w0, sig = model.center_frequency, model.sigma
        theta = sig * delay
        sign, vis = branch.sign, model.visibility

        def f(x1, x2):
            phi = np.exp(-0.5 * (x1 * x1 + x2 * x2)) / (2 * math.pi)
            return 0.5 * phi * (1.0 + sign * vis * np.cos((x1 - x2) * theta))

        res = integrate_2d(
            f,
            ((lo[i] - w0) / sig, (hi[i] - w0) / sig),
            ((lo[j] - w0) / sig, (hi[j] - w0) / sig),
            rtol=rtol,
        )
        return float(res.value)
    raise ValueError(f"unknown method {method!r}")


def bin_probability_derivative(model, grid, delay, i, j, branch, rtol=BIN_RTOL):
    _check_indices(grid, i, j)
    return float(bin_derivative_table(model, grid, delay, rtol)[_branch_index(branch), i, j])


def gaussian_mass(model, lo, hi):
    """Exact spectral mass in ``[lo, hi]`` from the normal CDF."""
    return ndtr((hi - model.center_frequency) / model.sigma) - ndtr(
        (lo - model.center_frequency) / model.sigma
    )


def sinc_derivatives(x):
    """``(sinc, sinc', sinc'')`` at ``x``, with series near the origin."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 0.05
    xs = np.where(small, 0.05, x)
    s, c = np.sin(xs), np.cos(xs)
    f0 = s / xs
    f1 = (xs * c - s) / xs**2
    f2 = ((2.0 - xs * xs) * s - 2.0 * xs * c) / xs**3
    x2 = x * x
    t0 = 1 - x2 / 6 + x2**2 / 120 - x2**3 / 5040 + x2**4 / 362880
    t1 = x * (-1 / 3 + x2 / 30 - x2**2 / 840 + x2**3 / 45360)
    t2 = -1 / 3 + x2 / 10 - x2**2 / 168 + x2**3 / 6480
    return np.where(small, t0, f0), np.where(small, t1, f1), np.where(small, t2, f2)
