"""Monte Carlo time-tag generation for the port-multiplexed SPAD spectrometer.

Every pulse carries a post-selected photon pair with probability
``pair_rate``.  Antibunched pairs put one tag at the pulse epoch (early
port) and one ``port_offset`` later (late port); bunched pairs put both tags
on the same port.  Pixels are drawn from the exact bin probabilities and
each tag then passes through jitter, tag quantization and cross-talk.

Random numbers come from counter-based Philox substreams keyed by
``(rng_seed, repetition, delay, pulse block)``, so a run does not depend on
how blocks or repetitions are scheduled.
"""

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError
from .model import Branch, PixelGrid, bin_probability_table

FS = 1e-15
BLOCK_PULSES = 1 << 20
MIN_SAMPLING_COVERAGE = 4.0
FWHM_TO_SIGMA = 1.0 / math.sqrt(8.0 * math.log(2.0))

#: 8 SPADs at 1.8 THz beat spacing; each sensitive area spans a fifth of the pitch
DEFAULT_PIXEL_COUNT = 8
DEFAULT_PITCH = 1.8e12
ACTIVE_FRACTION = 50.0 / 250.0
DEFAULT_BIN_WIDTH = ACTIVE_FRACTION * DEFAULT_PITCH


class Port(enum.IntEnum):
    EARLY = 0
    LATE = 1


def to_fs(seconds):
    return int(round(seconds / FS))


@dataclass(frozen=True)
class ExperimentConfig:
    """Source and detector parameters; times in seconds."""

    repetition_period: float = 25e-9
    port_offset: float = 12.5e-9
    jitter_fwhm: float = 45e-12
    tag_resolution: float = 1.5e-12
    pair_rate: float = 1e-2
    pulses_per_run: int = 240_000_000
    repetitions: int = 10
    crosstalk_probability: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.port_offset < self.repetition_period:
            raise ConfigurationError("port_offset must lie strictly inside the repetition period")
        if not 0 <= self.pair_rate <= 0.1:
            raise ConfigurationError("pair_rate must lie in [0, 0.1]")
        if self.jitter_fwhm < 0 or self.tag_resolution < 0:
            raise ConfigurationError("jitter_fwhm and tag_resolution must be nonnegative")
        if not 0 <= self.crosstalk_probability <= 1:
            raise ConfigurationError("crosstalk_probability must lie in [0, 1]")
        if self.pulses_per_run < 0 or self.repetitions < 1:
            raise ConfigurationError("pulses_per_run must be >= 0 and repetitions >= 1")
        if not 0 <= self.rng_seed < 2**64:
            raise ConfigurationError("rng_seed must be a 64-bit unsigned integer")

    @property
    def jitter_sigma(self):
        return self.jitter_fwhm * FWHM_TO_SIGMA


@dataclass(frozen=True, eq=False)
class TimeTagStream:
    """Time-ordered detection records; timestamps are integer femtoseconds."""

    pixels: np.ndarray
    timestamps: np.ndarray
    pixel_count: int
    tag_resolution_fs: int
    repetition_period_fs: int

    def __post_init__(self):
        pixels = np.ascontiguousarray(self.pixels, dtype=np.uint16)
        stamps = np.ascontiguousarray(self.timestamps, dtype=np.int64)
        pixels.setflags(write=False)
        stamps.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "timestamps", stamps)
        if pixels.shape != stamps.shape or pixels.ndim != 1:
            raise ConfigurationError("pixels and timestamps must be equal-length 1-D arrays")
        if stamps.size and np.any(np.diff(stamps) < 0):
            raise ConfigurationError("timestamps must be nondecreasing")
        if pixels.size and int(pixels.max()) >= self.pixel_count:
            raise ConfigurationError("pixel index outside the detector")

    def __len__(self):
        return int(self.pixels.size)

    def __eq__(self, other):
        if not isinstance(other, TimeTagStream):
            return NotImplemented
        return (
            self.pixel_count == other.pixel_count
            and self.tag_resolution_fs == other.tag_resolution_fs
            and self.repetition_period_fs == other.repetition_period_fs
            and np.array_equal(self.pixels, other.pixels)
            and np.array_equal(self.timestamps, other.timestamps)
        )

    def pixel_times(self):
        """Per-pixel sorted timestamp arrays."""
        return [self.timestamps[self.pixels == p] for p in range(self.pixel_count)]


def substream(seed, *keys):
    """Independent Philox generator for ``(seed, *keys)``; keys are nonnegative ints."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=keys)))


def delay_key(delay):
    """Nonnegative integer key for a delay, at attosecond granularity."""
    n = int(round(delay / 1e-18))
    return 2 * n if n >= 0 else -2 * n - 1


class PairSampler:
    """Categorical sampler over ``(branch, i, j)`` from the exact bin probabilities."""

    def __init__(self, model, grid, delay):
        coverage = grid.coverage(model)
        if coverage < MIN_SAMPLING_COVERAGE:
            raise ConfigurationError(
                f"grid covers ±{coverage:.2f} sigma; sampling needs ±{MIN_SAMPLING_COVERAGE}"
            )
        table = bin_probability_table(model, grid, delay)
        self.n = grid.size
        self.total = float(table.sum())
        self.probabilities = table / self.total
        cdf = np.cumsum(self.probabilities.ravel())
        cdf /= cdf[-1]
        self._cdf = cdf

    def draw(self, rng, size):
        """Return ``(branch, i, j, port)`` arrays; ``branch`` 0 = A, 1 = B, ``port`` -1 for A."""
        flat = np.searchsorted(self._cdf, rng.random(size), side="right")
        flat = np.minimum(flat, self._cdf.size - 1)
        branch, rest = np.divmod(flat, self.n * self.n)
        i, j = np.divmod(rest, self.n)
        port = np.where(branch == 1, (rng.random(size) < 0.5).astype(np.int64), -1)
        return branch, i, j, port


@lru_cache(maxsize=256)
def pair_sampler(model, grid, delay):
    return PairSampler(model, grid, delay)


def sample_pair_outcome(model, grid, delay, rng):
    """Draw one ``(branch, bunch_port, i, j)``; ``bunch_port`` is ``None`` for antibunching."""
    b, i, j, port = pair_sampler(model, grid, delay).draw(rng, 1)
    branch = Branch.A if b[0] == 0 else Branch.B
    return branch, (None if port[0] < 0 else Port(int(port[0]))), int(i[0]), int(j[0])


def _detector_effects(offsets_fs, pixels, config, rng, pixel_count):
    offsets = offsets_fs.astype(float)
    if config.jitter_fwhm > 0:
        offsets = offsets + rng.normal(0.0, config.jitter_sigma / FS, offsets.size)
    res = to_fs(config.tag_resolution)
    if res > 0:
        quantized = np.round(offsets / res).astype(np.int64) * res
    else:
        quantized = np.round(offsets).astype(np.int64)
    pixels = pixels.astype(np.int64)
    if config.crosstalk_probability > 0 and pixel_count > 1:
        hit = np.flatnonzero(rng.random(offsets.size) < config.crosstalk_probability)
        step = np.where(rng.random(hit.size) < 0.5, -1, 1)
        src = pixels[hit]
        step = np.where(src == 0, 1, np.where(src == pixel_count - 1, -1, step))
        return quantized, pixels, hit, src + step
    return quantized, pixels, np.empty(0, np.int64), np.empty(0, np.int64)


def apply_detector_effects(tag_time_fs, pixel, config, rng, pixel_count, epoch_fs=0):
    """Jitter, quantize and possibly duplicate one tag.

    ``tag_time_fs`` is the nominal offset from the pulse epoch ``epoch_fs``;
    quantization is relative to the epoch, as for a sync-referenced tagger.
    Returns a list of ``(pixel, time_fs)`` records.
    """
    q, px, hit, cross = _detector_effects(
        np.array([tag_time_fs], np.int64), np.array([pixel]), config, rng, pixel_count
    )
    out = [(int(px[0]), int(epoch_fs + q[0]))]
    for h, c in zip(hit, cross):
        out.append((int(c), int(epoch_fs + q[h])))
    return out


def _event_pulses(rng, n, p):
    if p <= 0 or n == 0:
        return np.empty(0, np.int64)
    expected = n * p
    pos = np.cumsum(rng.geometric(p, int(expected + 6 * math.sqrt(expected) + 16))) - 1
    while pos[-1] < n:
        more = np.cumsum(rng.geometric(p, int(expected / 4) + 16)) + pos[-1]
        pos = np.concatenate([pos, more])
    return pos[pos < n]


def _time_sort(px, t):
    """Order records by time, ties by pixel."""
    bits = max(1, int(px.max()).bit_length()) if px.size else 1
    if t.size and (t.min() < 0 or int(t.max()) >= 1 << (62 - bits)):
        order = np.lexsort((px, t))
        return px[order], t[order]
    # pack (time, pixel) into one integer key: a single sort instead of a lexsort
    key = np.sort((t << bits) | px)
    return key & ((1 << bits) - 1), key >> bits


def generate_run(config, model, grid, delay, repetition_index=0):
    """Simulate one acquisition run of ``config.pulses_per_run`` pulses."""
    period_fs = to_fs(config.repetition_period)
    port_fs = to_fs(config.port_offset)
    res_fs = to_fs(config.tag_resolution)
    n_pix = grid.size
    sampler = pair_sampler(model, grid, delay) if config.pair_rate > 0 else None
    dkey = delay_key(delay)
    all_px, all_t = [], []
    for block, start in enumerate(range(0, config.pulses_per_run, BLOCK_PULSES)):
        n = min(BLOCK_PULSES, config.pulses_per_run - start)
        rng = substream(config.rng_seed, repetition_index, dkey, block)
        pulses = _event_pulses(rng, n, config.pair_rate)
        if pulses.size == 0:
            continue
        branch, i, j, port = sampler.draw(rng, pulses.size)
        # first pulse sits one period after the stream origin so jitter never goes negative
        epochs = (start + pulses + 1) * period_fs
        first = np.where(branch == 0, 0, port * port_fs)
        second = np.where(branch == 0, port_fs, port * port_fs)
        offsets = np.concatenate([first, second])
        pixels = np.concatenate([i, j])
        epochs2 = np.concatenate([epochs, epochs])
        q, px, hit, cross = _detector_effects(offsets, pixels, config, rng, n_pix)
        times = epochs2 + q
        px = np.concatenate([px, cross])
        times = np.concatenate([times, times[hit]])
        px, times = _time_sort(px, times)
        all_px.append(px)
        all_t.append(times)
    if all_px:
        px = np.concatenate(all_px)
        t = np.concatenate(all_t)
        if np.any(np.diff(t) < 0):
            # only reachable when jitter rivals the pulse spacing
            px, t = _time_sort(px, t)
    else:
        px, t = np.empty(0, np.uint16), np.empty(0, np.int64)
    return TimeTagStream(px, t, n_pix, res_fs, period_fs)


def detector_grid(model, pixel_count=DEFAULT_PIXEL_COUNT, pitch=DEFAULT_PITCH,
                  bin_width=DEFAULT_BIN_WIDTH):
    """SPAD-array grid: ``pixel_count`` bins at ``pitch`` centred on the spectrum."""
    return PixelGrid.uniform(pixel_count, pitch, bin_width, model.center_frequency)


def bucket_grid(model, span_sigma=10.0):
    """A single bin wide enough to act as a non-resolving (bucket) detector."""
    return PixelGrid((model.center_frequency,), 2 * span_sigma * model.sigma)
