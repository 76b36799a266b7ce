import math

import numpy as np
import pytest

from frhom.errors import ConfigurationError
from frhom.model import Branch, PixelGrid, bin_probability_table
from frhom.simulate import (
    BLOCK_PULSES,
    FWHM_TO_SIGMA,
    ExperimentConfig,
    Port,
    TimeTagStream,
    apply_detector_effects,
    bucket_grid,
    delay_key,
    detector_grid,
    generate_run,
    pair_sampler,
    sample_pair_outcome,
    substream,
)

CLEAN = dict(jitter_fwhm=0.0, tag_resolution=0.0)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ExperimentConfig(port_offset=30e-9)
    with pytest.raises(ConfigurationError):
        ExperimentConfig(pair_rate=0.5)
    with pytest.raises(ConfigurationError):
        ExperimentConfig(crosstalk_probability=1.5)
    with pytest.raises(ConfigurationError):
        ExperimentConfig(repetitions=0)
    assert ExperimentConfig().jitter_sigma == pytest.approx(45e-12 / 2.3548200450309493)


def test_stream_validation():
    with pytest.raises(ConfigurationError):
        TimeTagStream(np.array([0, 1]), np.array([5, 3]), 2, 0, 0)
    with pytest.raises(ConfigurationError):
        TimeTagStream(np.array([0, 4]), np.array([1, 3]), 2, 0, 0)
    s = TimeTagStream(np.array([0, 1]), np.array([1, 3]), 2, 0, 0)
    with pytest.raises(ValueError):
        s.timestamps[0] = 7


def test_delay_key_is_injective_and_nonnegative():
    keys = {delay_key(d) for d in np.linspace(-5e-12, 5e-12, 1001)}
    assert len(keys) == 1001
    assert min(keys) >= 0


def test_substreams_are_reproducible_and_distinct():
    a = substream(1, 0, 2, 3).random(4)
    np.testing.assert_array_equal(a, substream(1, 0, 2, 3).random(4))
    assert not np.array_equal(a, substream(1, 0, 2, 4).random(4))
    assert not np.array_equal(a, substream(2, 0, 2, 3).random(4))


def test_same_seed_same_stream(model, grid):
    cfg = ExperimentConfig(pulses_per_run=300_000)
    assert generate_run(cfg, model, grid, 1e-12) == generate_run(cfg, model, grid, 1e-12)
    assert generate_run(cfg, model, grid, 1e-12, 1) != generate_run(cfg, model, grid, 1e-12)


def test_blocks_do_not_depend_on_run_length(model, grid):
    short = generate_run(ExperimentConfig(pulses_per_run=BLOCK_PULSES), model, grid, 0.0)
    long = generate_run(ExperimentConfig(pulses_per_run=2 * BLOCK_PULSES), model, grid, 0.0)
    n = len(short)
    # the last tag of a block can swap order only with tags of the next block
    np.testing.assert_array_equal(long.timestamps[: n - 4], short.timestamps[: n - 4])


def test_zero_pair_rate_gives_empty_stream(model, grid):
    s = generate_run(ExperimentConfig(pair_rate=0.0, pulses_per_run=10_000), model, grid, 0.0)
    assert len(s) == 0 and s.pixel_count == grid.size


def test_pair_count_is_binomial(model, grid):
    n, p = 2_000_000, 1e-2
    s = generate_run(ExperimentConfig(pair_rate=p, pulses_per_run=n), model, grid, 0.0)
    pairs = len(s) / 2
    assert abs(pairs - n * p) < 5 * math.sqrt(n * p * (1 - p))


def test_outcome_frequencies_follow_bin_probabilities(model, grid):
    sampler = pair_sampler(model, grid, 0.9e-12)
    rng = substream(7)
    branch, i, j, port = sampler.draw(rng, 400_000)
    table = bin_probability_table(model, grid, 0.9e-12)
    table /= table.sum()
    counts = np.zeros_like(table)
    np.add.at(counts, (branch, i, j), 1)
    expected = table * branch.size
    big = expected > 50
    z = (counts[big] - expected[big]) / np.sqrt(expected[big])
    assert np.max(np.abs(z)) < 5.5
    assert np.all(port[branch == 0] == -1)
    assert abs(np.mean(port[branch == 1]) - 0.5) < 0.01


def test_single_outcome_draw(model, grid):
    br, port, i, j = sample_pair_outcome(model, grid, 0.0, substream(3))
    assert br in Branch and 0 <= i < grid.size and 0 <= j < grid.size
    assert (port is None) == (br is Branch.A)
    if port is not None:
        assert port in Port


def test_ideal_detector_tag_timing(model, grid):
    cfg = ExperimentConfig(pulses_per_run=200_000, pair_rate=0.05, **CLEAN)
    s = generate_run(cfg, model, grid, 0.0)
    period = round(cfg.repetition_period / 1e-15)
    offset = round(cfg.port_offset / 1e-15)
    phase = s.timestamps % period
    assert set(np.unique(phase)) <= {0, offset}


def test_quantization_is_relative_to_the_pulse_epoch(model, grid):
    cfg = ExperimentConfig(pulses_per_run=100_000, pair_rate=0.05, jitter_fwhm=45e-12)
    s = generate_run(cfg, model, grid, 0.0)
    period = round(cfg.repetition_period / 1e-15)
    # offset from the epoch; jitter may put an early tag slightly before it
    rel = (s.timestamps + period // 4) % period - period // 4
    assert np.all(rel % 1500 == 0)
    assert np.any(rel < 0)


def test_jitter_width(model):
    g = bucket_grid(model)
    cfg = ExperimentConfig(pulses_per_run=400_000, pair_rate=0.05, tag_resolution=0.0)
    s = generate_run(cfg, model, g, 0.0)
    period = round(cfg.repetition_period / 1e-15)
    phase = (s.timestamps + period // 4) % (period // 2) - period // 4
    assert np.std(phase) * 1e-15 == pytest.approx(45e-12 * FWHM_TO_SIGMA, rel=0.02)


def test_crosstalk_duplicates_onto_neighbours(model, grid):
    cfg = ExperimentConfig(pulses_per_run=300_000, pair_rate=0.05, crosstalk_probability=0.2,
                           **CLEAN)
    s = generate_run(cfg, model, grid, 0.0)
    base = generate_run(ExperimentConfig(pulses_per_run=300_000, pair_rate=0.05, **CLEAN),
                        model, grid, 0.0)
    extra = len(s) - len(base)
    assert extra / len(base) == pytest.approx(0.2, abs=0.01)


def test_apply_detector_effects_single_tag():
    cfg = ExperimentConfig(tag_resolution=1.5e-12, jitter_fwhm=0.0, crosstalk_probability=1.0)
    out = apply_detector_effects(2_000, 0, cfg, substream(0), 4, epoch_fs=10_000)
    assert out[0] == (0, 10_000 + 1_500)
    assert out[1] == (1, 10_000 + 1_500)


def test_sampling_requires_coverage(model):
    narrow = PixelGrid.uniform(3, 0.5e12, 0.4e12, model.center_frequency)
    with pytest.raises(ConfigurationError):
        generate_run(ExperimentConfig(pulses_per_run=10), model, narrow, 0.0)


def test_detector_grid_defaults(model):
    g = detector_grid(model)
    assert g.size == 8
    assert g.pitch == pytest.approx(1.8e12)
    assert g.bin_width == pytest.approx(0.36e12)
