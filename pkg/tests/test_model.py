import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import erf

from frhom.errors import ConfigurationError
from frhom.model import (
    Branch,
    PixelGrid,
    SourceKind,
    SpectralModel,
    beat_frequency,
    bin_derivative_table,
    bin_probability,
    bin_probability_approx,
    bin_probability_table,
    gaussian_mass,
    grid_moments,
    joint_density,
    nonresolved_probability,
    sinc,
    sinc_derivatives,
)
from frhom.quadrature import integrate_2d

TAU = 0.44e-12


def moments_closed_form(a, b, theta):
    """Complex-error-function values of the five per-bin moments."""
    big_phi = lambda z: 0.5 * (1 + erf(z / math.sqrt(2)))  # noqa: E731
    phi = lambda x: math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)  # noqa: E731
    m = math.exp(-0.5 * theta**2) * (big_phi(b - 1j * theta) - big_phi(a - 1j * theta))
    xm = phi(a) * np.exp(1j * theta * a) - phi(b) * np.exp(1j * theta * b) + 1j * theta * m
    i0 = big_phi(b).real - big_phi(a).real
    return np.array([i0, m.real, m.imag, xm.real, xm.imag])


# --- sinc ------------------------------------------------------------------


def test_sinc_removable_singularity():
    assert sinc(0.0) == 1.0
    x = np.array([1e-6, 5e-5, 2e-4, 0.3, 3.0])
    np.testing.assert_allclose(sinc(x), np.sin(x) / x, rtol=1e-15)


@given(st.floats(-20, 20).filter(lambda x: abs(x) > 1e-3))
def test_sinc_derivatives_against_direct_formulas(x):
    s0, s1, s2 = sinc_derivatives(x)
    assert s0 == pytest.approx(math.sin(x) / x, rel=1e-12, abs=1e-14)
    assert s1 == pytest.approx((x * math.cos(x) - math.sin(x)) / x**2, rel=1e-9, abs=1e-12)
    assert s2 == pytest.approx(
        ((2 - x * x) * math.sin(x) - 2 * x * math.cos(x)) / x**3, rel=1e-7, abs=1e-10
    )


def test_sinc_derivatives_continuous_across_series_switch():
    lo = sinc_derivatives(0.05 * (1 - 1e-12))
    hi = sinc_derivatives(0.05 * (1 + 1e-12))
    np.testing.assert_allclose(lo, hi, rtol=1e-10)
    assert sinc_derivatives(0.0) == (1.0, 0.0, pytest.approx(-1 / 3))


# --- model and grid ---------------------------------------------------------


def test_coherent_visibility_cap_and_override():
    with pytest.raises(ConfigurationError):
        SpectralModel.from_coherence_time(TAU, 0.6)
    m = SpectralModel.from_coherence_time(TAU, 0.6, allow_high_visibility=True)
    assert m.visibility == 0.6
    assert SpectralModel.from_coherence_time(TAU, 0.9,
                                             source_kind=SourceKind.SINGLE_PHOTON).visibility == 0.9
    with pytest.raises(ConfigurationError):
        SpectralModel.from_coherence_time(TAU, 0.0)


def test_tau_sigma_relation(model):
    assert model.sigma == pytest.approx(1 / (2 * TAU))
    assert model.tau == pytest.approx(TAU)


def test_grid_validation():
    with pytest.raises(ConfigurationError):
        PixelGrid((0.0, 1.0), 1.5)
    with pytest.raises(ConfigurationError):
        PixelGrid((1.0, 0.0), 0.5)
    with pytest.raises(ConfigurationError):
        PixelGrid((), 1.0)


def test_uniform_grid_pitch_and_beats(model):
    g = PixelGrid.uniform(8, 1.8e12, 0.36e12, model.center_frequency)
    assert g.pitch == pytest.approx(1.8e12)
    assert beat_frequency(g, 1, 4) == pytest.approx(3 * 1.8e12)
    assert np.mean(g.centers) == pytest.approx(model.center_frequency)


def test_refined_grid_nests(model):
    g = PixelGrid.indexed(model, 1e12, 2)
    r = g.refined()
    assert r.size == 2 * g.size
    lo, hi = g.edges()
    rlo, rhi = r.edges()
    np.testing.assert_allclose(rlo[0::2], lo, rtol=0, atol=1e-3)
    np.testing.assert_allclose(rhi[1::2], hi, rtol=0, atol=1e-3)


def test_covering_grid_reaches_requested_sigma(model):
    g = PixelGrid.covering(model, 0.7e12, 6)
    assert g.coverage(model) >= 6
    assert g.size % 2 == 1


# --- densities ----------------------------------------------------------------


@pytest.mark.parametrize("delay", [0.0, 0.3e-12, 1.7e-12])
def test_joint_density_normalization(model, delay):
    s, w0 = model.sigma, model.center_frequency

    def f(x1, x2):
        w1, w2 = w0 + s * x1, w0 + s * x2
        return s * s * sum(joint_density(model, delay, w1, w2, b) for b in Branch)

    res = integrate_2d(f, (-12, 12), (-12, 12), rtol=1e-10, initial_panels=4)
    assert res.value == pytest.approx(1.0, abs=1e-6)


def test_nonresolved_closed_form(model):
    assert nonresolved_probability(model, 0.0, Branch.A) == pytest.approx(0.3)
    assert nonresolved_probability(model, 0.0, Branch.B) == pytest.approx(0.7)
    assert nonresolved_probability(model, 50 * TAU, Branch.A) == pytest.approx(0.5)


# --- bin probabilities --------------------------------------------------------


@given(st.floats(-4, 3), st.floats(0.05, 2.0), st.floats(0, 6))
def test_moments_match_complex_erf(a, width, theta):
    sigma = 1 / (2 * TAU)
    m = SpectralModel(0.0, sigma, 0.4)
    g = PixelGrid(((a + width / 2) * sigma,), width * sigma)
    got = grid_moments(m, g, theta / sigma)[:, 0]
    np.testing.assert_allclose(got, moments_closed_form(a, a + width, theta), rtol=1e-8,
                               atol=1e-12)


def test_moment_and_direct_paths_agree(model, grid):
    for delay in (0.0, 0.8e-12, 3.1e-12):
        for i, j in ((3, 3), (2, 5), (0, 7)):
            for b in Branch:
                p1 = bin_probability(model, grid, delay, i, j, b)
                p2 = bin_probability(model, grid, delay, i, j, b, method="direct")
                assert p1 == pytest.approx(p2, rel=1e-7, abs=1e-20)


def test_table_is_symmetric(model, grid):
    p = bin_probability_table(model, grid, 1.1e-12)
    np.testing.assert_allclose(p, p.transpose(0, 2, 1), rtol=1e-12)


@pytest.mark.parametrize("delay", [0.0, 0.4e-12, 1.2e-12, 2.5e-12])
def test_bin_sums_reproduce_bucket_probability(model, delay):
    g = PixelGrid.covering(model, 0.5e12, 8)
    p = bin_probability_table(model, g, delay)
    for idx, b in enumerate(Branch):
        assert p[idx].sum() == pytest.approx(nonresolved_probability(model, delay, b), abs=1e-4)


def test_flat_bin_approximation_for_narrow_bins(model):
    g = PixelGrid.uniform(5, 0.3e12, 0.01e12, model.center_frequency)
    for delay in (0.5e-12, 2e-12):
        exact = bin_probability(model, g, delay, 1, 3, Branch.A)
        approx = bin_probability_approx(model, g, delay, 1, 3, Branch.A)
        assert approx == pytest.approx(exact, rel=1e-3)


def test_derivative_table_against_finite_difference(model, grid):
    h = 1e-17
    for delay in (0.2e-12, 1.3e-12, 3.3e-12):
        d = bin_derivative_table(model, grid, delay)
        fd = (
            -bin_probability_table(model, grid, delay + 2 * h)
            + 8 * bin_probability_table(model, grid, delay + h)
            - 8 * bin_probability_table(model, grid, delay - h)
            + bin_probability_table(model, grid, delay - 2 * h)
        ) / (12 * h)
        big = np.abs(d) > 1e-6 * np.abs(d).max()
        np.testing.assert_allclose(fd[big], d[big], rtol=1e-5)
        np.testing.assert_allclose(d[0], -d[1])


def test_gaussian_mass(model):
    w0, s = model.center_frequency, model.sigma
    assert gaussian_mass(model, w0 - s, w0 + s) == pytest.approx(0.682689492137, rel=1e-10)
