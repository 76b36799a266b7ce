import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from frhom.errors import QuadratureError
from frhom.quadrature import integrate_1d, integrate_2d


@given(st.integers(0, 31), st.floats(-3, 3), st.floats(0.1, 4))
def test_polynomials_up_to_degree_31_are_exact(deg, a, width):
    b = a + width
    res = integrate_1d(lambda x: x**deg, a, b, rtol=1e-13)
    exact = (b ** (deg + 1) - a ** (deg + 1)) / (deg + 1)
    assert res.value == pytest.approx(exact, rel=1e-11, abs=1e-11)
    assert res.panels == 1


def test_gaussian_against_erf():
    res = integrate_1d(lambda x: np.exp(-0.5 * x * x), -1.3, 2.7, rtol=1e-12)
    exact = math.sqrt(math.pi / 2) * (math.erf(2.7 / math.sqrt(2)) + math.erf(1.3 / math.sqrt(2)))
    assert res.value == pytest.approx(exact, rel=1e-12)


def test_oscillatory_integrand_refines():
    res = integrate_1d(lambda x: np.cos(40 * x), 0.0, 3.0, rtol=1e-10)
    assert res.value == pytest.approx(math.sin(120.0) / 40, rel=1e-9)
    assert res.panels > 1


def test_vector_valued_components():
    res = integrate_1d(lambda x: np.stack([np.ones_like(x), x, x * x]), 0.0, 2.0)
    np.testing.assert_allclose(res.value, [2.0, 2.0, 8.0 / 3.0], rtol=1e-12)


def test_separable_2d_against_product():
    f = lambda x, y: np.exp(-x * x) * np.cos(3 * y)  # noqa: E731
    res = integrate_2d(f, (-2.0, 1.0), (0.0, 2.0), rtol=1e-11)
    gx = math.sqrt(math.pi) / 2 * (math.erf(1.0) + math.erf(2.0))
    gy = math.sin(6.0) / 3
    assert res.value == pytest.approx(gx * gy, rel=1e-10)


def test_2d_kink_needs_subdivision():
    res = integrate_2d(lambda x, y: np.abs(x - y), (0.0, 1.0), (0.0, 1.0), rtol=1e-8)
    assert res.value == pytest.approx(1.0 / 3.0, rel=1e-8)


def test_failure_reports_achieved_error():
    with pytest.raises(QuadratureError) as info:
        integrate_1d(lambda x: 1.0 / np.sqrt(np.abs(x)), -1.0, 1.0, rtol=1e-14, max_level=3)
    assert info.value.achieved_error > 0
    assert math.isfinite(info.value.value)
