import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special as sp

from zippca.special import digamma, log_beta, log_factorial, trigamma

positive = st.floats(min_value=1e-6, max_value=1e6, allow_nan=False)


class TestAgainstScipy:
    grid = np.concatenate([np.geomspace(1e-6, 1e6, 400), np.linspace(0.1, 20, 400)])

    def test_digamma(self):
        np.testing.assert_allclose(digamma(self.grid), sp.digamma(self.grid), rtol=1e-13, atol=1e-14)

    def test_trigamma(self):
        np.testing.assert_allclose(trigamma(self.grid), sp.polygamma(1, self.grid), rtol=1e-13)

    def test_log_beta(self):
        a, b = np.meshgrid(self.grid[::20], self.grid[::25])
        # lgamma differences cancel, so the attainable error scales with the terms
        scale = np.abs(sp.gammaln(a)) + np.abs(sp.gammaln(b)) + np.abs(sp.gammaln(a + b))
        err = np.abs(log_beta(a, b) - sp.betaln(a, b))
        assert np.all(err <= 1e-12 * np.abs(sp.betaln(a, b)) + 8 * np.finfo(float).eps * scale)

    def test_log_factorial(self):
        k = np.arange(0, 500, dtype=float)
        np.testing.assert_allclose(log_factorial(k), sp.gammaln(k + 1), rtol=1e-13, atol=1e-13)


class TestKnownValues:
    def test_digamma_one_is_minus_euler_gamma(self):
        assert digamma(1.0) == pytest.approx(-np.euler_gamma, abs=1e-15)

    def test_trigamma_one(self):
        assert trigamma(1.0) == pytest.approx(math.pi**2 / 6, rel=1e-15)

    def test_digamma_half(self):
        assert digamma(0.5) == pytest.approx(-np.euler_gamma - 2 * math.log(2), rel=1e-14)

    def test_log_beta_one_one(self):
        assert log_beta(1.0, 1.0) == pytest.approx(0.0, abs=1e-15)

    def test_negative_non_integer_uses_reflection(self):
        assert digamma(-0.5) == pytest.approx(sp.digamma(-0.5), rel=1e-13)
        assert trigamma(-1.5) == pytest.approx(sp.polygamma(1, -1.5), rel=1e-12)

    def test_poles_are_nan(self):
        assert np.isnan(digamma(0.0))
        assert np.isnan(trigamma(-2.0))


@settings(max_examples=200, deadline=None)
@given(positive)
def test_digamma_recurrence(x):
    # adding 1/x to a value of size 1/x cancels, so allow eps-level error relative to it
    assert digamma(x + 1) == pytest.approx(digamma(x) + 1 / x, rel=1e-12, abs=1e-14 * (1 + 1 / x))


@settings(max_examples=200, deadline=None)
@given(positive)
def test_trigamma_positive_and_decreasing(x):
    assert trigamma(x) > 0
    assert trigamma(x) >= trigamma(x * 1.5)


@settings(max_examples=100, deadline=None)
@given(positive, positive)
def test_log_beta_symmetric(a, b):
    assert log_beta(a, b) == pytest.approx(log_beta(b, a), rel=1e-14, abs=1e-14)
