"""Checks for the shared numeric helpers."""

import numpy as np
import pytest
from scipy import integrate

from latticesurv.numerics import (
    LOG_TWO_PI,
    gaussian_log_density,
    half_cauchy_log_density,
    log_sigmoid,
    sigmoid,
    softplus,
    softplus_inverse,
)


def test_sigmoid_known_values():
    np.testing.assert_allclose(sigmoid(0.0), 0.5, rtol=1e-15)
    np.testing.assert_allclose(sigmoid(2.0), 1.0 / (1.0 + np.exp(-2.0)), rtol=1e-14)
    assert sigmoid(-800.0) == 0.0
    assert sigmoid(800.0) == 1.0


def test_softplus_matches_naive_form_in_safe_range():
    x = np.linspace(-30.0, 30.0, 241)
    np.testing.assert_allclose(softplus(x), np.log1p(np.exp(x)), rtol=1e-12)


def test_softplus_large_arguments_do_not_overflow():
    x = np.array([-1e4, 0.0, 1e4])
    y = softplus(x)
    assert np.all(np.isfinite(y))
    assert y[0] == 0.0
    np.testing.assert_allclose(y[2], 1e4, rtol=1e-15)


def test_softplus_inverse_round_trip():
    y = np.array([1e-8, 0.5, 3.0, 40.0])
    np.testing.assert_allclose(softplus(softplus_inverse(y)), y, rtol=1e-7)
    with pytest.raises(ValueError):
        softplus_inverse(0.0)
    with pytest.raises(ValueError):
        softplus_inverse(np.array([1.0, -0.5]))


def test_log_sigmoid_is_log_of_sigmoid():
    x = np.linspace(-20.0, 20.0, 81)
    np.testing.assert_allclose(log_sigmoid(x), np.log(sigmoid(x)), atol=1e-12)
    # far negative tail stays finite and linear
    np.testing.assert_allclose(log_sigmoid(-500.0), -500.0, rtol=1e-12)


def test_gaussian_log_density_matches_quadrature_normalization():
    scale = 2.3
    total, _ = integrate.quad(
        lambda x: np.exp(gaussian_log_density(x, scale)), -40.0, 40.0
    )
    np.testing.assert_allclose(total, 1.0, rtol=1e-9)
    np.testing.assert_allclose(
        gaussian_log_density(0.0, 5.0), -0.5 * LOG_TWO_PI - np.log(5.0), rtol=1e-14
    )


def test_half_cauchy_log_density_normalizes_on_positive_axis():
    total, _ = integrate.quad(
        lambda x: np.exp(half_cauchy_log_density(x)), 0.0, np.inf
    )
    np.testing.assert_allclose(total, 1.0, rtol=1e-8)
    assert half_cauchy_log_density(-1.0) == -np.inf
    assert half_cauchy_log_density(0.0) == -np.inf
