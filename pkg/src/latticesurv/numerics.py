"""Numerically stable scalar transforms and log densities.

Everything here operates elementwise on float64 arrays and is shared by the
model, prior, and inference modules.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

LOG_TWO_PI = float(np.log(2.0 * np.pi))
# log of the half-Cauchy normalizer 2/pi
_HALF_CAUCHY_LOG_NORM = float(np.log(2.0) - np.log(np.pi))


def sigmoid(x):
    """Logistic function, stable for large |x|."""
    return expit(x)


def softplus(x):
    """log(1 + exp(x)) computed without overflow."""
    return np.logaddexp(0.0, x)


def log_sigmoid(x):
    """log(sigmoid(x)), stable in both tails."""
    return -np.logaddexp(0.0, -np.asarray(x, dtype=float))


def softplus_inverse(y):
    """Inverse of :func:`softplus`. Input must be strictly positive."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0.0):
        raise ValueError("softplus_inverse requires strictly positive input")
    return y + np.log1p(-np.exp(-y))


def gaussian_log_density(x, scale):
    """Elementwise log density of a centered normal with the given scale."""
    x = np.asarray(x, dtype=float)
    scale = np.asarray(scale, dtype=float)
    return -0.5 * LOG_TWO_PI - np.log(scale) - 0.5 * (x / scale) ** 2


def half_cauchy_log_density(x):
    """Elementwise log density of a standard half-Cauchy; -inf off support."""
    x = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore"):
        out = _HALF_CAUCHY_LOG_NORM - np.log1p(x * x)
    return np.where(x > 0.0, out, -np.inf)
