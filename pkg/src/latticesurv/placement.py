"""Ordinal model for discharge placement.

Placement is an ordered categorical outcome with six levels, from discharge
home (level 0) up through other less-acute inpatient care (level 5). The
model is a cumulative-logit: each of the five "at least level k" events gets
a logistic probability driven by a per-cohort threshold plus an optional
covariate shift, and category probabilities are successive differences of
those exceedance probabilities.

Thresholds are stored unconstrained and mapped through
:func:`threshold_transform`, which forces them strictly decreasing so the
exceedance probabilities decrease in k and every category probability is
non-negative.
"""

from __future__ import annotations

import numpy as np

from .numerics import sigmoid, softplus

#: Ordered placement levels, least to most acute.
PLACEMENT_LEVELS = (
    "home",
    "home_health",
    "skilled_nursing",
    "intermediate_care",
    "long_term_care",
    "other_inpatient",
)

N_LEVELS = len(PLACEMENT_LEVELS)
N_THRESHOLDS = N_LEVELS - 1


def threshold_transform(raw) -> np.ndarray:
    """Map unconstrained values to strictly decreasing thresholds.

    The first entry passes through; each later entry sits a softplus-sized
    gap below its predecessor, so the output is strictly ordered for any
    finite input.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.shape[-1] != N_THRESHOLDS:
        raise ValueError(f"expected trailing axis of {N_THRESHOLDS}")
    gaps = softplus(raw[..., 1:])
    out = np.empty_like(raw)
    out[..., 0] = raw[..., 0]
    np.cumsum(gaps, axis=-1, out=out[..., 1:])
    out[..., 1:] = out[..., :1] - out[..., 1:]
    return out


def exceedance_probabilities(thresholds, shift=0.0) -> np.ndarray:
    """P(level >= k) for k = 1..5 from ordered thresholds plus a shift.

    ``thresholds`` must be strictly decreasing along the trailing axis, as
    produced by :func:`threshold_transform`; ``shift`` broadcasts against the
    leading axes (a scalar or one value per row).
    """
    thresholds = np.asarray(thresholds, dtype=float)
    if thresholds.shape[-1] != N_THRESHOLDS:
        raise ValueError(f"expected trailing axis of {N_THRESHOLDS}")
    if np.any(np.diff(thresholds, axis=-1) >= 0):
        raise ValueError("thresholds must be strictly decreasing")
    shift = np.asarray(shift, dtype=float)
    return sigmoid(thresholds + shift[..., None])


def category_probabilities(exceedance) -> np.ndarray:
    """Per-level probabilities from exceedance probabilities.

    The six outputs are ``1 - P(>=1)``, the successive differences, and
    ``P(>=5)``; they are non-negative and sum to one when the input is a
    valid non-increasing exceedance profile. A genuinely increasing pair
    raises, since it signals a violated threshold ordering upstream.
    """
    exceedance = np.asarray(exceedance, dtype=float)
    if exceedance.shape[-1] != N_THRESHOLDS:
        raise ValueError(f"expected trailing axis of {N_THRESHOLDS}")
    padded_hi = np.concatenate(
        [np.ones(exceedance.shape[:-1] + (1,)), exceedance], axis=-1)
    padded_lo = np.concatenate(
        [exceedance, np.zeros(exceedance.shape[:-1] + (1,))], axis=-1)
    probs = padded_hi - padded_lo
    if np.any(probs < -1e-12):
        raise ValueError("negative category probability; "
                         "exceedance profile is not non-increasing")
    return np.clip(probs, 0.0, None)


def placement_log_likelihood(placement, category_probs) -> np.ndarray:
    """Log probability of observed placement levels.

    ``placement`` holds integers in ``{0..5}``; zero-probability categories
    yield ``-inf`` rather than raising, so callers can decide how to treat
    divergent rows.
    """
    placement = np.asarray(placement)
    probs = np.asarray(category_probs, dtype=float)
    if np.any((placement < 0) | (placement >= N_LEVELS)):
        raise ValueError(f"placement must lie in [0, {N_LEVELS})")
    picked = np.take_along_axis(probs, placement[..., None], axis=-1)[..., 0]
    with np.errstate(divide="ignore"):
        return np.log(picked)
