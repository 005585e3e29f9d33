"""Piecewise-constant hazard survival arithmetic with right censoring.

Time is partitioned into intervals by a strictly increasing breakpoint
sequence; the hazard is constant within each interval and the final interval
extends to infinity at the last rate. All functions broadcast over a leading
batch axis and operate in log-hazard space where possible.
"""

from __future__ import annotations

import numpy as np

from .numerics import softplus

#: Default interval edges in days: one, four, and nine weeks.
DEFAULT_BREAKPOINTS = (7.0, 28.0, 63.0)

#: Number of ordered placement levels above the reference ("home") level.
N_ACUITY = 5


def validate_breakpoints(breakpoints) -> np.ndarray:
    bp = np.asarray(breakpoints, dtype=float)
    if bp.ndim != 1 or bp.size == 0:
        raise ValueError("breakpoints must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(bp)):
        raise ValueError("breakpoints must be finite")
    if bp[0] <= 0 or np.any(np.diff(bp) <= 0):
        raise ValueError("breakpoints must be strictly increasing and positive")
    return bp


def n_intervals(breakpoints) -> int:
    return validate_breakpoints(breakpoints).size + 1


def interval_index(t, breakpoints) -> np.ndarray:
    """Index of the interval containing each time (boundaries go right)."""
    bp = validate_breakpoints(breakpoints)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ValueError("times must be finite and non-negative")
    return np.searchsorted(bp, t, side="right")


def interval_overlaps(t, breakpoints) -> np.ndarray:
    """Time spent in each interval before ``t``, shape ``t.shape + (K,)``."""
    bp = validate_breakpoints(breakpoints)
    t = np.asarray(t, dtype=float)
    edges = np.concatenate([[0.0], bp])
    upper = np.concatenate([bp, [np.inf]])
    tt = t[..., None]
    return np.clip(np.minimum(tt, upper) - edges, 0.0, None)


def cumulative_hazard(t, log_hazards, breakpoints) -> np.ndarray:
    """Integrated hazard up to ``t``.

    ``log_hazards`` has shape ``(K,)`` or ``batch + (K,)`` aligned with ``t``.
    """
    overlaps = interval_overlaps(t, breakpoints)
    rates = np.exp(np.asarray(log_hazards, dtype=float))
    return np.sum(rates * overlaps, axis=-1)


def log_likelihood(t, event, log_hazards, breakpoints) -> np.ndarray:
    """Log likelihood of observed or right-censored waits.

    An event at ``t`` contributes the log hazard of its interval minus the
    cumulative hazard; a censored observation contributes only the negative
    cumulative hazard.

    Parameters
    ----------
    t : array_like
        Non-negative wait times.
    event : array_like of bool
        True where the wait ended in an event, False where censored.
    log_hazards : array_like
        Per-interval log hazards, shape ``(K,)`` or ``t.shape + (K,)``.
    breakpoints : array_like
        Strictly increasing interval edges.
    """
    t = np.asarray(t, dtype=float)
    event = np.asarray(event, dtype=bool)
    lh = np.asarray(log_hazards, dtype=float)
    lam = np.exp(lh)
    overlaps = interval_overlaps(t, breakpoints)
    cum = np.sum(lam * overlaps, axis=-1)
    idx = interval_index(t, breakpoints)
    if lh.ndim == 1:
        at_event = lh[idx]
    else:
        at_event = np.take_along_axis(lh, idx[..., None], axis=-1)[..., 0]
    return np.where(event, at_event, 0.0) - cum


def event_probability(log_hazards, horizon, breakpoints) -> np.ndarray:
    """Probability of an event on or before ``horizon``."""
    horizon = float(horizon)
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    lh = np.asarray(log_hazards, dtype=float)
    batch = lh.shape[:-1]
    t = np.full(batch, horizon) if batch else horizon
    return -np.expm1(-cumulative_hazard(t, lh, breakpoints))


def constrain_placement_coefficients(raw) -> np.ndarray:
    """Map raw placement coefficients to their constrained form.

    The trailing axis holds the five exceedance-probability coefficients
    followed by the five indicator coefficients; the indicator half is forced
    non-positive through a negated softplus so that a higher placement level
    can never raise the hazard.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.shape[-1] != 2 * N_ACUITY:
        raise ValueError(f"expected trailing axis of {2 * N_ACUITY}")
    out = raw.copy()
    out[..., N_ACUITY:] = -softplus(raw[..., N_ACUITY:])
    return out


def build_intervention_covariates(placement, exceedance) -> np.ndarray:
    """Stack exceedance probabilities and placement indicators.

    Parameters
    ----------
    placement : array_like of int
        Ordinal placement levels in ``{0, ..., 5}``.
    exceedance : array_like
        Exceedance probabilities ``P(level >= k)`` for ``k = 1..5``, shape
        ``(5,)`` or ``(B, 5)``, non-increasing along the trailing axis.

    Returns
    -------
    ndarray
        Ten covariates per row: the five probabilities, then the five
        indicators ``1{placement >= k}``.
    """
    placement = np.asarray(placement)
    exceedance = np.asarray(exceedance, dtype=float)
    if np.any((placement < 0) | (placement > N_ACUITY)):
        raise ValueError("placement must lie in {0..5}")
    if exceedance.shape[-1] != N_ACUITY:
        raise ValueError(f"expected {N_ACUITY} exceedance probabilities")
    if np.any(exceedance < -1e-12) or np.any(exceedance > 1 + 1e-12):
        raise ValueError("exceedance probabilities must lie in [0, 1]")
    if np.any(np.diff(exceedance, axis=-1) > 1e-12):
        raise ValueError("exceedance probabilities must be non-increasing")
    levels = np.arange(1, N_ACUITY + 1)
    indicators = (placement[..., None] >= levels).astype(float)
    probs = np.broadcast_to(exceedance, indicators.shape)
    return np.concatenate([probs, indicators], axis=-1)


def combine_log_hazard(baseline, feature_term, placement_coef, intervention) -> np.ndarray:
    """Per-interval log hazard from its three additive pieces.

    ``baseline`` and ``feature_term`` have shape ``(..., K)``;
    ``placement_coef`` is the constrained coefficient block ``(..., K, 10)``
    and ``intervention`` the covariate vector ``(..., 10)``.
    """
    baseline = np.asarray(baseline, dtype=float)
    feature_term = np.asarray(feature_term, dtype=float)
    placement_coef = np.asarray(placement_coef, dtype=float)
    intervention = np.asarray(intervention, dtype=float)
    return baseline + feature_term + np.einsum(
        "...kj,...j->...k", placement_coef, intervention)
