"""Classification metrics, bootstrap uncertainty, and posterior reports.

The two ranking metrics are computed from integer pair counts over tied
score groups, so they agree exactly (not just within tolerance) with
brute-force enumeration over positive/negative pairs and threshold sweeps.
Bootstrap resamples derive one seed per resample, which keeps results
reproducible and order-independent.

The report helpers summarize a fitted posterior the way the model is meant
to be read: baseline log-hazards per cohort and interval, placement effect
means and spreads per cohort, and the largest feature coefficients.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import hazard, placement
from .inference import MeanFieldPosterior, sample_parameters
from .lattice import LatticeDecomposition, subset_label
from .model import LatticeSurvivalModel
from .numerics import softplus


def _validate_scored(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    if scores.size == 0:
        raise ValueError("empty input")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def _tie_groups(scores: np.ndarray, labels: np.ndarray):
    """Per distinct score, ascending: (positives, negatives) integer counts."""
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    starts = np.concatenate([[0], np.flatnonzero(np.diff(s)) + 1])
    ends = np.concatenate([starts[1:], [s.size]])
    pos = np.add.reduceat(y, starts)
    total = ends - starts
    return pos, total - pos


def auroc(scores, labels) -> float:
    """Probability a random positive outranks a random negative, ties half.

    Raises if only one class is present.
    """
    scores, labels = _validate_scored(scores, labels)
    pos, neg = _tie_groups(scores, labels)
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes must be present")
    neg_below = np.concatenate([[0], np.cumsum(neg)[:-1]])
    wins = int((pos * neg_below).sum())
    ties = int((pos * neg).sum())
    return (wins + 0.5 * ties) / (n_pos * n_neg)


def auprc(scores, labels) -> float:
    """Average precision over the tie-grouped threshold sweep.

    Each distinct score is one threshold; the group's recall increment is
    weighted by the precision after including that group. Raises without a
    positive example.
    """
    scores, labels = _validate_scored(scores, labels)
    pos, neg = _tie_groups(scores, labels)
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise ValueError("at least one positive required")
    pos_desc = pos[::-1]
    total_desc = (pos + neg)[::-1]
    cum_pos = np.cumsum(pos_desc)
    cum_total = np.cumsum(total_desc)
    return float(np.sum((pos_desc / n_pos) * (cum_pos / cum_total)))


def bootstrap_sd(scores, labels, metric: Callable[[np.ndarray, np.ndarray], float],
                 resamples: int = 1000, seed: int = 0,
                 max_redraws: int = 100) -> float:
    """Standard deviation of ``metric`` over with-replacement resamples.

    Each resample draws from its own derived seed. A resample on which the
    metric is undefined (single class, say) is redrawn from the same stream,
    up to ``max_redraws`` attempts, after which it is dropped.
    """
    scores, labels = _validate_scored(scores, labels)
    if resamples < 100:
        raise ValueError("resamples must be at least 100")
    n = scores.size
    values = []
    for r in range(resamples):
        rng = np.random.default_rng([seed, r])
        for _ in range(max_redraws):
            idx = rng.integers(0, n, n)
            try:
                values.append(metric(scores[idx], labels[idx]))
            except ValueError:
                continue
            break
    if len(values) < 2:
        raise ValueError("too few valid resamples")
    return float(np.std(values, ddof=1))


def horizon_labels(wait, event, horizon: float):
    """Binary labels for "event within ``horizon``", honoring censoring.

    Episodes censored before the horizon carry no label and are excluded.
    Returns ``(labels, included_mask, n_excluded)``; ``labels`` covers only
    the included rows.
    """
    wait = np.asarray(wait, dtype=float)
    event = np.asarray(event, dtype=bool)
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    included = (event & (wait <= horizon)) | (wait >= horizon)
    labels = (event & (wait <= horizon))[included].astype(np.int64)
    return labels, included, int((~included).sum())


# ---------------------------------------------------------------------------
# posterior reports


def _decomposition_from(model: LatticeSurvivalModel, group: str,
                        values: dict) -> LatticeDecomposition:
    spec = model.specs[group]
    components = {s: values[f"{group}.{subset_label(s)}"] for s in spec.subsets()}
    return LatticeDecomposition(spec, model.tails[group], components)


@dataclass
class CohortTable:
    """A per-cohort-cell report with mean and sd arrays over a value grid."""

    dims: tuple[str, ...]
    sizes: tuple[int, ...]
    value_names: tuple[str, ...]     # names for the flattened tail axes
    mean: np.ndarray                 # sizes + tail
    sd: np.ndarray

    def rows(self):
        tail = self.mean.shape[len(self.sizes):]
        flat_mean = self.mean.reshape(self.sizes + (-1,))
        flat_sd = self.sd.reshape(self.sizes + (-1,))
        n_vals = flat_mean.shape[-1]
        assert n_vals == len(self.value_names), "value_names mismatch"
        for cell in np.ndindex(*self.sizes):
            base = {d: int(c) for d, c in zip(self.dims, cell)}
            for j in range(n_vals):
                row = dict(base)
                row["quantity"] = self.value_names[j]
                row["mean"] = float(flat_mean[cell][j])
                row["sd"] = float(flat_sd[cell][j])
                yield row

    def write_csv(self, path: str | Path) -> None:
        fields = list(self.dims) + ["quantity", "mean", "sd"]
        with Path(path).open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for row in self.rows():
                writer.writerow(row)


def _interval_names(n_intervals: int, per: Sequence[str]) -> tuple[str, ...]:
    return tuple(f"interval{i}:{name}" for i in range(n_intervals)
                 for name in per)


def cohort_effect_summary(model: LatticeSurvivalModel,
                          posterior: MeanFieldPosterior, draws: int = 200,
                          seed: int = 0) -> CohortTable:
    """Posterior mean and sd of the constrained placement indicator effects.

    Monte-Carlo over posterior draws; each draw assembles the effects
    decomposition on its full grid and applies the non-positivity
    constraint, so the summary reflects exactly what enters the hazard.
    """
    if draws < 2:
        raise ValueError("draws must be at least 2")
    spec = model.specs["effects"]
    n_acuity = hazard.N_ACUITY
    off = model.indicator_offset
    rng = np.random.default_rng(seed)
    total = None
    total_sq = None
    for params in sample_parameters(posterior, draws, rng):
        grid = _decomposition_from(model, "effects", params).assemble_all()
        constrained = -softplus(grid[..., off:])
        if total is None:
            total = np.zeros_like(constrained)
            total_sq = np.zeros_like(constrained)
        total += constrained
        total_sq += constrained ** 2
    mean = total / draws
    var = np.maximum(total_sq / draws - mean ** 2, 0.0)
    sd = np.sqrt(var * draws / (draws - 1))
    names = _interval_names(model.n_intervals,
                            [f"indicator>={k}" for k in range(1, n_acuity + 1)])
    return CohortTable(spec.names, spec.sizes, names, mean, sd)


def baseline_hazard_report(model: LatticeSurvivalModel,
                           posterior: MeanFieldPosterior) -> CohortTable:
    """Posterior mean and sd of assembled baseline log-hazards, analytically.

    Assembly is linear and every baseline block uses the identity bijector,
    so means add and variances add across independent components.
    """
    spec = model.specs["baseline"]
    mean = _decomposition_from(
        model, "baseline", posterior.mean).assemble_all()
    var = _decomposition_from(
        model, "baseline",
        {k: np.exp(2.0 * v) for k, v in posterior.log_sd.items()
         if k.startswith("baseline.")}).assemble_all()
    names = _interval_names(model.n_intervals, ["log_hazard"])
    return CohortTable(spec.names, spec.sizes, names, mean, np.sqrt(var))


def threshold_report(model: LatticeSurvivalModel,
                     posterior: MeanFieldPosterior, draws: int = 200,
                     seed: int = 0) -> CohortTable:
    """Posterior mean and sd of the ordered placement thresholds per cohort."""
    if draws < 2:
        raise ValueError("draws must be at least 2")
    spec = model.specs["thresholds"]
    rng = np.random.default_rng(seed)
    total = None
    total_sq = None
    for params in sample_parameters(posterior, draws, rng):
        grid = _decomposition_from(model, "thresholds", params).assemble_all()
        ordered = placement.threshold_transform(grid)
        if total is None:
            total = np.zeros_like(ordered)
            total_sq = np.zeros_like(ordered)
        total += ordered
        total_sq += ordered ** 2
    mean = total / draws
    var = np.maximum(total_sq / draws - mean ** 2, 0.0)
    sd = np.sqrt(var * draws / (draws - 1))
    names = tuple(f"threshold>={k}" for k in range(1, placement.N_LEVELS))
    return CohortTable(spec.names, spec.sizes, names, mean, sd)


def top_coefficients(model: LatticeSurvivalModel, posterior: MeanFieldPosterior,
                     interval: int, k: int,
                     feature_names: Sequence[str] | None = None) -> list[dict]:
    """The ``k`` features with the largest absolute pooled coefficient mean.

    Uses the pooled (shared) slopes component for the given interval, whose
    posterior mean and sd are exact under the identity bijector. Ties break
    by feature name; ``k`` beyond the feature count truncates.
    """
    if not 0 <= interval < model.n_intervals:
        raise ValueError("interval out of range")
    mean = posterior.mean["slopes.pooled"][interval]
    sd = np.exp(posterior.log_sd["slopes.pooled"][interval])
    p = mean.size
    if feature_names is None:
        feature_names = [f"feature{j}" for j in range(p)]
    if len(feature_names) != p:
        raise ValueError("feature_names length mismatch")
    ranked = sorted(range(p), key=lambda j: (-abs(mean[j]), feature_names[j]))
    return [{"feature": feature_names[j], "mean": float(mean[j]),
             "sd": float(sd[j])} for j in ranked[:max(0, k)]]


def write_metrics_json(metrics: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
