"""Joint discharge-placement and wait-time model over a cohort lattice.

One model ties the two likelihoods together. Each episode carries cohort
coordinates, a binary feature vector, an ordinal placement level, and a
(possibly censored) wait until unplanned return. Placement follows the
cumulative-logit model from :mod:`.placement` with lattice-decomposed
thresholds; the wait follows the piecewise-exponential likelihood from
:mod:`.hazard` whose per-interval log hazard is

    baseline(cohort) + slopes(cohort) . features + effects(cohort) . I

where ``I`` stacks the placement exceedance probabilities and indicators.
Because the probabilities entering ``I`` come from the placement submodel,
the survival likelihood backpropagates into the placement thresholds, which
is what lets observed hazards inform the placement fit and vice versa.

All parameter groups live on lattice decompositions (:mod:`.lattice`).
Baseline, effects, and thresholds get order-decaying Gaussian priors;
feature slopes (and the optional placement covariate shift) get a horseshoe
prior pooled within each component cell. Gradients of both likelihood and
priors are computed analytically, matching the inference engine's contract.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import hazard, placement
from .inference import (MeanFieldPosterior, ParamBlock, bijector_forward,
                        sample_parameters)
from .lattice import LatticeSpec, order_scale, subset_label
from .numerics import (gaussian_log_density, half_cauchy_log_density,
                       sigmoid, softplus)

CHECKPOINT_FORMAT = 1

#: Groups whose components take the order-decaying Gaussian prior.
_GAUSSIAN_GROUPS = ("baseline", "effects", "thresholds")

_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class DecompositionConfig:
    """Which lattice dimensions a parameter group varies over, and how far."""

    dims: tuple[str, ...]
    max_order: int

    def to_dict(self) -> dict:
        return {"dims": list(self.dims), "max_order": self.max_order}

    @classmethod
    def from_dict(cls, d: Mapping) -> "DecompositionConfig":
        return cls(tuple(d["dims"]), int(d["max_order"]))


DEFAULT_COHORT_DIMS = ("mdc", "history_group", "cc_mcc")


def _default_cohort() -> DecompositionConfig:
    return DecompositionConfig(DEFAULT_COHORT_DIMS, 2)


@dataclass
class ModelConfig:
    """Structure of a :class:`LatticeSurvivalModel`.

    ``lattice`` maps every cohort dimension name to its number of levels;
    the per-group decomposition configs pick which of those dimensions each
    parameter group varies over. ``covariate_placement`` switches on the
    feature-driven shift in the placement logits (off by default, matching
    the pure per-cohort placement model). ``exceedance_covariates`` controls
    whether the five placement exceedance probabilities enter the hazard
    alongside the five indicators; turning it off gives the ablated model
    that adjusts for the realized placement only.
    """

    lattice: dict[str, int]
    n_features: int
    breakpoints: tuple[float, ...] = hazard.DEFAULT_BREAKPOINTS
    baseline: DecompositionConfig = field(default_factory=_default_cohort)
    slopes: DecompositionConfig = field(
        default_factory=lambda: DecompositionConfig(("race",), 1))
    effects: DecompositionConfig = field(default_factory=_default_cohort)
    thresholds: DecompositionConfig = field(default_factory=_default_cohort)
    base_scale: float = 5.0
    scale_decay: float = 0.1
    covariate_placement: bool = False
    exceedance_covariates: bool = True

    def __post_init__(self):
        self.lattice = {str(k): int(v) for k, v in self.lattice.items()}
        self.breakpoints = tuple(float(b) for b in self.breakpoints)
        hazard.validate_breakpoints(self.breakpoints)
        if self.n_features < 1:
            raise ValueError("n_features must be positive")
        if self.base_scale <= 0 or not 0 < self.scale_decay <= 1:
            raise ValueError("base_scale must be positive and scale_decay in (0, 1]")
        for group in ("baseline", "slopes", "effects", "thresholds"):
            cfg = getattr(self, group)
            missing = [d for d in cfg.dims if d not in self.lattice]
            if missing:
                raise ValueError(f"{group} uses unknown lattice dims {missing}")

    def to_dict(self) -> dict:
        return {
            "lattice": dict(self.lattice),
            "n_features": self.n_features,
            "breakpoints": list(self.breakpoints),
            "baseline": self.baseline.to_dict(),
            "slopes": self.slopes.to_dict(),
            "effects": self.effects.to_dict(),
            "thresholds": self.thresholds.to_dict(),
            "base_scale": self.base_scale,
            "scale_decay": self.scale_decay,
            "covariate_placement": self.covariate_placement,
            "exceedance_covariates": self.exceedance_covariates,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(
            lattice=dict(d["lattice"]),
            n_features=int(d["n_features"]),
            breakpoints=tuple(d.get("breakpoints", hazard.DEFAULT_BREAKPOINTS)),
            baseline=DecompositionConfig.from_dict(d["baseline"]),
            slopes=DecompositionConfig.from_dict(d["slopes"]),
            effects=DecompositionConfig.from_dict(d["effects"]),
            thresholds=DecompositionConfig.from_dict(d["thresholds"]),
            base_scale=float(d.get("base_scale", 5.0)),
            scale_decay=float(d.get("scale_decay", 0.1)),
            covariate_placement=bool(d.get("covariate_placement", False)),
            exceedance_covariates=bool(d.get("exceedance_covariates", True)),
        )


@dataclass
class _ForwardCache:
    """Intermediates from the forward pass the backward pass reuses."""

    threshold_raw: np.ndarray     # (B, 5)  assembled, pre-ordering
    exceedance: np.ndarray        # (B, 5)
    category_probs: np.ndarray    # (B, 6)
    effects_raw: np.ndarray       # (B, K, 10) assembled, pre-constraint
    effects: np.ndarray           # (B, K, 10) constrained
    intervention: np.ndarray      # (B, 10)
    log_hazard: np.ndarray        # (B, K)


class LatticeSurvivalModel:
    """The joint model, exposing the protocol :func:`.inference.train` needs."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.n_intervals = hazard.n_intervals(config.breakpoints)
        # with exceedance covariates off, only the five indicators remain and
        # every effect coefficient is constrained non-positive
        self.indicator_offset = hazard.N_ACUITY if config.exceedance_covariates else 0
        self.n_intervention = self.indicator_offset + hazard.N_ACUITY
        self.specs = {
            "baseline": self._make_spec(config.baseline),
            "slopes": self._make_spec(config.slopes),
            "effects": self._make_spec(config.effects),
            "thresholds": self._make_spec(config.thresholds),
        }
        self.tails = {
            "baseline": (self.n_intervals,),
            "slopes": (self.n_intervals, config.n_features),
            "effects": (self.n_intervals, self.n_intervention),
            "thresholds": (placement.N_THRESHOLDS,),
        }
        self.blocks: list[ParamBlock] = []
        for group in ("baseline", "slopes", "effects", "thresholds"):
            spec = self.specs[group]
            tail = self.tails[group]
            for subset in spec.subsets():
                label = subset_label(subset)
                shape = spec.subset_shape(subset) + tail
                self.blocks.append(ParamBlock(f"{group}.{label}", shape))
                if group == "slopes":
                    self.blocks.append(
                        ParamBlock(f"slopes_local.{label}", shape, "softplus"))
                    self.blocks.append(
                        ParamBlock(f"slopes_global.{label}",
                                   spec.subset_shape(subset), "softplus"))
        if config.covariate_placement:
            p = config.n_features
            self.blocks.append(ParamBlock("covariate_shift", (p,)))
            self.blocks.append(ParamBlock("covariate_shift_local", (p,), "softplus"))
            self.blocks.append(ParamBlock("covariate_shift_global", (), "softplus"))

    def _make_spec(self, cfg: DecompositionConfig) -> LatticeSpec:
        sizes = tuple(self.config.lattice[d] for d in cfg.dims)
        return LatticeSpec(cfg.dims, sizes, cfg.max_order)

    # -- assembly ---------------------------------------------------------

    def _assemble_rows(self, group: str, params, coords, n_rows: int) -> np.ndarray:
        """Per-row assembled value for one parameter group: (B,) + tail."""
        spec = self.specs[group]
        out = np.zeros((n_rows,) + self.tails[group])
        for subset in spec.subsets():
            comp = params[f"{group}.{subset_label(subset)}"]
            if subset:
                out += comp[tuple(np.asarray(coords[d]) for d in subset)]
            else:
                out += comp
        return out

    def _scatter_rows(self, group: str, rows: np.ndarray, coords,
                      grads: dict) -> None:
        """Accumulate per-row gradients back into each component tensor."""
        spec = self.specs[group]
        for subset in spec.subsets():
            name = f"{group}.{subset_label(subset)}"
            if subset:
                g = np.zeros(spec.subset_shape(subset) + self.tails[group])
                np.add.at(g, tuple(np.asarray(coords[d]) for d in subset), rows)
            else:
                g = rows.sum(axis=0)
            grads[name] = g

    def _slope_cells(self, subset, coords, n_rows: int):
        """(flat cell id per row, number of cells) for a slopes subset."""
        if not subset:
            return np.zeros(n_rows, dtype=np.int64), 1
        sizes = tuple(self.config.lattice[d] for d in subset)
        idx = tuple(np.asarray(coords[d]) for d in subset)
        if len(subset) == 1:
            return np.asarray(idx[0], dtype=np.int64), sizes[0]
        return np.ravel_multi_index(idx, sizes), int(np.prod(sizes))

    def _feature_term(self, params, coords, features: np.ndarray) -> np.ndarray:
        """slopes(cohort) . x per row and interval, without a (B, K, p) blowup."""
        n_rows = features.shape[0]
        out = np.zeros((n_rows, self.n_intervals))
        for subset in self.specs["slopes"].subsets():
            comp = params[f"slopes.{subset_label(subset)}"]
            if not subset:
                out += features @ comp.T
                continue
            flat, n_cells = self._slope_cells(subset, coords, n_rows)
            comp_flat = comp.reshape((n_cells,) + self.tails["slopes"])
            for c in np.unique(flat):
                mask = flat == c
                out[mask] += features[mask] @ comp_flat[c].T
        return out

    def _slope_grads(self, coords, features: np.ndarray, hazard_grad: np.ndarray,
                     grads: dict) -> None:
        """d(sum w*ll)/d slopes components from the per-row hazard gradient."""
        n_rows = features.shape[0]
        for subset in self.specs["slopes"].subsets():
            name = f"slopes.{subset_label(subset)}"
            if not subset:
                grads[name] = np.einsum("bk,bp->kp", hazard_grad, features)
                continue
            flat, n_cells = self._slope_cells(subset, coords, n_rows)
            g = np.zeros((n_cells,) + self.tails["slopes"])
            for c in np.unique(flat):
                mask = flat == c
                g[c] = np.einsum("bk,bp->kp", hazard_grad[mask], features[mask])
            grads[name] = g.reshape(
                self.specs["slopes"].subset_shape(subset) + self.tails["slopes"])

    # -- forward ----------------------------------------------------------

    def _forward(self, params, batch) -> tuple[np.ndarray, _ForwardCache]:
        features = np.asarray(batch["features"], dtype=float)
        coords = batch["coords"]
        level = np.asarray(batch["placement"])
        n_rows = features.shape[0]

        threshold_raw = self._assemble_rows("thresholds", params, coords, n_rows)
        ordered = placement.threshold_transform(threshold_raw)
        if self.config.covariate_placement:
            shift = features @ params["covariate_shift"]
        else:
            shift = np.zeros(n_rows)
        # sigmoid directly: the ordering holds by construction, and the
        # validating public helper would reject gaps that underflow to zero
        exceedance = sigmoid(ordered + shift[:, None])
        category_probs = placement.category_probabilities(exceedance)

        effects_raw = self._assemble_rows("effects", params, coords, n_rows)
        if self.config.exceedance_covariates:
            effects = hazard.constrain_placement_coefficients(effects_raw)
            intervention = hazard.build_intervention_covariates(level, exceedance)
        else:
            effects = -softplus(effects_raw)
            levels = np.arange(1, hazard.N_ACUITY + 1)
            intervention = (level[:, None] >= levels).astype(float)
        baseline = self._assemble_rows("baseline", params, coords, n_rows)
        feature_term = self._feature_term(params, coords, features)
        log_haz = hazard.combine_log_hazard(baseline, feature_term, effects,
                                            intervention)
        cache = _ForwardCache(threshold_raw, exceedance, category_probs,
                              effects_raw, effects, intervention, log_haz)
        return log_haz, cache

    def log_likelihood(self, params, batch) -> tuple[np.ndarray, _ForwardCache]:
        log_haz, cache = self._forward(params, batch)
        with np.errstate(over="ignore", invalid="ignore"):
            ll_survival = hazard.log_likelihood(
                batch["wait"], batch["event"], log_haz, self.config.breakpoints)
        ll_placement = placement.placement_log_likelihood(
            batch["placement"], cache.category_probs)
        return ll_placement + ll_survival, cache

    # -- backward ---------------------------------------------------------

    def likelihood_gradients(self, params, batch, cache: _ForwardCache,
                             weights) -> dict[str, np.ndarray]:
        features = np.asarray(batch["features"], dtype=float)
        coords = batch["coords"]
        level = np.asarray(batch["placement"])
        t = np.asarray(batch["wait"], dtype=float)
        event = np.asarray(batch["event"], dtype=bool)
        w = np.asarray(weights, dtype=float)
        n_rows = features.shape[0]
        n_acuity = hazard.N_ACUITY
        grads: dict[str, np.ndarray] = {}

        # survival: d ll / d log-hazard = event one-hot - hazard * overlap
        with np.errstate(over="ignore", invalid="ignore"):
            lam_overlap = (np.exp(cache.log_hazard)
                           * hazard.interval_overlaps(t, self.config.breakpoints))
        hazard_grad = -np.where(np.isfinite(lam_overlap), lam_overlap, 0.0)
        idx = hazard.interval_index(t, self.config.breakpoints)
        hazard_grad[np.arange(n_rows), idx] += event
        hazard_grad *= w[:, None]

        self._scatter_rows("baseline", hazard_grad, coords, grads)
        self._slope_grads(coords, features, hazard_grad, grads)

        # effects: outer product with the intervention vector, chained through
        # the negated-softplus constraint on the indicator columns
        off = self.indicator_offset
        effect_rows = hazard_grad[:, :, None] * cache.intervention[:, None, :]
        effect_rows[..., off:] *= -sigmoid(cache.effects_raw[..., off:])
        self._scatter_rows("effects", effect_rows, coords, grads)

        # exceedance feedback from the survival side (probability covariates)
        if self.config.exceedance_covariates:
            g_exceed = np.einsum("bk,bkj->bj", hazard_grad,
                                 cache.effects[:, :, :n_acuity])
        else:
            g_exceed = np.zeros((n_rows, n_acuity))

        # placement categorical term
        picked = np.take_along_axis(cache.category_probs, level[:, None],
                                    axis=-1)[:, 0]
        safe = np.where(picked > 0, picked, 1.0)
        coeff = np.where(picked > 0, w / safe, 0.0)
        rows = np.arange(n_rows)
        upper = level >= 1      # P(>= level) enters category with +1
        g_exceed[rows[upper], level[upper] - 1] += coeff[upper]
        lower = level <= n_acuity - 1   # P(>= level+1) enters with -1
        g_exceed[rows[lower], level[lower]] -= coeff[lower]

        # through the logistic, then the ordering transform
        g_logit = g_exceed * cache.exceedance * (1.0 - cache.exceedance)
        tail_sums = np.cumsum(g_logit[:, ::-1], axis=1)[:, ::-1]
        g_raw = np.empty_like(g_logit)
        g_raw[:, 0] = tail_sums[:, 0]
        g_raw[:, 1:] = -sigmoid(cache.threshold_raw[:, 1:]) * tail_sums[:, 1:]
        self._scatter_rows("thresholds", g_raw, coords, grads)

        if self.config.covariate_placement:
            grads["covariate_shift"] = features.T @ g_logit.sum(axis=1)
        return grads

    # -- priors -----------------------------------------------------------

    def _horseshoe_pools(self, params):
        """Yield (coef, local, global) views, one per shrinkage pool."""
        spec = self.specs["slopes"]
        tail = self.tails["slopes"]
        for subset in spec.subsets():
            label = subset_label(subset)
            coef = params[f"slopes.{label}"]
            local = params[f"slopes_local.{label}"]
            glob = params[f"slopes_global.{label}"]
            n_cells = int(np.prod(spec.subset_shape(subset), dtype=np.int64))
            yield (label, coef.reshape((n_cells,) + tail),
                   local.reshape((n_cells,) + tail), glob.reshape(n_cells))
        if self.config.covariate_placement:
            p = self.config.n_features
            yield ("covariate_shift",
                   params["covariate_shift"].reshape(1, p),
                   params["covariate_shift_local"].reshape(1, p),
                   params["covariate_shift_global"].reshape(1))

    def prior_log_density(self, params) -> float:
        total = 0.0
        for group in _GAUSSIAN_GROUPS:
            spec = self.specs[group]
            for subset in spec.subsets():
                comp = params[f"{group}.{subset_label(subset)}"]
                sd = order_scale(self.config.base_scale, self.config.scale_decay,
                                 len(subset))
                total += float(gaussian_log_density(comp, sd).sum())
        for _, coef, local, glob in self._horseshoe_pools(params):
            local = np.maximum(local, _TINY)
            glob = np.maximum(glob, _TINY)
            scale = local * glob.reshape((-1,) + (1,) * (coef.ndim - 1))
            with np.errstate(over="ignore"):
                total += float(gaussian_log_density(coef, scale).sum())
            total += float(half_cauchy_log_density(local).sum())
            total += float(half_cauchy_log_density(glob).sum())
        return total

    def prior_gradients(self, params) -> dict[str, np.ndarray]:
        grads: dict[str, np.ndarray] = {}
        for group in _GAUSSIAN_GROUPS:
            spec = self.specs[group]
            for subset in spec.subsets():
                name = f"{group}.{subset_label(subset)}"
                sd = order_scale(self.config.base_scale, self.config.scale_decay,
                                 len(subset))
                grads[name] = -params[name] / sd ** 2
        for label, coef, local, glob in self._horseshoe_pools(params):
            local = np.maximum(local, _TINY)
            glob = np.maximum(glob, _TINY)
            tail_axes = tuple(range(1, coef.ndim))
            scale = local * glob.reshape((-1,) + (1,) * (coef.ndim - 1))
            with np.errstate(over="ignore", divide="ignore"):
                d_coef = -coef / scale ** 2
                d_scale = coef ** 2 / scale ** 3 - 1.0 / scale
            d_local = (d_scale * glob.reshape((-1,) + (1,) * (coef.ndim - 1))
                       - 2.0 * local / (1.0 + local * local))
            d_glob = ((d_scale * local).sum(axis=tail_axes)
                      - 2.0 * glob / (1.0 + glob * glob))
            if label == "covariate_shift":
                grads["covariate_shift"] = d_coef.reshape(-1)
                grads["covariate_shift_local"] = d_local.reshape(-1)
                grads["covariate_shift_global"] = d_glob.reshape(())
            else:
                spec = self.specs["slopes"]
                subset = next(s for s in spec.subsets() if subset_label(s) == label)
                shape = spec.subset_shape(subset)
                grads[f"slopes.{label}"] = d_coef.reshape(shape + self.tails["slopes"])
                grads[f"slopes_local.{label}"] = d_local.reshape(
                    shape + self.tails["slopes"])
                grads[f"slopes_global.{label}"] = d_glob.reshape(shape)
        return grads

    # -- prediction -------------------------------------------------------

    def placement_probabilities(self, params, batch) -> np.ndarray:
        """Per-row category probabilities (B, 6) under one parameter draw."""
        _, cache = self._forward(params, batch)
        return cache.category_probs

    def interval_log_hazards(self, params, batch) -> np.ndarray:
        log_haz, _ = self._forward(params, batch)
        return log_haz

    def event_probabilities(self, params, batch, horizon: float) -> np.ndarray:
        """P(event within horizon) per row under one parameter draw."""
        log_haz, _ = self._forward(params, batch)
        return hazard.event_probability(log_haz, horizon, self.config.breakpoints)

    def mean_parameters(self, posterior: MeanFieldPosterior) -> dict[str, np.ndarray]:
        """Plug-in parameters: the bijector image of the posterior means."""
        return {b.name: bijector_forward(b.bijector, posterior.mean[b.name])
                for b in self.blocks}

    def predict_event_probability(self, posterior: MeanFieldPosterior, batch,
                                  horizon: float, draws: int = 200,
                                  seed: int = 0) -> np.ndarray:
        """Posterior-averaged event probability per row.

        ``draws == 0`` falls back to the plug-in posterior-mean parameters.
        """
        if draws == 0:
            return self.event_probabilities(self.mean_parameters(posterior),
                                            batch, horizon)
        rng = np.random.default_rng(seed)
        total = np.zeros(np.asarray(batch["features"]).shape[0])
        for params in sample_parameters(posterior, draws, rng):
            total += self.event_probabilities(params, batch, horizon)
        return total / draws

    def predict_placement_probabilities(self, posterior: MeanFieldPosterior,
                                        batch, draws: int = 200,
                                        seed: int = 0) -> np.ndarray:
        if draws == 0:
            return self.placement_probabilities(self.mean_parameters(posterior),
                                                batch)
        rng = np.random.default_rng(seed)
        total = np.zeros((np.asarray(batch["placement"]).shape[0],
                          placement.N_LEVELS))
        for params in sample_parameters(posterior, draws, rng):
            total += self.placement_probabilities(params, batch)
        return total / draws


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, model: LatticeSurvivalModel,
                    posterior: MeanFieldPosterior) -> None:
    """Write ``<path>.json`` (config + block manifest) and ``<path>.npz``."""
    path = Path(path)
    manifest = {
        "format_version": CHECKPOINT_FORMAT,
        "model": model.config.to_dict(),
        "blocks": [{"name": b.name, "shape": list(b.shape),
                    "bijector": b.bijector} for b in posterior.blocks],
    }
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2,
                                                    sort_keys=True))
    arrays = {}
    for b in posterior.blocks:
        arrays[f"mean::{b.name}"] = posterior.mean[b.name]
        arrays[f"log_sd::{b.name}"] = posterior.log_sd[b.name]
    np.savez(path.with_suffix(".npz"), **arrays)


def load_checkpoint(path: str | Path) -> tuple[LatticeSurvivalModel,
                                               MeanFieldPosterior]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    version = manifest.get("format_version")
    if version != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {version!r}")
    model = LatticeSurvivalModel(ModelConfig.from_dict(manifest["model"]))
    stored = {(d["name"], tuple(d["shape"]), d["bijector"])
              for d in manifest["blocks"]}
    ours = {(b.name, b.shape, b.bijector) for b in model.blocks}
    if stored != ours:
        raise ValueError("checkpoint blocks do not match the model config")
    blobs = np.load(path.with_suffix(".npz"))
    mean = {b.name: blobs[f"mean::{b.name}"] for b in model.blocks}
    log_sd = {b.name: blobs[f"log_sd::{b.name}"] for b in model.blocks}
    return model, MeanFieldPosterior(model.blocks, mean, log_sd)
