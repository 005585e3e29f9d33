"""Synthetic episode generation from a known ground-truth model.

Real claims data cannot ship with the package, so every estimator property
is checked against data drawn from the generative model itself: cohort
coordinates and sparse binary features per episode, a placement level from
the ordinal model, and a wait time from the piecewise-exponential hazard,
censored at a fixed observation window.

Confounding by indication is reproduced with a latent severity: each cohort
cell gets a severity draw (plus optional per-episode noise), and the
``confounding`` knob adds ``confounding * severity`` to both the placement
logits and the log hazard. At zero the knob leaves placement independent of
severity; above zero, naive placement-effect estimates are biased and the
probability covariates give the model something to adjust with.

Rows are drawn from per-row derived seeds, so generation is reproducible
regardless of chunking or parallel splits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import hazard, placement
from .errors import DataError
from .ingest import EpisodeRecord
from .lattice import LatticeDecomposition, LatticeSpec, subset_label
from .numerics import sigmoid

#: Entropy stream tags so row draws and table draws never collide.
_SEVERITY_STREAM = 104729
_ROW_STREAM = 1299709


@dataclass
class GeneratorSpec:
    """Ground truth and sampling knobs for one synthetic dataset.

    The four decompositions hold raw (unconstrained) values: thresholds are
    passed through the ordering transform and the indicator half of the
    placement effects through the negated softplus, exactly as the model
    does during fitting.
    """

    lattice: dict[str, int]
    n_rows: int
    baseline: LatticeDecomposition
    slopes: LatticeDecomposition
    effects: LatticeDecomposition
    thresholds: LatticeDecomposition
    covariate_shift: np.ndarray | None = None
    feature_rate: float = 0.3
    confounding: float = 0.0
    severity_noise: float = 0.0
    censor_window: float = 90.0
    breakpoints: tuple[float, ...] = hazard.DEFAULT_BREAKPOINTS
    seed: int = 0

    def __post_init__(self):
        # canonical dimension order, so the row-level draws do not depend on
        # the insertion order of whatever dict the caller (or a reloaded
        # manifest) happened to build
        self.lattice = {str(k): int(v)
                        for k, v in sorted(self.lattice.items())}
        self.breakpoints = tuple(float(b) for b in self.breakpoints)
        hazard.validate_breakpoints(self.breakpoints)
        if self.n_rows < 1:
            raise ValueError("n_rows must be positive")
        if not 0 <= self.feature_rate <= 1:
            raise ValueError("feature_rate must lie in [0, 1]")
        if self.censor_window <= 0:
            raise ValueError("censor_window must be positive")
        if self.severity_noise < 0:
            raise ValueError("severity_noise must be non-negative")
        k = len(self.breakpoints) + 1
        p = self.n_features
        expected = {"baseline": (k,), "slopes": (k, p),
                    "effects": (k, 2 * hazard.N_ACUITY),
                    "thresholds": (placement.N_THRESHOLDS,)}
        for name, tail in expected.items():
            decomp = getattr(self, name)
            if decomp.tail_shape != tail:
                raise ValueError(f"{name} tail shape {decomp.tail_shape}, "
                                 f"expected {tail}")
            for dim, size in zip(decomp.spec.names, decomp.spec.sizes):
                if self.lattice.get(dim) != size:
                    raise ValueError(
                        f"{name} dimension {dim!r} does not match the lattice")
        if self.covariate_shift is not None:
            self.covariate_shift = np.asarray(self.covariate_shift, dtype=float)
            if self.covariate_shift.shape != (p,):
                raise ValueError("covariate_shift must have one entry per feature")

    @property
    def n_features(self) -> int:
        return self.slopes.tail_shape[-1]


@dataclass
class SynthResult:
    records: list[EpisodeRecord]
    severity: np.ndarray          # per-row latent, for diagnostics


def inverse_transform_wait(u, log_hazards, breakpoints) -> np.ndarray:
    """Invert the cumulative hazard: the wait with survival ``1 - u``.

    Solves ``Lambda(t) = -log(1 - u)`` exactly for the piecewise-constant
    hazard. ``u`` and ``log_hazards`` broadcast as ``(B,)`` with ``(B, K)``
    or plain scalars with ``(K,)``.
    """
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("u must lie strictly inside (0, 1)")
    edges = np.concatenate([[0.0], np.asarray(breakpoints, dtype=float)])
    lam = np.exp(np.asarray(log_hazards, dtype=float))
    widths = np.diff(edges)
    # cumulative hazard at each interior edge; the last interval is unbounded
    cum_edges = np.concatenate([
        np.zeros(lam.shape[:-1] + (1,)),
        np.cumsum(lam[..., :-1] * widths, axis=-1)], axis=-1)
    target = -np.log1p(-u)
    if lam.ndim == 1:
        idx = np.searchsorted(cum_edges, target, side="right") - 1
        idx = np.clip(idx, 0, lam.size - 1)
        return edges[idx] + (target - cum_edges[idx]) / lam[idx]
    idx = np.sum(target[..., None] >= cum_edges, axis=-1) - 1
    idx = np.clip(idx, 0, lam.shape[-1] - 1)
    picked_cum = np.take_along_axis(cum_edges, idx[..., None], axis=-1)[..., 0]
    picked_lam = np.take_along_axis(lam, idx[..., None], axis=-1)[..., 0]
    return edges[idx] + (target - picked_cum) / picked_lam


def _severity_table(spec: GeneratorSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, _SEVERITY_STREAM])
    sizes = tuple(spec.lattice.values())
    return rng.standard_normal(sizes)


def generate(spec: GeneratorSpec) -> SynthResult:
    """Draw one synthetic dataset along with its per-row severity."""
    dims = list(spec.lattice)
    sizes = [spec.lattice[d] for d in dims]
    p = spec.n_features
    n = spec.n_rows
    severity_cells = _severity_table(spec)

    coords = {d: np.empty(n, dtype=np.int64) for d in dims}
    features = np.empty((n, p))
    noise = np.empty(n)
    u_place = np.empty(n)
    u_wait = np.empty(n)
    for b in range(n):
        rng = np.random.default_rng([spec.seed, _ROW_STREAM, b])
        for d, size in zip(dims, sizes):
            coords[d][b] = rng.integers(size)
        features[b] = rng.random(p) < spec.feature_rate
        noise[b] = rng.standard_normal()
        u_place[b] = rng.random()
        u_wait[b] = rng.random()

    cell_index = tuple(coords[d] for d in dims)
    severity = severity_cells[cell_index] + spec.severity_noise * noise
    tilt = spec.confounding * severity

    # placement from the ordinal model, tilted by severity
    ordered = placement.threshold_transform(spec.thresholds.assemble(coords))
    shift = tilt.copy()
    if spec.covariate_shift is not None:
        shift += features @ spec.covariate_shift
    exceedance = sigmoid(ordered + shift[:, None])
    category = placement.category_probabilities(exceedance)
    cum = np.cumsum(category, axis=-1)
    level = np.sum(u_place[:, None] >= cum[:, :-1], axis=-1)

    # wait time from the hazard, with the same severity on the log scale
    effects = hazard.constrain_placement_coefficients(spec.effects.assemble(coords))
    intervention = hazard.build_intervention_covariates(level, exceedance)
    baseline = spec.baseline.assemble(coords)
    slope_rows = spec.slopes.assemble(coords)
    feature_term = np.einsum("bkp,bp->bk", slope_rows, features)
    log_haz = hazard.combine_log_hazard(baseline, feature_term, effects,
                                        intervention) + tilt[:, None]
    raw_wait = inverse_transform_wait(u_wait, log_haz, spec.breakpoints)
    event = raw_wait <= spec.censor_window
    wait = np.minimum(raw_wait, spec.censor_window)

    records = []
    for b in range(n):
        records.append(EpisodeRecord(
            person_id=f"synth-{b:08d}",
            admit_date=-3,
            discharge_date=0,
            placement=int(level[b]),
            covariates=features[b],
            cohort_coords={d: int(coords[d][b]) for d in dims},
            wait_days=float(wait[b]),
            event=bool(event[b]),
        ))
    return SynthResult(records=records, severity=severity)


# ---------------------------------------------------------------------------
# random ground truth


def _random_decomposition(spec: LatticeSpec, tail: tuple[int, ...],
                          rng: np.random.Generator, amplitude: float,
                          decay: float) -> LatticeDecomposition:
    components = {}
    for subset in spec.subsets():
        scale = amplitude * decay ** len(subset)
        shape = spec.subset_shape(subset) + tail
        components[subset] = rng.normal(0.0, scale, size=shape)
    return LatticeDecomposition(spec, tail, components)


def random_truth(lattice: dict[str, int], n_features: int,
                 baseline_dims: tuple[str, ...], slope_dims: tuple[str, ...],
                 *, baseline_order: int = 2, slope_order: int = 1,
                 breakpoints=hazard.DEFAULT_BREAKPOINTS,
                 baseline_level: float = -3.5, amplitude: float = 0.5,
                 decay: float = 0.5, slope_amplitude: float = 0.3,
                 effect_amplitude: float = 0.5,
                 threshold_start: float = 1.5, seed: int = 0,
                 ) -> dict[str, LatticeDecomposition]:
    """Draw a sensible random ground truth for :class:`GeneratorSpec`.

    Components are mean-zero Gaussians whose scale decays with interaction
    order; the pooled baseline is centered at ``baseline_level`` (log-hazard
    per day) and the pooled first threshold at ``threshold_start`` so that
    hazards and category probabilities land in a realistic range.
    """
    rng = np.random.default_rng(seed)
    k = len(tuple(breakpoints)) + 1
    base_spec = LatticeSpec(baseline_dims,
                            tuple(lattice[d] for d in baseline_dims),
                            baseline_order)
    slope_spec = LatticeSpec(slope_dims, tuple(lattice[d] for d in slope_dims),
                             slope_order)
    baseline = _random_decomposition(base_spec, (k,), rng, amplitude, decay)
    baseline.components[()] += baseline_level
    slopes = _random_decomposition(slope_spec, (k, n_features), rng,
                                   slope_amplitude, decay)
    effects = _random_decomposition(base_spec, (k, 2 * hazard.N_ACUITY), rng,
                                    effect_amplitude, decay)
    thresholds = _random_decomposition(base_spec, (placement.N_THRESHOLDS,),
                                       rng, amplitude, decay)
    thresholds.components[()][0] += threshold_start
    return {"baseline": baseline, "slopes": slopes, "effects": effects,
            "thresholds": thresholds}


# ---------------------------------------------------------------------------
# truth manifests


def save_truth(spec: GeneratorSpec, path: str | Path) -> None:
    """Write the generator's ground truth as ``<path>.json`` + ``<path>.npz``."""
    path = Path(path)
    manifest = {
        "lattice": dict(spec.lattice),
        "n_rows": spec.n_rows,
        "n_features": spec.n_features,
        "feature_rate": spec.feature_rate,
        "confounding": spec.confounding,
        "severity_noise": spec.severity_noise,
        "censor_window": spec.censor_window,
        "breakpoints": list(spec.breakpoints),
        "seed": spec.seed,
        "has_covariate_shift": spec.covariate_shift is not None,
        "groups": {},
    }
    arrays = {}
    for group in ("baseline", "slopes", "effects", "thresholds"):
        decomp: LatticeDecomposition = getattr(spec, group)
        manifest["groups"][group] = {
            "dims": list(decomp.spec.names),
            "sizes": list(decomp.spec.sizes),
            "max_order": decomp.spec.max_order,
            "tail_shape": list(decomp.tail_shape),
        }
        for subset, comp in decomp.components.items():
            arrays[f"{group}::{subset_label(subset)}"] = comp
    if spec.covariate_shift is not None:
        arrays["covariate_shift"] = spec.covariate_shift
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2,
                                                    sort_keys=True))
    np.savez(path.with_suffix(".npz"), **arrays)


def load_truth(path: str | Path) -> GeneratorSpec:
    path = Path(path)
    try:
        manifest = json.loads(path.with_suffix(".json").read_text())
        blobs = np.load(path.with_suffix(".npz"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read truth manifest: {exc}") from exc
    groups = {}
    for group, meta in manifest["groups"].items():
        spec = LatticeSpec(tuple(meta["dims"]), tuple(meta["sizes"]),
                           int(meta["max_order"]))
        components = {}
        for subset in spec.subsets():
            components[subset] = blobs[f"{group}::{subset_label(subset)}"]
        groups[group] = LatticeDecomposition(spec, tuple(meta["tail_shape"]),
                                             components)
    shift = blobs["covariate_shift"] if manifest["has_covariate_shift"] else None
    return GeneratorSpec(
        lattice=manifest["lattice"], n_rows=int(manifest["n_rows"]),
        baseline=groups["baseline"], slopes=groups["slopes"],
        effects=groups["effects"], thresholds=groups["thresholds"],
        covariate_shift=shift, feature_rate=float(manifest["feature_rate"]),
        confounding=float(manifest["confounding"]),
        severity_noise=float(manifest["severity_noise"]),
        censor_window=float(manifest["censor_window"]),
        breakpoints=tuple(manifest["breakpoints"]), seed=int(manifest["seed"]))
