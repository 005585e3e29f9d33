"""Tests for the joint placement/wait-time model.

The likelihood is checked against a per-row pure-python composition that
assembles every parameter group with explicit loops over subsets, and the
analytic gradients (likelihood and prior) are checked against central finite
differences of those scalar objectives.
"""

import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from latticesurv import hazard
from latticesurv.inference import MeanFieldPosterior
from latticesurv.lattice import subset_label
from latticesurv.model import (DecompositionConfig, LatticeSurvivalModel,
                               ModelConfig, load_checkpoint, save_checkpoint)


def _small_config(**overrides):
    base = dict(
        lattice={"site": 2, "group": 3},
        n_features=3,
        breakpoints=(5.0, 12.0),
        baseline=DecompositionConfig(("site", "group"), 2),
        slopes=DecompositionConfig(("site",), 1),
        effects=DecompositionConfig((), 0),
        thresholds=DecompositionConfig(("group",), 1),
    )
    base.update(overrides)
    return ModelConfig(**base)


def _fd_config(**overrides):
    """A config that exercises every assembly/scatter code path."""
    base = dict(
        lattice={"site": 2, "group": 2},
        n_features=2,
        breakpoints=(4.0,),
        baseline=DecompositionConfig(("site", "group"), 2),
        slopes=DecompositionConfig(("site", "group"), 2),
        effects=DecompositionConfig(("site",), 1),
        thresholds=DecompositionConfig(("group",), 1),
        covariate_placement=True,
    )
    base.update(overrides)
    return ModelConfig(**base)


def _random_params(model, rng, scale=0.4):
    params = {}
    for block in model.blocks:
        draw = rng.normal(0.0, scale, size=block.shape)
        if block.bijector == "softplus":
            params[block.name] = np.abs(draw) + 0.1
        else:
            params[block.name] = draw
    return params


def _random_batch(model, rng, n_rows):
    cfg = model.config
    return {
        "features": rng.integers(0, 2, size=(n_rows, cfg.n_features)).astype(float),
        "coords": {d: rng.integers(0, s, size=n_rows)
                   for d, s in cfg.lattice.items()},
        "placement": rng.integers(0, 6, size=n_rows),
        "wait": rng.uniform(0.3, 25.0, size=n_rows),
        "event": rng.random(n_rows) < 0.6,
    }


def _softplus(x):
    return math.log1p(math.exp(-abs(x))) + max(x, 0.0)


def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _assemble_row(model, group, params, row_coords):
    """Sum the group's components at one cell, indexing axes one at a time."""
    total = np.zeros(model.tails[group])
    for subset in model.specs[group].subsets():
        comp = params[f"{group}.{subset_label(subset)}"]
        for dim in subset:
            comp = comp[row_coords[dim]]
        total = total + comp
    return total


def _row_log_likelihood(model, params, batch, i):
    cfg = model.config
    coords = {d: int(np.asarray(v)[i]) for d, v in batch["coords"].items()}
    x = np.asarray(batch["features"], dtype=float)[i]
    level = int(np.asarray(batch["placement"])[i])
    t = float(np.asarray(batch["wait"])[i])
    event = bool(np.asarray(batch["event"])[i])

    th_raw = _assemble_row(model, "thresholds", params, coords)
    nu = [float(th_raw[0])]
    for j in range(1, 5):
        nu.append(nu[-1] - _softplus(float(th_raw[j])))
    shift = float(x @ params["covariate_shift"]) if cfg.covariate_placement else 0.0
    exceed = [_sigmoid(v + shift) for v in nu]
    probs = ([1.0 - exceed[0]]
             + [exceed[j] - exceed[j + 1] for j in range(4)]
             + [exceed[4]])
    ll = math.log(probs[level])

    indicators = [1.0 if level >= k else 0.0 for k in range(1, 6)]
    eff_raw = _assemble_row(model, "effects", params, coords)
    if cfg.exceedance_covariates:
        intervention = exceed + indicators
        eff = eff_raw.copy()
        eff[:, 5:] = -np.vectorize(_softplus)(eff_raw[:, 5:])
    else:
        intervention = indicators
        eff = -np.vectorize(_softplus)(eff_raw)
    base = _assemble_row(model, "baseline", params, coords)
    slope = _assemble_row(model, "slopes", params, coords)

    edges = list(cfg.breakpoints)
    n_k = len(edges) + 1
    log_haz = [float(base[k] + slope[k] @ x + np.dot(eff[k], intervention))
               for k in range(n_k)]
    cumulative = 0.0
    for k in range(n_k):
        lo = edges[k - 1] if k else 0.0
        hi = edges[k] if k < len(edges) else math.inf
        cumulative += math.exp(log_haz[k]) * max(0.0, min(t, hi) - lo)
    idx = sum(1 for b in edges if t >= b)
    ll += log_haz[idx] - cumulative if event else -cumulative
    return ll


class TestBlockLayout:
    def test_blocks_enumerate_groups_subsets_and_shrinkage(self):
        model = LatticeSurvivalModel(_small_config(covariate_placement=True))
        got = [(b.name, b.shape, b.bijector) for b in model.blocks]
        expected = [
            ("baseline.pooled", (3,), "identity"),
            ("baseline.site", (2, 3), "identity"),
            ("baseline.group", (3, 3), "identity"),
            ("baseline.site+group", (2, 3, 3), "identity"),
            ("slopes.pooled", (3, 3), "identity"),
            ("slopes_local.pooled", (3, 3), "softplus"),
            ("slopes_global.pooled", (), "softplus"),
            ("slopes.site", (2, 3, 3), "identity"),
            ("slopes_local.site", (2, 3, 3), "softplus"),
            ("slopes_global.site", (2,), "softplus"),
            ("effects.pooled", (3, 10), "identity"),
            ("thresholds.pooled", (5,), "identity"),
            ("thresholds.group", (3, 5), "identity"),
            ("covariate_shift", (3,), "identity"),
            ("covariate_shift_local", (3,), "softplus"),
            ("covariate_shift_global", (), "softplus"),
        ]
        assert got == expected

    def test_default_cohort_layout(self):
        cfg = ModelConfig(
            lattice={"mdc": 26, "history_group": 32, "cc_mcc": 3, "race": 5},
            n_features=4)
        model = LatticeSurvivalModel(cfg)
        assert model.n_intervals == 4
        assert model.indicator_offset == 5
        assert model.n_intervention == 10
        # 7 subsets each for the three cohort groups, 2 x 3 slope blocks
        assert len(model.blocks) == 7 + 6 + 7 + 7
        names = {b.name for b in model.blocks}
        assert "baseline.mdc+history_group" in names
        assert "covariate_shift" not in names

    def test_ablated_model_drops_probability_columns(self):
        model = LatticeSurvivalModel(_small_config(exceedance_covariates=False))
        assert model.indicator_offset == 0
        assert model.n_intervention == 5
        effects = [b for b in model.blocks if b.name.startswith("effects.")]
        assert all(b.shape[-1] == 5 for b in effects)


class TestConfigValidation:
    def test_rejects_zero_features(self):
        with pytest.raises(ValueError):
            _small_config(n_features=0)

    def test_rejects_bad_scale_decay(self):
        with pytest.raises(ValueError):
            _small_config(scale_decay=0.0)
        with pytest.raises(ValueError):
            _small_config(scale_decay=1.5)

    def test_rejects_unknown_dimension(self):
        with pytest.raises(ValueError, match="effects"):
            _small_config(effects=DecompositionConfig(("ward",), 1))

    def test_rejects_unsorted_breakpoints(self):
        with pytest.raises(ValueError):
            _small_config(breakpoints=(12.0, 5.0))

    def test_dict_roundtrip(self):
        cfg = _small_config(covariate_placement=True,
                            exceedance_covariates=False,
                            base_scale=2.0, scale_decay=0.3)
        again = ModelConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert again == cfg


class TestLogLikelihood:
    @pytest.mark.parametrize("covariate_placement,exceedance", [
        (False, True), (True, True), (False, False),
    ])
    def test_matches_per_row_composition(self, covariate_placement, exceedance):
        rng = np.random.default_rng(71)
        model = LatticeSurvivalModel(_small_config(
            covariate_placement=covariate_placement,
            exceedance_covariates=exceedance))
        params = _random_params(model, rng)
        batch = _random_batch(model, rng, 40)
        ll, _ = model.log_likelihood(params, batch)
        expected = [_row_log_likelihood(model, params, batch, i)
                    for i in range(40)]
        assert_allclose(ll, expected, rtol=1e-10)

    def test_every_placement_level_appears_finite(self):
        rng = np.random.default_rng(5)
        model = LatticeSurvivalModel(_small_config())
        params = _random_params(model, rng)
        batch = _random_batch(model, rng, 12)
        batch["placement"] = np.array([0, 1, 2, 3, 4, 5] * 2)
        ll, _ = model.log_likelihood(params, batch)
        assert np.all(np.isfinite(ll))

    def test_constrained_effects_are_nonpositive(self):
        rng = np.random.default_rng(6)
        for exceedance in (True, False):
            model = LatticeSurvivalModel(
                _small_config(exceedance_covariates=exceedance))
            params = _random_params(model, rng, scale=1.5)
            batch = _random_batch(model, rng, 30)
            _, cache = model.log_likelihood(params, batch)
            off = model.indicator_offset
            assert np.all(cache.effects[..., off:] <= 0.0)
            if not exceedance:
                assert np.all(cache.effects <= 0.0)


def _weighted_ll(model, params, batch, w):
    ll, _ = model.log_likelihood(params, batch)
    return float(np.dot(w, ll))


def _fd_grads(fn, params, names, eps):
    grads = {}
    for name in names:
        # own a mutable copy so 0-d blocks can be perturbed in place too
        arr = np.array(params[name], dtype=float)
        params[name] = arr
        flat = arr.reshape(-1)
        out = np.zeros(flat.size)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            hi = fn(params)
            flat[j] = orig - eps
            lo = fn(params)
            flat[j] = orig
            out[j] = (hi - lo) / (2.0 * eps)
        grads[name] = out.reshape(arr.shape)
    return grads


class TestLikelihoodGradients:
    def test_match_finite_differences(self):
        rng = np.random.default_rng(90)
        model = LatticeSurvivalModel(_fd_config())
        params = _random_params(model, rng)
        batch = _random_batch(model, rng, 10)
        w = rng.uniform(0.5, 2.0, size=10)
        _, cache = model.log_likelihood(params, batch)
        analytic = model.likelihood_gradients(params, batch, cache, w)
        fd = _fd_grads(lambda p: _weighted_ll(model, p, batch, w),
                       params, sorted(analytic), eps=1e-5)
        for name in fd:
            assert_allclose(analytic[name], fd[name], rtol=1e-5, atol=1e-7,
                            err_msg=name)

    def test_match_finite_differences_ablated(self):
        rng = np.random.default_rng(91)
        model = LatticeSurvivalModel(_fd_config(
            covariate_placement=False, exceedance_covariates=False,
            slopes=DecompositionConfig((), 0)))
        params = _random_params(model, rng)
        batch = _random_batch(model, rng, 10)
        w = rng.uniform(0.5, 2.0, size=10)
        _, cache = model.log_likelihood(params, batch)
        analytic = model.likelihood_gradients(params, batch, cache, w)
        assert "covariate_shift" not in analytic
        fd = _fd_grads(lambda p: _weighted_ll(model, p, batch, w),
                       params, sorted(analytic), eps=1e-5)
        for name in fd:
            assert_allclose(analytic[name], fd[name], rtol=1e-5, atol=1e-7,
                            err_msg=name)


def _gauss(x, sd):
    return -0.5 * math.log(2.0 * math.pi) - math.log(sd) - 0.5 * (x / sd) ** 2


def _half_cauchy(x):
    return math.log(2.0 / math.pi) - math.log1p(x * x)


def _prior_oracle(model, params):
    cfg = model.config
    total = 0.0
    for group in ("baseline", "effects", "thresholds"):
        for subset in model.specs[group].subsets():
            comp = params[f"{group}.{subset_label(subset)}"]
            sd = cfg.base_scale * cfg.scale_decay ** len(subset)
            total += sum(_gauss(v, sd) for v in comp.reshape(-1))
    spec = model.specs["slopes"]
    pools = []
    for subset in spec.subsets():
        label = subset_label(subset)
        n_cells = int(np.prod(spec.subset_shape(subset), dtype=int))
        pools.append((params[f"slopes.{label}"],
                      params[f"slopes_local.{label}"],
                      params[f"slopes_global.{label}"], n_cells))
    if cfg.covariate_placement:
        pools.append((params["covariate_shift"],
                      params["covariate_shift_local"],
                      params["covariate_shift_global"], 1))
    for coef, local, glob, n_cells in pools:
        coef = np.asarray(coef).reshape(n_cells, -1)
        local = np.asarray(local).reshape(n_cells, -1)
        glob = np.asarray(glob).reshape(n_cells)
        for c in range(n_cells):
            for v, lam in zip(coef[c], local[c]):
                total += _gauss(v, lam * glob[c]) + _half_cauchy(lam)
            total += _half_cauchy(glob[c])
    return total


class TestPriors:
    def test_density_matches_oracle(self):
        rng = np.random.default_rng(17)
        model = LatticeSurvivalModel(_fd_config())
        params = _random_params(model, rng)
        assert_allclose(model.prior_log_density(params),
                        _prior_oracle(model, params), rtol=1e-10)

    def test_density_matches_oracle_without_covariate_shift(self):
        rng = np.random.default_rng(18)
        model = LatticeSurvivalModel(_small_config())
        params = _random_params(model, rng)
        assert_allclose(model.prior_log_density(params),
                        _prior_oracle(model, params), rtol=1e-10)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(19)
        model = LatticeSurvivalModel(_fd_config())
        params = _random_params(model, rng)
        analytic = model.prior_gradients(params)
        assert sorted(analytic) == sorted(b.name for b in model.blocks)
        fd = _fd_grads(lambda p: model.prior_log_density(p),
                       params, sorted(analytic), eps=1e-6)
        for name in fd:
            assert_allclose(analytic[name], fd[name], rtol=2e-5, atol=1e-6,
                            err_msg=name)

    def test_tighter_interaction_scales_penalize_more(self):
        """The same value costs more prior mass at higher interaction order."""
        model = LatticeSurvivalModel(_small_config())
        params = {b.name: np.zeros(b.shape) for b in model.blocks}
        for block in model.blocks:
            if block.bijector == "softplus":
                params[block.name] = np.full(block.shape, 1.0)
        base = model.prior_log_density(params)
        bumped = {k: v.copy() for k, v in params.items()}
        bumped["baseline.pooled"][0] = 1.0
        drop_pooled = base - model.prior_log_density(bumped)
        bumped = {k: v.copy() for k, v in params.items()}
        bumped["baseline.site+group"][0, 0, 0] = 1.0
        drop_pair = base - model.prior_log_density(bumped)
        assert drop_pair > drop_pooled * 100


def _posterior(model, rng, log_sd=-3.0):
    mean = {b.name: np.asarray(rng.normal(0.0, 0.3, size=b.shape))
            for b in model.blocks}
    sds = {b.name: np.full(b.shape, float(log_sd)) for b in model.blocks}
    return MeanFieldPosterior(model.blocks, mean, sds)


class TestPrediction:
    def test_plugin_event_probability_composes(self):
        rng = np.random.default_rng(23)
        model = LatticeSurvivalModel(_small_config(covariate_placement=True))
        posterior = _posterior(model, rng)
        batch = _random_batch(model, rng, 25)
        got = model.predict_event_probability(posterior, batch, horizon=20.0,
                                              draws=0)
        params = model.mean_parameters(posterior)
        log_haz = model.interval_log_hazards(params, batch)
        expected = hazard.event_probability(log_haz, 20.0,
                                            model.config.breakpoints)
        assert_allclose(got, expected, rtol=1e-12)
        assert np.all((got > 0) & (got <= 1))

    def test_mean_parameters_respect_bijectors(self):
        rng = np.random.default_rng(24)
        model = LatticeSurvivalModel(_small_config())
        posterior = _posterior(model, rng)
        posterior.mean["slopes_global.pooled"] = np.asarray(-4.0)
        params = model.mean_parameters(posterior)
        assert params["slopes_global.pooled"] > 0
        assert_allclose(params["baseline.pooled"],
                        posterior.mean["baseline.pooled"])

    def test_draws_are_seed_deterministic(self):
        rng = np.random.default_rng(25)
        model = LatticeSurvivalModel(_small_config())
        posterior = _posterior(model, rng)
        batch = _random_batch(model, rng, 8)
        a = model.predict_event_probability(posterior, batch, 30.0, draws=20,
                                            seed=3)
        b = model.predict_event_probability(posterior, batch, 30.0, draws=20,
                                            seed=3)
        c = model.predict_event_probability(posterior, batch, 30.0, draws=20,
                                            seed=4)
        assert_allclose(a, b, rtol=0)
        assert np.any(a != c)

    def test_tiny_posterior_sd_recovers_plugin(self):
        rng = np.random.default_rng(26)
        model = LatticeSurvivalModel(_small_config())
        posterior = _posterior(model, rng, log_sd=-40.0)
        batch = _random_batch(model, rng, 8)
        plug = model.predict_event_probability(posterior, batch, 30.0, draws=0)
        avg = model.predict_event_probability(posterior, batch, 30.0, draws=30)
        assert_allclose(avg, plug, rtol=1e-9)

    def test_placement_probabilities_normalize(self):
        rng = np.random.default_rng(27)
        model = LatticeSurvivalModel(_small_config())
        posterior = _posterior(model, rng)
        batch = _random_batch(model, rng, 15)
        probs = model.predict_placement_probabilities(posterior, batch, draws=0)
        assert probs.shape == (15, 6)
        assert np.all(probs >= 0)
        assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        averaged = model.predict_placement_probabilities(posterior, batch,
                                                         draws=25, seed=1)
        assert_allclose(averaged.sum(axis=1), 1.0, atol=1e-12)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(31)
        model = LatticeSurvivalModel(_small_config(covariate_placement=True))
        posterior = _posterior(model, rng)
        save_checkpoint(tmp_path / "fit", model, posterior)
        loaded_model, loaded_posterior = load_checkpoint(tmp_path / "fit")
        assert loaded_model.config == model.config
        assert loaded_model.config.to_dict() == model.config.to_dict()
        for block in model.blocks:
            assert_allclose(loaded_posterior.mean[block.name],
                            posterior.mean[block.name], rtol=0)
            assert_allclose(loaded_posterior.log_sd[block.name],
                            posterior.log_sd[block.name], rtol=0)

    def test_rejects_unknown_format_version(self, tmp_path):
        rng = np.random.default_rng(32)
        model = LatticeSurvivalModel(_small_config())
        save_checkpoint(tmp_path / "fit", model, _posterior(model, rng))
        manifest = json.loads((tmp_path / "fit.json").read_text())
        manifest["format_version"] = 99
        (tmp_path / "fit.json").write_text(json.dumps(manifest))
        with pytest.raises(ValueError, match="format"):
            load_checkpoint(tmp_path / "fit")

    def test_rejects_block_mismatch(self, tmp_path):
        rng = np.random.default_rng(33)
        model = LatticeSurvivalModel(_small_config())
        save_checkpoint(tmp_path / "fit", model, _posterior(model, rng))
        manifest = json.loads((tmp_path / "fit.json").read_text())
        manifest["blocks"][0]["name"] = "baseline.renamed"
        (tmp_path / "fit.json").write_text(json.dumps(manifest))
        with pytest.raises(ValueError, match="block"):
            load_checkpoint(tmp_path / "fit")
