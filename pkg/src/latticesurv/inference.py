"""Mean-field variational inference with reparameterized gradients.

The posterior over every model parameter is an independent Gaussian in an
unconstrained space, mapped through a per-block bijector (identity, softplus
to positive, negated softplus to non-positive, or an ordered-threshold map).
The evidence lower bound is estimated on minibatches with the likelihood sum
rescaled to the full dataset, plus the prior, the bijector log-Jacobians,
and the Gaussian entropy.

Gradients are exact for fixed sampling noise: models report the analytic
gradient of their log likelihood and log prior with respect to constrained
parameters, and this module chains those through the bijectors and the
reparameterization. No automatic differentiation is involved, which keeps
the dependency surface small and makes the gradient path itself testable
against finite differences.

Training follows a fixed schedule: Adam wrapped in a lookahead average,
learning rate decayed multiplicatively after every epoch whose mean batch
loss fails to improve on the best seen, and a halt after a patience worth
of consecutive non-improving epochs.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .errors import NumericalError
from .numerics import log_sigmoid, sigmoid, softplus, LOG_TWO_PI

logger = logging.getLogger(__name__)

BIJECTORS = ("identity", "softplus", "neg_softplus", "ordered")

#: Replacement value when every entry of a likelihood vector is divergent.
_ALL_DIVERGENT = -1.0e6
#: Distance below the batch minimum used for isolated divergent entries.
_CLAMP_OFFSET = 100.0


@dataclass(frozen=True)
class ParamBlock:
    """One named parameter array with its variational bijector."""

    name: str
    shape: tuple[int, ...]
    bijector: str = "identity"

    def __post_init__(self):
        if self.bijector not in BIJECTORS:
            raise ValueError(f"unknown bijector {self.bijector!r}")
        if self.bijector == "ordered" and (not self.shape or self.shape[-1] < 2):
            raise ValueError("ordered bijector needs a trailing axis of >= 2")

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1


class Model(Protocol):
    """What a model must provide to be trained by this module."""

    blocks: list[ParamBlock]

    def log_likelihood(self, params: Mapping[str, np.ndarray], batch) -> tuple[np.ndarray, object]:
        """Per-observation log likelihood and an opaque cache for gradients."""

    def likelihood_gradients(self, params, batch, cache, weights) -> dict[str, np.ndarray]:
        """Gradient of ``sum(weights * log_likelihood)`` per constrained block."""

    def prior_log_density(self, params) -> float: ...

    def prior_gradients(self, params) -> dict[str, np.ndarray]: ...


# ---------------------------------------------------------------------------
# bijectors


def bijector_forward(kind: str, u: np.ndarray) -> np.ndarray:
    if kind == "identity":
        return u
    if kind == "softplus":
        return softplus(u)
    if kind == "neg_softplus":
        return -softplus(u)
    if kind == "ordered":
        out = np.empty_like(u)
        out[..., 0] = u[..., 0]
        np.cumsum(softplus(u[..., 1:]), axis=-1, out=out[..., 1:])
        out[..., 1:] = out[..., :1] - out[..., 1:]
        return out
    raise ValueError(f"unknown bijector {kind!r}")


def bijector_log_jacobian(kind: str, u: np.ndarray) -> float:
    if kind == "identity":
        return 0.0
    if kind in ("softplus", "neg_softplus"):
        return float(log_sigmoid(u).sum())
    if kind == "ordered":
        return float(log_sigmoid(u[..., 1:]).sum())
    raise ValueError(f"unknown bijector {kind!r}")


def bijector_backward(kind: str, u: np.ndarray, grad_constrained) -> np.ndarray:
    """Chain a gradient in constrained space back to unconstrained space.

    Includes the gradient of the bijector's own log-Jacobian, so the result
    is the full derivative of (objective + log|J|) with respect to ``u``.
    """
    g = np.broadcast_to(np.asarray(grad_constrained, dtype=float), u.shape)
    if kind == "identity":
        return g.copy()
    if kind == "softplus":
        return g * sigmoid(u) + sigmoid(-u)
    if kind == "neg_softplus":
        return -g * sigmoid(u) + sigmoid(-u)
    if kind == "ordered":
        tail = np.cumsum(g[..., ::-1], axis=-1)[..., ::-1]
        out = np.empty_like(u)
        out[..., 0] = tail[..., 0]
        out[..., 1:] = -sigmoid(u[..., 1:]) * tail[..., 1:] + sigmoid(-u[..., 1:])
        return out
    raise ValueError(f"unknown bijector {kind!r}")


# ---------------------------------------------------------------------------
# posterior


class MeanFieldPosterior:
    """Independent Gaussians over unconstrained parameters, one per block."""

    def __init__(self, blocks: Sequence[ParamBlock],
                 mean: Mapping[str, np.ndarray] | None = None,
                 log_sd: Mapping[str, np.ndarray] | None = None):
        names = [b.name for b in blocks]
        if len(set(names)) != len(names):
            raise ValueError("duplicate block names")
        self.blocks = list(blocks)
        self.mean: dict[str, np.ndarray] = {}
        self.log_sd: dict[str, np.ndarray] = {}
        for b in self.blocks:
            m = np.asarray(mean[b.name], dtype=float) if mean else np.zeros(b.shape)
            s = np.asarray(log_sd[b.name], dtype=float) if log_sd else np.zeros(b.shape)
            if m.shape != b.shape or s.shape != b.shape:
                raise ValueError(f"block {b.name!r}: mean/log_sd shape mismatch")
            self.mean[b.name] = m.copy()
            self.log_sd[b.name] = s.copy()

    @classmethod
    def initialize(cls, blocks: Sequence[ParamBlock], init_mean: float = 0.0,
                   init_log_sd: float = math.log(0.01)) -> "MeanFieldPosterior":
        post = cls(blocks)
        for b in blocks:
            post.mean[b.name] = np.full(b.shape, float(init_mean))
            post.log_sd[b.name] = np.full(b.shape, float(init_log_sd))
        return post

    @property
    def n_parameters(self) -> int:
        return sum(b.size for b in self.blocks)

    def copy(self) -> "MeanFieldPosterior":
        return MeanFieldPosterior(self.blocks, self.mean, self.log_sd)

    def entropy(self) -> float:
        """Gaussian entropy of the unconstrained posterior."""
        const = 0.5 * (1.0 + LOG_TWO_PI)
        total = const * self.n_parameters
        for b in self.blocks:
            total += float(self.log_sd[b.name].sum())
        return total

    def to_vector(self) -> np.ndarray:
        parts = []
        for b in self.blocks:
            parts.append(self.mean[b.name].ravel())
            parts.append(self.log_sd[b.name].ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def from_vector(self, vec: np.ndarray) -> "MeanFieldPosterior":
        vec = np.asarray(vec, dtype=float)
        out = self.copy()
        offset = 0
        for b in self.blocks:
            n = b.size
            out.mean[b.name] = vec[offset:offset + n].reshape(b.shape).copy()
            offset += n
            out.log_sd[b.name] = vec[offset:offset + n].reshape(b.shape).copy()
            offset += n
        if offset != vec.size:
            raise ValueError("vector length does not match posterior size")
        return out


def make_noise(posterior: MeanFieldPosterior, num_draws: int,
               rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Standard-normal noise for ``num_draws`` reparameterized samples."""
    return {b.name: rng.standard_normal((num_draws,) + b.shape)
            for b in posterior.blocks}


def sample_parameters(posterior: MeanFieldPosterior, num_draws: int,
                      rng: np.random.Generator) -> list[dict[str, np.ndarray]]:
    """Constrained parameter draws: mean + sd * noise, through the bijectors."""
    noise = make_noise(posterior, num_draws, rng)
    draws = []
    for s in range(num_draws):
        params = {}
        for b in posterior.blocks:
            u = posterior.mean[b.name] + np.exp(posterior.log_sd[b.name]) * noise[b.name][s]
            params[b.name] = bijector_forward(b.bijector, u)
        draws.append(params)
    return draws


# ---------------------------------------------------------------------------
# ELBO


def clamp_divergent(values: np.ndarray) -> np.ndarray:
    """Replace non-finite entries so a minibatch stays usable.

    Finite entries pass through unchanged. Non-finite entries become the
    minimum finite entry minus a fixed offset of 100; if nothing is finite,
    every entry becomes -1e6. Idempotent, and order-preserving on the
    finite entries.
    """
    v = np.asarray(values, dtype=float).copy()
    finite = np.isfinite(v)
    if finite.all():
        return v
    if not finite.any():
        v[:] = _ALL_DIVERGENT
        return v
    v[~finite] = v[finite].min() - _CLAMP_OFFSET
    return v


def _diagnostic_dump(posterior: MeanFieldPosterior, detail: str) -> str:
    lines = [f"non-finite objective: {detail}"]
    for b in posterior.blocks:
        m, s = posterior.mean[b.name], posterior.log_sd[b.name]
        lines.append(
            f"  block {b.name}: mean in [{m.min():.4g}, {m.max():.4g}], "
            f"log_sd in [{s.min():.4g}, {s.max():.4g}], "
            f"nonfinite means={int((~np.isfinite(m)).sum())}")
    return "\n".join(lines)


def elbo_and_gradients(model: Model, posterior: MeanFieldPosterior, batch,
                       n_total: int, noise: Mapping[str, np.ndarray],
                       want_gradients: bool = True):
    """Monte-Carlo ELBO (and optionally its exact gradient) for fixed noise.

    ``noise`` holds ``(S,) + shape`` standard-normal draws per block, as
    produced by :func:`make_noise`. The likelihood sum over the batch is
    scaled by ``n_total / batch_size``; prior, entropy, and Jacobian terms
    enter once. Returns ``(elbo, grad_mean, grad_log_sd)``; the gradient
    dicts are ``None`` when ``want_gradients`` is false.

    Raises :class:`NumericalError` if any per-draw objective is non-finite
    after likelihood clamping.
    """
    num_draws = next(iter(noise.values())).shape[0] if noise else 1
    sds = {k: np.exp(v) for k, v in posterior.log_sd.items()}
    grad_mean = {b.name: np.zeros(b.shape) for b in posterior.blocks} if want_gradients else None
    grad_log_sd = {b.name: np.zeros(b.shape) for b in posterior.blocks} if want_gradients else None

    total = 0.0
    for s in range(num_draws):
        u = {}
        params = {}
        for b in posterior.blocks:
            u[b.name] = posterior.mean[b.name] + sds[b.name] * noise[b.name][s]
            params[b.name] = bijector_forward(b.bijector, u[b.name])
        ll, cache = model.log_likelihood(params, batch)
        ll = np.asarray(ll, dtype=float)
        scale = float(n_total) / ll.shape[0]
        finite = np.isfinite(ll)
        clamped = clamp_divergent(ll)
        prior = model.prior_log_density(params)
        log_jac = sum(bijector_log_jacobian(b.bijector, u[b.name])
                      for b in posterior.blocks)
        draw_total = scale * float(clamped.sum()) + prior + log_jac
        if not np.isfinite(draw_total):
            raise NumericalError(_diagnostic_dump(
                posterior, f"draw {s}: likelihood={float(clamped.sum()):.4g}, "
                           f"prior={prior:.4g}, log_jacobian={log_jac:.4g}"))
        total += draw_total

        if want_gradients:
            weights = np.where(finite, scale, 0.0)
            g_like = model.likelihood_gradients(params, batch, cache, weights)
            g_prior = model.prior_gradients(params)
            for b in posterior.blocks:
                g_con = np.zeros(b.shape)
                if b.name in g_like:
                    g_con = g_con + g_like[b.name]
                if b.name in g_prior:
                    g_con = g_con + g_prior[b.name]
                g_u = bijector_backward(b.bijector, u[b.name], g_con)
                grad_mean[b.name] += g_u / num_draws
                grad_log_sd[b.name] += g_u * noise[b.name][s] * sds[b.name] / num_draws

    elbo = total / num_draws + posterior.entropy()
    if want_gradients:
        for b in posterior.blocks:
            grad_log_sd[b.name] += 1.0   # entropy term, d/d log_sd
    return elbo, grad_mean, grad_log_sd


def elbo_value(model: Model, posterior: MeanFieldPosterior, batch,
               n_total: int, noise: Mapping[str, np.ndarray]) -> float:
    """The ELBO estimate alone, for fixed noise (finite-difference target)."""
    value, _, _ = elbo_and_gradients(model, posterior, batch, n_total, noise,
                                     want_gradients=False)
    return value


# ---------------------------------------------------------------------------
# optimizers


class Adam:
    """Standard Adam with bias correction; keys are arbitrary hashables."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            g = np.asarray(g, dtype=float)
            m = self.m.get(k)
            v = self.v.get(k)
            m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
            v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
            self.m[k], self.v[k] = m, v
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            params[k] = params[k] - lr * m_hat / (np.sqrt(v_hat) + self.eps)


class Lookahead:
    """Slow/fast weight averaging around an inner optimizer.

    Every ``sync_period`` inner steps the slow weights move a fraction
    ``slow_step`` toward the fast weights, and the fast weights reset to the
    slow ones.
    """

    def __init__(self, sync_period: int = 6, slow_step: float = 0.5):
        if sync_period < 1 or not 0 < slow_step <= 1:
            raise ValueError("sync_period must be >= 1 and slow_step in (0, 1]")
        self.sync_period = sync_period
        self.slow_step = slow_step
        self.counter = 0
        self.slow: dict | None = None

    def after_step(self, params: dict) -> None:
        if self.slow is None:
            self.slow = {k: np.array(v, dtype=float) for k, v in params.items()}
        self.counter += 1
        if self.counter % self.sync_period == 0:
            for k in params:
                self.slow[k] = self.slow[k] + self.slow_step * (params[k] - self.slow[k])
                params[k] = self.slow[k].copy()


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    """Knobs for :func:`train`, with production defaults.

    The learning rate decays by ``lr_decay`` (a fraction) after every epoch
    whose mean batch loss fails to beat the best epoch seen so far, and
    training halts after ``patience`` consecutive such epochs or at
    ``max_epochs``, whichever comes first.
    """

    batch_size: int = 10_000
    param_samples: int = 8
    learning_rate: float = 0.0015
    lr_decay: float = 0.10
    patience: int = 5
    max_epochs: int = 100
    lookahead_period: int = 6
    lookahead_step: float = 0.5
    seed: int = 0
    init_mean: float = 0.0
    init_log_sd: float = math.log(0.01)

    def __post_init__(self):
        if min(self.batch_size, self.param_samples, self.patience,
               self.max_epochs, self.lookahead_period) < 1:
            raise ValueError("counts must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.lr_decay < 1:
            raise ValueError("lr_decay must lie in [0, 1)")
        if not 0 < self.lookahead_step <= 1:
            raise ValueError("lookahead_step must lie in (0, 1]")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    learning_rate: float      # in effect after this epoch's decay, if any
    stagnation: int
    skipped_steps: int = 0


@dataclass
class TrainResult:
    posterior: MeanFieldPosterior          # best-loss epoch
    history: list[EpochStats]
    best_loss: float
    best_epoch: int
    final_posterior: MeanFieldPosterior    # where the optimizer stopped


class ArrayDataset:
    """Dict-of-arrays dataset; values may be arrays or one level of dict."""

    def __init__(self, arrays: Mapping[str, object]):
        self.arrays = dict(arrays)
        lengths = set()
        for v in self.arrays.values():
            if isinstance(v, Mapping):
                lengths.update(np.asarray(a).shape[0] for a in v.values())
            else:
                lengths.add(np.asarray(v).shape[0])
        if len(lengths) != 1:
            raise ValueError(f"inconsistent array lengths: {sorted(lengths)}")
        self._n = lengths.pop()

    def __len__(self) -> int:
        return self._n

    def take(self, idx: np.ndarray) -> dict:
        out = {}
        for k, v in self.arrays.items():
            if isinstance(v, Mapping):
                out[k] = {kk: np.asarray(vv)[idx] for kk, vv in v.items()}
            else:
                out[k] = np.asarray(v)[idx]
        return out


def train(model: Model, dataset: ArrayDataset, config: TrainConfig) -> TrainResult:
    """Fit the posterior by stochastic gradient ascent on the ELBO.

    Minibatches are drawn without replacement each epoch. Steps whose
    gradients contain non-finite values are skipped and counted. The
    returned posterior is the one from the best-loss epoch.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(config.seed)
    posterior = MeanFieldPosterior.initialize(
        model.blocks, config.init_mean, config.init_log_sd)
    adam = Adam()
    lookahead = Lookahead(config.lookahead_period, config.lookahead_step)
    lr = config.learning_rate
    best_loss = math.inf
    best_epoch = 0
    best = posterior.copy()
    stagnation = 0
    history: list[EpochStats] = []

    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n)
        losses = []
        skipped = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            batch = dataset.take(idx)
            noise = make_noise(posterior, config.param_samples, rng)
            elbo, g_mean, g_log_sd = elbo_and_gradients(
                model, posterior, batch, n, noise)
            losses.append(-elbo)
            flat_grads = {}
            for b in model.blocks:
                flat_grads[("mean", b.name)] = -g_mean[b.name]
                flat_grads[("log_sd", b.name)] = -g_log_sd[b.name]
            if any(not np.all(np.isfinite(g)) for g in flat_grads.values()):
                skipped += 1
                logger.warning("epoch %d: skipping step with non-finite gradient",
                               epoch)
                continue
            flat_params = {}
            for b in model.blocks:
                flat_params[("mean", b.name)] = posterior.mean[b.name]
                flat_params[("log_sd", b.name)] = posterior.log_sd[b.name]
            adam.step(flat_params, flat_grads, lr)
            lookahead.after_step(flat_params)
            for b in model.blocks:
                posterior.mean[b.name] = flat_params[("mean", b.name)]
                posterior.log_sd[b.name] = flat_params[("log_sd", b.name)]

        mean_loss = float(np.mean(losses))
        if mean_loss < best_loss:
            best_loss = mean_loss
            best_epoch = epoch
            best = posterior.copy()
            stagnation = 0
        else:
            stagnation += 1
            lr *= (1.0 - config.lr_decay)
        history.append(EpochStats(epoch=epoch, mean_loss=mean_loss,
                                  learning_rate=lr, stagnation=stagnation,
                                  skipped_steps=skipped))
        if stagnation >= config.patience:
            logger.info("halting after %d stagnant epochs", stagnation)
            break

    return TrainResult(posterior=best, history=history, best_loss=best_loss,
                       best_epoch=best_epoch, final_posterior=posterior)


def write_training_log(history: Iterable[EpochStats], path: str | Path) -> None:
    lines = ["epoch,mean_loss,learning_rate,stagnation,skipped_steps"]
    for row in history:
        lines.append(f"{row.epoch},{row.mean_loss!r},{row.learning_rate!r},"
                     f"{row.stagnation},{row.skipped_steps}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# posterior serialization


def save_posterior(posterior: MeanFieldPosterior, path: str | Path) -> None:
    """Write a posterior as ``<path>.json`` (blocks) + ``<path>.npz`` (values)."""
    path = Path(path)
    manifest = {"blocks": [{"name": b.name, "shape": list(b.shape),
                            "bijector": b.bijector} for b in posterior.blocks]}
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2))
    arrays = {}
    for b in posterior.blocks:
        arrays[f"mean::{b.name}"] = posterior.mean[b.name]
        arrays[f"log_sd::{b.name}"] = posterior.log_sd[b.name]
    np.savez(path.with_suffix(".npz"), **arrays)


def load_posterior(path: str | Path) -> MeanFieldPosterior:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    blocks = [ParamBlock(d["name"], tuple(d["shape"]), d["bijector"])
              for d in manifest["blocks"]]
    blobs = np.load(path.with_suffix(".npz"))
    mean = {b.name: blobs[f"mean::{b.name}"] for b in blocks}
    log_sd = {b.name: blobs[f"log_sd::{b.name}"] for b in blocks}
    return MeanFieldPosterior(blocks, mean, log_sd)


# ---------------------------------------------------------------------------
# reference model


class GaussianLocationModel:
    """IID normal observations with an unknown location and known scale.

    The smallest possible implementation of the model protocol. Because the
    prior on the location is also normal, the exact posterior is available
    in closed form (:meth:`exact_posterior`), which makes this the standard
    correctness check for the whole inference stack.
    """

    def __init__(self, observation_sd: float = 1.0, prior_mean: float = 0.0,
                 prior_sd: float = 1.0):
        if observation_sd <= 0 or prior_sd <= 0:
            raise ValueError("scales must be positive")
        self.observation_sd = observation_sd
        self.prior_mean = prior_mean
        self.prior_sd = prior_sd
        self.blocks = [ParamBlock("location", (), "identity")]

    def log_likelihood(self, params, batch):
        resid = np.asarray(batch["y"], dtype=float) - params["location"]
        var = self.observation_sd ** 2
        ll = -0.5 * LOG_TWO_PI - math.log(self.observation_sd) - 0.5 * resid ** 2 / var
        return ll, resid

    def likelihood_gradients(self, params, batch, cache, weights):
        resid = cache
        return {"location": np.asarray(np.sum(weights * resid) / self.observation_sd ** 2)}

    def prior_log_density(self, params) -> float:
        resid = float(params["location"]) - self.prior_mean
        return float(-0.5 * LOG_TWO_PI - math.log(self.prior_sd)
                     - 0.5 * resid ** 2 / self.prior_sd ** 2)

    def prior_gradients(self, params):
        resid = float(params["location"]) - self.prior_mean
        return {"location": np.asarray(-resid / self.prior_sd ** 2)}

    def exact_posterior(self, y) -> tuple[float, float]:
        """Closed-form posterior mean and standard deviation."""
        y = np.asarray(y, dtype=float)
        prec = 1.0 / self.prior_sd ** 2 + y.size / self.observation_sd ** 2
        mean = (self.prior_mean / self.prior_sd ** 2
                + y.sum() / self.observation_sd ** 2) / prec
        return mean, 1.0 / math.sqrt(prec)
