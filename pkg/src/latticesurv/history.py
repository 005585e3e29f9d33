"""Low-dimensional encoding of service-history counts, and group assignment.

Count vectors (per-person category tallies over a lookback window) are
compressed through a linear encoder with non-negative weights, trained
together with a non-negative decoder to reconstruct the counts under a
Poisson objective with an L1 penalty on the encoder. Each encoded dimension
is then split at its training median, and the resulting sign pattern packs
into one of ``2**latent_dim`` history groups.

The factorization is fit by multiplicative updates (which preserve
non-negativity) with a backtracking safeguard so the penalized loss never
increases across outer iterations.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

_EPS = 1e-12


def _poisson_loss(counts, reconstruction):
    # Poisson negative log likelihood without the data-only gammaln term.
    return float(np.sum(reconstruction - counts * np.log(reconstruction + _EPS)))


def penalized_loss(counts, encoder, decoder, sparsity_weight) -> float:
    """Poisson reconstruction loss plus the L1 encoder penalty."""
    recon = (counts @ encoder.T) @ decoder
    return _poisson_loss(counts, recon) + float(sparsity_weight) * float(encoder.sum())


@dataclass
class FactorizationModel:
    """Non-negative encoder/decoder pair with the training loss trace."""

    encoder: np.ndarray            # (latent_dim, history_dim)
    decoder: np.ndarray            # (latent_dim, history_dim)
    sparsity_weight: float
    loss_trace: list[float] = field(default_factory=list)

    @property
    def latent_dim(self) -> int:
        return self.encoder.shape[0]

    @property
    def history_dim(self) -> int:
        return self.encoder.shape[1]

    def save(self, path: str | Path) -> None:
        payload = {
            "encoder": self.encoder.tolist(),
            "decoder": self.decoder.tolist(),
            "sparsity_weight": self.sparsity_weight,
        }
        Path(path).write_text(json.dumps(payload, indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "FactorizationModel":
        payload = json.loads(Path(path).read_text())
        return cls(encoder=np.asarray(payload["encoder"], dtype=float),
                   decoder=np.asarray(payload["decoder"], dtype=float),
                   sparsity_weight=float(payload["sparsity_weight"]))


def fit_factorization(counts, latent_dim: int = 5, sparsity_weight: float = 0.1,
                      n_iter: int = 300, seed: int = 0,
                      rtol: float = 1e-7) -> FactorizationModel:
    """Fit the sparse non-negative factorization to a count matrix.

    Parameters
    ----------
    counts : array_like, shape (n, history_dim)
        Non-negative count (or rate) matrix.
    latent_dim : int
        Number of encoded dimensions.
    sparsity_weight : float
        Weight of the L1 penalty on encoder entries.
    n_iter : int
        Maximum outer iterations; each updates decoder then encoder.
    seed : int
        Seed for the positive random initialization.
    rtol : float
        Stop when the relative loss improvement falls below this.
    """
    x = np.asarray(counts, dtype=float)
    if x.ndim != 2:
        raise ValueError("counts must be 2-d")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError("counts must be finite and non-negative")
    if not x.any():
        raise DataError("count matrix is entirely zero")
    if latent_dim < 1:
        raise ValueError("latent_dim must be at least 1")
    if sparsity_weight < 0:
        raise ValueError("sparsity_weight must be non-negative")

    n, h = x.shape
    rng = np.random.default_rng(seed)
    # Rough scales so the first reconstruction is within a couple of orders
    # of magnitude of the data; multiplicative updates fix the rest.
    encoder = rng.uniform(0.5, 1.5, size=(latent_dim, h)) / h
    decoder = rng.uniform(0.5, 1.5, size=(latent_dim, h)) / latent_dim

    col_sums = x.sum(axis=0)                      # reused in encoder updates
    loss = penalized_loss(x, encoder, decoder, sparsity_weight)
    trace = [loss]
    for _ in range(n_iter):
        enc_prev, dec_prev = encoder, decoder

        z = x @ encoder.T                          # (n, latent)
        recon = z @ decoder
        ratio = x / (recon + _EPS)
        decoder = decoder * (z.T @ ratio) / (z.sum(axis=0)[:, None] + _EPS)

        recon = z @ decoder
        ratio = x / (recon + _EPS)
        numer = (decoder @ ratio.T) @ x
        denom = decoder.sum(axis=1)[:, None] * col_sums[None, :]
        encoder = encoder * numer / (denom + sparsity_weight + _EPS)

        new_loss = penalized_loss(x, encoder, decoder, sparsity_weight)
        # Multiplicative steps are not guaranteed monotone for the tied
        # encoder/decoder objective, so damp toward the previous iterate
        # until the penalized loss stops increasing.
        halvings = 0
        while new_loss > loss and halvings < 30:
            encoder = 0.5 * (encoder + enc_prev)
            decoder = 0.5 * (decoder + dec_prev)
            new_loss = penalized_loss(x, encoder, decoder, sparsity_weight)
            halvings += 1
        if new_loss > loss:
            encoder, decoder = enc_prev, dec_prev
            break
        improved = loss - new_loss
        loss = new_loss
        trace.append(loss)
        if improved <= rtol * abs(loss):
            break

    dead = ~np.any(encoder > 0, axis=1)
    if np.any(dead):
        logger.warning("%d latent dimension(s) have an all-zero encoder row; "
                       "consider lowering sparsity_weight", int(dead.sum()))
    return FactorizationModel(encoder=encoder, decoder=decoder,
                              sparsity_weight=float(sparsity_weight),
                              loss_trace=trace)


def encode_history(counts, model: FactorizationModel) -> np.ndarray:
    """Encoded coordinates ``z = encoder @ x`` for one row or a matrix."""
    x = np.asarray(counts, dtype=float)
    if x.shape[-1] != model.history_dim:
        raise ValueError(f"expected trailing dimension {model.history_dim}")
    if np.any(x < 0):
        raise ValueError("history counts must be non-negative")
    return x @ model.encoder.T


@dataclass
class GroupRule:
    """Per-dimension medians that define the history group bit-split."""

    medians: np.ndarray

    def __post_init__(self):
        self.medians = np.asarray(self.medians, dtype=float)

    @property
    def n_groups(self) -> int:
        return 2 ** self.medians.size

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({"medians": self.medians.tolist()}))

    @classmethod
    def load(cls, path: str | Path) -> "GroupRule":
        return cls(medians=json.loads(Path(path).read_text())["medians"])


def fit_group_rule(encodings) -> GroupRule:
    """Medians of each encoded dimension over the training rows."""
    z = np.asarray(encodings, dtype=float)
    if z.ndim != 2:
        raise ValueError("encodings must be 2-d")
    return GroupRule(medians=np.median(z, axis=0))


def assign_group(encodings, rule: GroupRule) -> np.ndarray:
    """History group indices from encoded coordinates.

    Bit ``d`` of the group index is 1 when ``z[d]`` exceeds the dimension's
    median; values exactly at the median fall on the low side. Bits pack
    little-endian, so groups range over ``[0, 2**latent_dim)``.
    """
    z = np.asarray(encodings, dtype=float)
    if z.shape[-1] != rule.medians.size:
        raise ValueError("encoding width does not match the rule")
    bits = (z > rule.medians).astype(np.int64)
    weights = 1 << np.arange(rule.medians.size, dtype=np.int64)
    return bits @ weights


def sparsity_report(model: FactorizationModel, feature_names=None,
                    top: int = 8) -> list[dict]:
    """Largest encoder weights per latent dimension, for interpretation."""
    h = model.history_dim
    names = list(feature_names) if feature_names is not None else [
        f"feature_{j}" for j in range(h)]
    if len(names) != h:
        raise ValueError("feature_names length must match history_dim")
    report = []
    for d in range(model.latent_dim):
        row = model.encoder[d]
        order = np.argsort(row)[::-1][:top]
        report.append({
            "dimension": d,
            "nonzero_weights": int(np.sum(row > 0)),
            "top_features": [
                {"feature": names[j], "weight": float(row[j])}
                for j in order if row[j] > 0],
        })
    return report
