"""Additive lattice decompositions for cohort-indexed model parameters.

A parameter that varies over a multi-dimensional grid of cohort labels is
stored as a sum of component tensors, one per subset of grid dimensions up
to a maximum interaction order: a shared pooled term, one main-effect tensor
per dimension, pairwise interaction tensors, and so on. The value for a cell
is the sum of the component entries that cell indexes into. Cells that agree
on a dimension share that dimension's component entries, which is what gives
the partial pooling, and the storage cost is the sum of component sizes
rather than the size of the dense grid.

Component tensors carry an arbitrary trailing "tail" shape so the same
machinery serves scalar parameters, per-interval vectors, and per-interval
coefficient matrices.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .numerics import gaussian_log_density, half_cauchy_log_density


def subset_label(subset: tuple[str, ...]) -> str:
    """Stable string name for a dimension subset ("pooled" for the empty one)."""
    return "+".join(subset) if subset else "pooled"


@dataclass(frozen=True)
class LatticeSpec:
    """Dimension names and sizes of a cohort grid, plus an interaction cap.

    Parameters
    ----------
    names : tuple of str
        Dimension names, in canonical order.
    sizes : tuple of int
        Number of levels per dimension, aligned with ``names``.
    max_order : int
        Largest subset of dimensions that receives its own component tensor.
        Order 0 keeps only the pooled term.
    """

    names: tuple[str, ...]
    sizes: tuple[int, ...]
    max_order: int

    def __post_init__(self):
        if len(self.names) != len(self.sizes):
            raise ValueError("names and sizes must have equal length")
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate dimension names")
        if any(s < 1 for s in self.sizes):
            raise ValueError("dimension sizes must be positive")
        if self.max_order < 0 or self.max_order > len(self.names):
            raise ValueError("max_order must lie in [0, number of dimensions]")

    def axis(self, name: str) -> int:
        return self.names.index(name)

    def subsets(self) -> list[tuple[str, ...]]:
        """All retained dimension subsets, ordered by interaction order.

        Subsets are tuples of dimension names in canonical dimension order,
        beginning with the empty (pooled) subset.
        """
        out: list[tuple[str, ...]] = []
        for order in range(self.max_order + 1):
            out.extend(itertools.combinations(self.names, order))
        return out

    def subset_shape(self, subset: tuple[str, ...]) -> tuple[int, ...]:
        return tuple(self.sizes[self.axis(n)] for n in subset)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.sizes, dtype=np.int64))

    def iter_cells(self) -> Iterator[tuple[int, ...]]:
        return itertools.product(*(range(s) for s in self.sizes))


class LatticeDecomposition:
    """A concrete set of component tensors over a :class:`LatticeSpec`.

    Parameters
    ----------
    spec : LatticeSpec
    tail_shape : tuple of int
        Trailing shape attached to every component (for example ``(K,)`` for
        a per-interval parameter).
    components : mapping, optional
        Subset -> array. Missing subsets are filled with zeros. Subset keys
        must be tuples of dimension names in canonical dimension order.
    """

    def __init__(self, spec: LatticeSpec, tail_shape: tuple[int, ...] = (),
                 components: Mapping[tuple[str, ...], np.ndarray] | None = None):
        self.spec = spec
        self.tail_shape = tuple(tail_shape)
        self.components: dict[tuple[str, ...], np.ndarray] = {}
        wanted = spec.subsets()
        components = dict(components or {})
        for subset in wanted:
            shape = spec.subset_shape(subset) + self.tail_shape
            if subset in components:
                arr = np.asarray(components.pop(subset), dtype=float)
                if arr.shape != shape:
                    raise ValueError(
                        f"component {subset_label(subset)} has shape {arr.shape}, "
                        f"expected {shape}")
            else:
                arr = np.zeros(shape)
            self.components[subset] = arr
        if components:
            raise ValueError(f"unknown subsets: {sorted(components)}")

    @property
    def storage_size(self) -> int:
        """Total number of stored scalars, summed over component tensors."""
        return int(sum(c.size for c in self.components.values()))

    def copy(self) -> "LatticeDecomposition":
        return LatticeDecomposition(
            self.spec, self.tail_shape,
            {s: c.copy() for s, c in self.components.items()})

    def _check_coords(self, coords: Mapping[str, object]) -> dict[str, np.ndarray]:
        out = {}
        for name, size in zip(self.spec.names, self.spec.sizes):
            if name not in coords:
                raise KeyError(f"missing coordinate for dimension {name!r}")
            arr = np.asarray(coords[name])
            if not np.issubdtype(arr.dtype, np.integer):
                raise ValueError(f"coordinate {name!r} must be integer valued")
            if arr.size and (arr.min() < 0 or arr.max() >= size):
                raise IndexError(f"coordinate {name!r} out of range [0, {size})")
            out[name] = arr
        return out

    def assemble(self, coords: Mapping[str, object]) -> np.ndarray:
        """Sum the component entries selected by ``coords``.

        ``coords`` maps every dimension name to either an integer (one cell)
        or an integer array of shape ``(B,)`` (a batch of cells). Returns an
        array of shape ``tail_shape`` or ``(B,) + tail_shape`` respectively.
        """
        arrs = self._check_coords(coords)
        batched = any(a.ndim > 0 for a in arrs.values())
        if batched:
            lengths = {a.shape for a in arrs.values() if a.ndim > 0}
            if len(lengths) > 1 or any(a.ndim > 1 for a in arrs.values()):
                raise ValueError("batched coordinates must share one 1-d shape")
            n = next(iter(lengths))[0]
            out = np.zeros((n,) + self.tail_shape)
        else:
            out = np.zeros(self.tail_shape)
        for subset, comp in self.components.items():
            if subset:
                idx = tuple(arrs[name] for name in subset)
                out = out + comp[idx]
            else:
                out = out + comp
        return out

    def assemble_all(self) -> np.ndarray:
        """Dense grid of assembled values, shape ``sizes + tail_shape``.

        Materializes the full lattice; intended for reports and small grids.
        """
        ndim = len(self.spec.names)
        out = np.zeros(tuple(self.spec.sizes) + self.tail_shape)
        for subset, comp in self.components.items():
            shape = [1] * ndim
            for name in subset:
                shape[self.spec.axis(name)] = self.spec.sizes[self.spec.axis(name)]
            out += comp.reshape(tuple(shape) + self.tail_shape)
        return out

    def cell_rows(self) -> Iterator[tuple[dict[str, int], np.ndarray]]:
        """Iterate (coordinate dict, assembled value) over every cell."""
        dense = self.assemble_all()
        for cell in self.spec.iter_cells():
            yield dict(zip(self.spec.names, cell)), dense[cell]


def order_scale(base_scale: float, decay: float, order: int) -> float:
    """Prior scale assigned to components of a given interaction order."""
    return float(base_scale) * float(decay) ** int(order)


def prior_log_density(decomp: LatticeDecomposition, base_scale: float = 5.0,
                      decay: float = 0.1) -> float:
    """Independent centered-Gaussian log prior over all component entries.

    Entries of an order-``o`` component get scale ``base_scale * decay**o``,
    so higher-order interactions are shrunk harder toward zero.
    """
    if base_scale <= 0 or decay <= 0:
        raise ValueError("base_scale and decay must be positive")
    total = 0.0
    for subset, comp in decomp.components.items():
        scale = order_scale(base_scale, decay, len(subset))
        total += float(gaussian_log_density(comp, scale).sum())
    return total


def prior_gradients(decomp: LatticeDecomposition, base_scale: float = 5.0,
                    decay: float = 0.1) -> dict[tuple[str, ...], np.ndarray]:
    """Gradient of :func:`prior_log_density` with respect to each component."""
    out = {}
    for subset, comp in decomp.components.items():
        scale = order_scale(base_scale, decay, len(subset))
        out[subset] = -comp / (scale * scale)
    return out


def implied_correlation(order_variances: Sequence[float], shared_order: int,
                        within_order_corr: Sequence[float] | None = None) -> float:
    """Prior correlation between two cells implied by the decomposition.

    ``order_variances[o]`` is the total variance contributed by order-``o``
    components to one cell's assembled value. Orders up to and including
    ``shared_order`` are fully shared between the two cells; above that,
    ``within_order_corr[o]`` gives the correlation contributed by partially
    shared components of order ``o`` (zero when nothing is shared).
    """
    variances = [float(v) for v in order_variances]
    if any(v < 0 for v in variances):
        raise ValueError("variances must be non-negative")
    if within_order_corr is None:
        corr = [0.0] * len(variances)
    else:
        corr = [float(c) for c in within_order_corr]
        if len(corr) != len(variances):
            raise ValueError("within_order_corr must align with order_variances")
    if shared_order < -1 or shared_order >= len(variances):
        # shared_order -1 means not even the pooled term is shared
        raise ValueError("shared_order out of range")
    denom = sum(variances)
    if denom == 0.0:
        raise ValueError("total variance is zero; correlation undefined")
    num = sum(v for o, v in enumerate(variances) if o <= shared_order)
    num += sum(corr[o] * v for o, v in enumerate(variances) if o > shared_order)
    return num / denom


def cell_prior_correlation(spec: LatticeSpec, cell_a: Mapping[str, int],
                           cell_b: Mapping[str, int], base_scale: float = 5.0,
                           decay: float = 0.1) -> float:
    """Correlation between two cells' assembled values under the order prior.

    A component is shared exactly when the two cells agree on every dimension
    the component indexes; the pooled term is always shared.
    """
    shared_var = 0.0
    total_var = 0.0
    for subset in spec.subsets():
        var = order_scale(base_scale, decay, len(subset)) ** 2
        total_var += var
        if all(int(cell_a[n]) == int(cell_b[n]) for n in subset):
            shared_var += var
    return shared_var / total_var


@dataclass
class HorseshoeState:
    """Coefficients with per-entry local scales and a shared global scale.

    ``local_scale`` matches ``coef`` elementwise; ``global_scale`` is a
    scalar (one per coefficient pool). Both scales must be positive.
    """

    coef: np.ndarray
    local_scale: np.ndarray
    global_scale: float

    def __post_init__(self):
        self.coef = np.asarray(self.coef, dtype=float)
        self.local_scale = np.asarray(self.local_scale, dtype=float)
        if self.local_scale.shape != self.coef.shape:
            raise ValueError("local_scale must match coef shape")
        if np.any(self.local_scale <= 0) or self.global_scale <= 0:
            raise ValueError("horseshoe scales must be positive")


def horseshoe_log_density(state: HorseshoeState) -> float:
    """Joint log density of coefficients and scales under a horseshoe prior.

    Coefficients are centered Gaussians with scale ``local * global``; both
    sets of scales get standard half-Cauchy priors.
    """
    scale = state.local_scale * state.global_scale
    total = float(gaussian_log_density(state.coef, scale).sum())
    total += float(half_cauchy_log_density(state.local_scale).sum())
    total += float(half_cauchy_log_density(state.global_scale).sum())
    return total


def horseshoe_gradients(state: HorseshoeState):
    """Gradients of :func:`horseshoe_log_density`.

    Returns ``(d_coef, d_local, d_global)`` with shapes matching the state.
    """
    lam = state.local_scale
    tau = float(state.global_scale)
    scale = lam * tau
    d_coef = -state.coef / (scale * scale)
    # derivative through the Gaussian scale, then the half-Cauchy terms
    d_scale = state.coef ** 2 / scale ** 3 - 1.0 / scale
    d_local = d_scale * tau - 2.0 * lam / (1.0 + lam * lam)
    d_global = float((d_scale * lam).sum()) - 2.0 * tau / (1.0 + tau * tau)
    return d_coef, d_local, d_global


def save_decomposition(decomp: LatticeDecomposition, path: str | Path) -> None:
    """Write a decomposition as ``<path>.json`` (manifest) + ``<path>.npz``."""
    path = Path(path)
    manifest = {
        "names": list(decomp.spec.names),
        "sizes": list(decomp.spec.sizes),
        "max_order": decomp.spec.max_order,
        "tail_shape": list(decomp.tail_shape),
        "subsets": [list(s) for s in decomp.components],
    }
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    arrays = {subset_label(s): c for s, c in decomp.components.items()}
    np.savez(path.with_suffix(".npz"), **arrays)


def load_decomposition(path: str | Path) -> LatticeDecomposition:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    spec = LatticeSpec(tuple(manifest["names"]), tuple(manifest["sizes"]),
                       int(manifest["max_order"]))
    blobs = np.load(path.with_suffix(".npz"))
    components = {tuple(s): blobs[subset_label(tuple(s))]
                  for s in manifest["subsets"]}
    return LatticeDecomposition(spec, tuple(manifest["tail_shape"]), components)
