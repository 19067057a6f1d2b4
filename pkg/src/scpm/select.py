"""Mutual-information scoring of Fisher-vector dimensions and cluster selection.

Each dimension is quantized by equal-frequency binning fit on the training
split, the MI of (bin, class label) is estimated from the smoothed joint
histogram, and a cluster's importance is the sum over its 2p dimensions.
Clusters are ranked globally across all scale groups, so the number kept
per group falls out of the ranking rather than being fixed per group.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .encoder import FvLayout

DEFAULT_BINS = 8
# Additive mass per (bin, label) cell. Small enough that a perfectly
# label-aligned dimension stays within 2e-3 of ln(2) at n=1000.
DEFAULT_SMOOTHING = 0.1

SELECTION_FRACTIONS = (1.0, 0.75, 0.5, 0.25, 0.125)


class SelectError(ValueError):
    pass


def quantize_column(col: np.ndarray, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Equal-frequency bin ids for one dimension; degenerate value
    distributions collapse to fewer (occupied) bins."""
    qs = np.arange(1, bins) / bins
    edges = np.unique(np.quantile(col, qs))
    # side="left": a value sitting exactly on an edge stays below it, so a
    # minority value above a run of duplicates keeps its own bin
    raw = np.searchsorted(edges, col, side="left")
    _, dense = np.unique(raw, return_inverse=True)
    return dense


def _mi_from_joint(counts: np.ndarray, smoothing: float) -> float:
    table = counts + smoothing
    total = table.sum()
    p = table / total
    pb = p.sum(axis=1, keepdims=True)
    pc = p.sum(axis=0, keepdims=True)
    nz = p > 0.0
    mi = float(np.sum(p[nz] * np.log(p[nz] / (pb * pc)[nz])))
    return max(mi, 0.0)


def mi_per_dimension(
    fvs: np.ndarray,
    labels: np.ndarray,
    bins: int = DEFAULT_BINS,
    smoothing: float = DEFAULT_SMOOTHING,
) -> np.ndarray:
    """MI (nats) between each Fisher-vector dimension and the class label."""
    x = np.asarray(fvs, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise SelectError("fvs must be (n_samples, n_dims) aligned with labels")
    classes, y_idx = np.unique(y, return_inverse=True)
    n_classes = classes.shape[0]
    if n_classes < 2:
        raise SelectError("mutual information needs at least 2 classes")
    counts_per_class = np.bincount(y_idx, minlength=n_classes)
    if counts_per_class.min() < 2:
        warnings.warn("some classes have fewer than 2 samples; MI will be unreliable")
    out = np.empty(x.shape[1])
    for d in range(x.shape[1]):
        b = quantize_column(x[:, d], bins=bins)
        n_bins = int(b.max()) + 1
        joint = np.bincount(b * n_classes + y_idx, minlength=n_bins * n_classes)
        out[d] = _mi_from_joint(joint.reshape(n_bins, n_classes).astype(np.float64), smoothing)
    return out


@dataclass
class ClusterImportance:
    """Summed per-dimension MI for every (group, component) cluster."""

    values: np.ndarray  # (m, K)
    layout: FvLayout

    def items(self):
        for g in range(self.layout.m):
            for c in range(self.layout.n_components):
                yield (g, c), float(self.values[g, c])


def cluster_importance(mi: np.ndarray, layout: FvLayout) -> ClusterImportance:
    mi = np.asarray(mi, dtype=np.float64)
    if mi.shape != (layout.total_length,):
        raise SelectError(
            f"MI vector of length {mi.shape} does not cover layout of {layout.total_length}"
        )
    values = mi.reshape(layout.m, layout.n_components, 2 * layout.dim).sum(axis=2)
    return ClusterImportance(values=values, layout=layout)


@dataclass(frozen=True)
class SelectionMask:
    fraction: float
    kept: tuple  # of (group, component), sorted ascending
    layout: FvLayout

    @property
    def n_kept(self) -> int:
        return len(self.kept)

    def columns(self) -> np.ndarray:
        return self.layout.columns_for(self.kept)

    def to_jsonable(self):
        return {
            "fraction": self.fraction,
            "kept": [list(k) for k in self.kept],
            "layout": self.layout.to_jsonable(),
        }

    @classmethod
    def from_jsonable(cls, obj):
        return cls(
            fraction=float(obj["fraction"]),
            kept=tuple(sorted((int(g), int(c)) for g, c in obj["kept"])),
            layout=FvLayout.from_jsonable(obj["layout"]),
        )


def select_clusters(importance: ClusterImportance, fraction: float) -> SelectionMask:
    """Keep the top round(fraction * m * K) clusters by global importance,
    ties broken by (group, component) ascending."""
    if not (0.0 < fraction <= 1.0):
        raise SelectError("fraction must be in (0, 1]")
    layout = importance.layout
    n_keep = int(np.floor(fraction * layout.n_clusters + 0.5))
    ranked = sorted(importance.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = tuple(sorted(key for key, _ in ranked[:n_keep]))
    return SelectionMask(fraction=fraction, kept=kept, layout=layout)
