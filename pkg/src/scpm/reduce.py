"""PCA over part descriptors, shared across all scale groups.

Fitting is an exact eigendecomposition of the sample covariance (d <= 512
makes iterative solvers pointless). One model is fit on a seeded uniform
subsample pooled across scales and reused by every group, since all
descriptors live in the same channel space.
"""

from dataclasses import dataclass

import numpy as np

from .modelio import load_model, save_model

DEFAULT_DIMS = 128
DEFAULT_FIT_SAMPLE = 1_000_000
_RANK_EPS = 1e-12


class PcaError(ValueError):
    pass


@dataclass
class PcaModel:
    """Orthonormal projection onto the top principal directions.

    `basis` rows beyond `effective_rank` are zero: projecting along a
    zero-variance direction is meaningless, so those coordinates are
    pinned to 0 rather than left to eigensolver noise.
    """

    mean: np.ndarray  # (d,)
    basis: np.ndarray  # (p, d)
    explained_variance: np.ndarray  # (p,) non-increasing
    effective_rank: int

    @property
    def input_dim(self) -> int:
        return self.mean.shape[0]

    @property
    def output_dim(self) -> int:
        return self.basis.shape[0]

    def save(self, path):
        save_model(
            path,
            "pca",
            {"p": self.output_dim, "d": self.input_dim, "effective_rank": self.effective_rank},
            {"mean": self.mean, "basis": self.basis, "explained_variance": self.explained_variance},
        )

    @classmethod
    def load(cls, path):
        _, meta, arrays = load_model(path, expect_kind="pca")
        return cls(
            mean=arrays["mean"],
            basis=arrays["basis"],
            explained_variance=arrays["explained_variance"],
            effective_rank=int(meta["effective_rank"]),
        )


def pca_fit(sample, p: int, seed: int = 0, max_sample: int = DEFAULT_FIT_SAMPLE) -> PcaModel:
    """Fit the top-`p` principal directions of `sample` (rows are vectors).

    If the sample exceeds `max_sample` rows a seeded uniform subsample is
    used; otherwise `seed` has no effect. Each basis row is signed so its
    largest-magnitude coordinate is positive.
    """
    x = np.asarray(sample, dtype=np.float64)
    if x.ndim != 2:
        raise PcaError("sample must be 2-D (rows are descriptors)")
    n, d = x.shape
    if p < 1:
        raise PcaError("p must be >= 1")
    if p > d:
        raise PcaError(f"p={p} exceeds descriptor dimension {d}")
    if n < p:
        raise PcaError(f"sample of {n} rows is too small for p={p}")
    if n > max_sample:
        rng = np.random.default_rng(seed)
        x = x[rng.choice(n, size=max_sample, replace=False)]
        n = max_sample
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / n
    eigval, eigvec = np.linalg.eigh(cov)
    order = np.argsort(eigval)[::-1][:p]
    variance = np.maximum(eigval[order], 0.0)
    basis = eigvec[:, order].T.copy()
    rank = int(np.count_nonzero(variance > max(variance[0], 0.0) * _RANK_EPS + _RANK_EPS))
    basis[rank:] = 0.0
    variance[rank:] = 0.0
    for row in basis[:rank]:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean=mean, basis=basis, explained_variance=variance, effective_rank=rank)


def pca_apply(model: PcaModel, x):
    """Project `x` (a vector or a matrix of rows) onto the model's basis."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape[-1] != model.input_dim:
        raise PcaError(f"input dimension {arr.shape[-1]} != model dimension {model.input_dim}")
    return (arr - model.mean) @ model.basis.T
