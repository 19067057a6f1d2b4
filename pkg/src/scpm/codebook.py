"""Per-scale-group diagonal Gaussian mixture codebooks.

Scales are partitioned into contiguous groups (for a 13-scale grid: four
singletons, three pairs, and one final group of three, keeping part counts
per group roughly balanced). Each group gets its own mixture fit by EM
from a seeded k-means++ initialization.

Fitting canonicalizes the sample by lexicographic row sort before any
random draw, so the result depends on the sample as a set, not on the
order rows arrive in.
"""

from dataclasses import dataclass, field

import numpy as np

from .kernels import gmm_log_resp
from .modelio import load_model, save_model

DEFAULT_COMPONENTS = 128
DEFAULT_FIT_SAMPLE = 500_000
EM_MAX_ITER = 100
EM_REL_TOL = 1e-6
VARIANCE_FLOOR_SCALE = 1e-4
_EMPTY_WEIGHT = 1e-8
_ABS_VAR_FLOOR = 1e-12


class CodebookError(ValueError):
    pass


@dataclass(frozen=True)
class ScaleGrouping:
    """Partition of scales 1..N into m contiguous groups (0-indexed groups)."""

    groups: tuple  # tuple of tuples of scales, ascending

    def __post_init__(self):
        flat = [s for g in self.groups for s in g]
        n = len(flat)
        if flat != list(range(1, n + 1)):
            raise CodebookError(f"groups {self.groups} are not a contiguous partition of 1..{n}")
        object.__setattr__(self, "_lookup", {s: j for j, g in enumerate(self.groups) for s in g})

    @property
    def m(self) -> int:
        return len(self.groups)

    @property
    def n_scales(self) -> int:
        return sum(len(g) for g in self.groups)

    def group_of(self, scale: int) -> int:
        try:
            return self._lookup[scale]
        except KeyError:
            raise CodebookError(f"scale {scale} outside 1..{self.n_scales}") from None

    def group_of_scales(self, scales: np.ndarray) -> np.ndarray:
        table = np.empty(self.n_scales + 1, dtype=np.int64)
        for s, j in self._lookup.items():
            table[s] = j
        if scales.min() < 1 or scales.max() > self.n_scales:
            raise CodebookError("scale outside grouping range")
        return table[scales]

    def to_jsonable(self):
        return [list(g) for g in self.groups]

    @classmethod
    def from_jsonable(cls, obj):
        return cls(groups=tuple(tuple(int(s) for s in g) for g in obj))


def default_grouping(n: int = 13) -> ScaleGrouping:
    """Singletons for the first min(4, n) scales, then pairs; a trailing odd
    scale is absorbed into the last pair. For n=13 this yields
    {1},{2},{3},{4},{5,6},{7,8},{9,10},{11,12,13} (m=8)."""
    if n < 1:
        raise CodebookError("n must be >= 1")
    head = min(4, n)
    groups = [(s,) for s in range(1, head + 1)]
    rest = list(range(head + 1, n + 1))
    chunks = [tuple(rest[i : i + 2]) for i in range(0, len(rest), 2)]
    if len(chunks) >= 2 and len(chunks[-1]) == 1:
        chunks[-2:] = [chunks[-2] + chunks[-1]]
    groups.extend(chunks)
    return ScaleGrouping(groups=tuple(groups))


@dataclass
class GmmFitLog:
    """Per-iteration training log-likelihoods and reseed events."""

    log_likelihoods: list = field(default_factory=list)
    reseeds: list = field(default_factory=list)  # (iteration, component, sample index)
    n_iter: int = 0


@dataclass
class GmmModel:
    group: int
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, p)
    stds: np.ndarray  # (K, p)
    fit_log: GmmFitLog | None = None

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def validate(self):
        if abs(self.weights.sum() - 1.0) >= 1e-9:
            raise CodebookError("mixture weights must sum to 1")
        if np.any(self.weights <= 0):
            raise CodebookError("mixture weights must be positive")
        if np.any(self.stds <= 0):
            raise CodebookError("stds must be positive")

    def save(self, path):
        save_model(
            path,
            "gmm",
            {"group": self.group, "K": self.n_components, "p": self.dim},
            {"weights": self.weights, "means": self.means, "stds": self.stds},
        )

    @classmethod
    def load(cls, path):
        _, meta, arrays = load_model(path, expect_kind="gmm")
        weights = arrays["weights"]
        weights = weights / weights.sum()  # undo float32 quantization drift
        return cls(
            group=int(meta["group"]),
            weights=weights,
            means=arrays["means"],
            stds=arrays["stds"],
        )


def _kmeans_pp_centers(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    centers[0] = x[int(rng.integers(n))]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[i] = x[idx]
        np.minimum(d2, np.sum((x - centers[i]) ** 2, axis=1), out=d2)
    return centers


def _farthest_point(x, means, stds, used):
    """Sample index maximizing min-over-components Mahalanobis distance.

    Ties resolve to the lowest index; `used` indices are skipped so two
    components never reseed onto the same point in one pass.
    """
    d2 = np.full(x.shape[0], np.inf)
    for c in range(means.shape[0]):
        z = (x - means[c]) / stds[c]
        np.minimum(d2, np.sum(z * z, axis=1), out=d2)
    if used:
        d2[list(used)] = -np.inf
    return int(np.argmax(d2))


def gmm_fit(
    sample,
    k: int,
    seed: int = 0,
    group: int = 0,
    max_iter: int = EM_MAX_ITER,
    rel_tol: float = EM_REL_TOL,
    max_sample: int = DEFAULT_FIT_SAMPLE,
) -> GmmModel:
    """Fit a K-component diagonal GMM by EM.

    Stops when the relative log-likelihood improvement drops below
    `rel_tol` or after `max_iter` iterations. Variances are floored at
    VARIANCE_FLOOR_SCALE times the per-dimension sample variance each
    M-step. A component whose responsibility mass collapses is reseeded
    onto the farthest point (deterministically).
    """
    x = np.asarray(sample, dtype=np.float64)
    if x.ndim != 2:
        raise CodebookError("sample must be 2-D")
    if x.shape[0] < 10 * k:
        raise CodebookError(f"sample of {x.shape[0]} rows is too small for K={k} (need >= {10 * k})")
    x = x[np.lexsort(x.T[::-1])]  # canonical row order: set-level determinism
    rng = np.random.default_rng(seed)
    if x.shape[0] > max_sample:
        keep = np.sort(rng.choice(x.shape[0], size=max_sample, replace=False))
        x = x[keep]
    n = x.shape[0]
    global_var = x.var(axis=0)
    var_floor = np.maximum(VARIANCE_FLOOR_SCALE * global_var, _ABS_VAR_FLOOR)

    means = _kmeans_pp_centers(x, k, rng)
    stds = np.sqrt(np.maximum(global_var, var_floor))[None, :].repeat(k, axis=0)
    weights = np.full(k, 1.0 / k)

    log = GmmFitLog()
    prev_ll = None
    for it in range(max_iter):
        resp, loglik = gmm_log_resp(x, means, stds, np.log(weights))
        ll = float(loglik.sum())
        log.log_likelihoods.append(ll)
        log.n_iter = it + 1
        if prev_ll is not None and (ll - prev_ll) < rel_tol * abs(prev_ll):
            break
        prev_ll = ll

        mass = resp.sum(axis=0)
        empty = np.flatnonzero(mass < _EMPTY_WEIGHT)
        if empty.size:
            used = set()
            for c in empty:
                t = _farthest_point(x, means, stds, used)
                used.add(t)
                resp[t] = 0.0
                resp[t, c] = 1.0
                log.reseeds.append((it, int(c), t))
            mass = resp.sum(axis=0)
            prev_ll = None  # reseeding restarts the monotone segment
        weights = mass / n
        means = (resp.T @ x) / mass[:, None]
        ex2 = (resp.T @ (x * x)) / mass[:, None]
        var = np.maximum(ex2 - means * means, var_floor)
        stds = np.sqrt(var)

    model = GmmModel(group=group, weights=weights, means=means, stds=stds, fit_log=log)
    model.validate()
    return model


def responsibilities(model: GmmModel, x: np.ndarray) -> np.ndarray:
    """Posterior weight of each component for each row of `x`."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.shape[-1] != model.dim:
        raise CodebookError(f"dimension {arr.shape[-1]} != model dimension {model.dim}")
    resp, _ = gmm_log_resp(arr, model.means, model.stds, np.log(model.weights))
    return resp


def posteriors(model: GmmModel, x) -> np.ndarray:
    """Component posteriors for one vector; nonnegative, summing to 1."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise CodebookError("posteriors expects a single vector")
    return responsibilities(model, arr[None, :])[0]
