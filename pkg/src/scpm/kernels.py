"""Hot numeric kernels: numba-compiled loops with pure-numpy fallbacks.

Every kernel exists twice: a loop implementation compiled with ``@njit``
and a vectorized numpy implementation. The module-level names
(``pool_pyramid``, ``gmm_log_resp``, ``fv_accumulate``, ``svm_cd_epoch``)
bind to the numba build unless numba is unavailable or the environment
variable ``SCPM_NO_NUMBA`` is set to a non-empty value other than ``0``.
Both builds of each kernel are importable under ``*_numpy`` / ``*_numba``
names so tests and benchmarks can compare them directly.

Kernels are sequential on purpose: summation order is fixed, so repeated
runs on identical inputs are bit-identical regardless of thread count.
"""

import os
import warnings

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

_FLAG = os.environ.get("SCPM_NO_NUMBA", "").strip()
USE_NUMBA = HAVE_NUMBA and _FLAG in ("", "0")

if not HAVE_NUMBA and _FLAG in ("", "0"):  # pragma: no cover
    warnings.warn(
        "numba is not installed; falling back to pure-numpy kernels "
        "(set SCPM_NO_NUMBA=1 to silence)",
        RuntimeWarning,
    )

# Posterior weights below this are dropped from Fisher-vector sums. A
# truncated term contributes at most ~gamma*sqrt(-2 ln gamma) per
# dimension, so 1e-12 keeps the total perturbation below 1e-9 even over
# thousands of parts.
FV_GAMMA_TRUNCATION = 1e-12


def pyramid_total(n: int) -> int:
    """Number of pooled windows over all scales of an n-by-n grid."""
    return sum((n - m + 1) ** 2 for m in range(1, n + 1))


# ---------------------------------------------------------------------------
# Multi-max pooling: every MxM window of an NxN grid, channelwise max,
# M = 1..N. Output rows ordered by (scale asc, window row, window col).
# Incremental scheme: an (M+1)-window max is the max of its four
# overlapping M-window corners; bitwise equal to the naive definition.
# ---------------------------------------------------------------------------


def pool_pyramid_numpy(values):
    n = values.shape[0]
    d = values.shape[2]
    out = np.empty((pyramid_total(n), d), dtype=values.dtype)
    cur = values
    pos = 0
    for m in range(1, n + 1):
        k = n - m + 1
        out[pos : pos + k * k] = cur.reshape(k * k, d)
        pos += k * k
        if m < n:
            cur = np.maximum(
                np.maximum(cur[:-1, :-1], cur[:-1, 1:]),
                np.maximum(cur[1:, :-1], cur[1:, 1:]),
            )
    return out


def _pool_pyramid_loops(values):
    n = values.shape[0]
    d = values.shape[2]
    total = 0
    for m in range(1, n + 1):
        total += (n - m + 1) * (n - m + 1)
    out = np.empty((total, d), dtype=values.dtype)
    cur = values.copy()
    pos = 0
    for m in range(1, n + 1):
        k = n - m + 1
        for i in range(k):
            for j in range(k):
                out[pos] = cur[i, j]
                pos += 1
        if m < n:
            nxt = np.empty((k - 1, k - 1, d), dtype=values.dtype)
            for i in range(k - 1):
                for j in range(k - 1):
                    for c in range(d):
                        v = cur[i, j, c]
                        if cur[i, j + 1, c] > v:
                            v = cur[i, j + 1, c]
                        if cur[i + 1, j, c] > v:
                            v = cur[i + 1, j, c]
                        if cur[i + 1, j + 1, c] > v:
                            v = cur[i + 1, j + 1, c]
                        nxt[i, j, c] = v
            cur = nxt
    return out


# ---------------------------------------------------------------------------
# Diagonal-Gaussian mixture responsibilities.
# Returns (resp, loglik): resp[t, k] is the posterior of component k for
# point t (rows sum to 1); loglik[t] is log p(x_t) under the mixture.
# ---------------------------------------------------------------------------


def gmm_log_resp_numpy(x, means, stds, log_weights, chunk=16384):
    n = x.shape[0]
    k = means.shape[0]
    inv_var = 1.0 / (stds * stds)
    # -0.5 * [ sum_d log(2 pi sigma^2) ] per component
    const = -0.5 * np.sum(np.log(2.0 * np.pi * stds * stds), axis=1)
    mu_iv = means * inv_var
    mu2_iv = np.sum(means * means * inv_var, axis=1)
    resp = np.empty((n, k), dtype=np.float64)
    loglik = np.empty(n, dtype=np.float64)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        xs = x[lo:hi]
        quad = xs * xs @ inv_var.T - 2.0 * (xs @ mu_iv.T) + mu2_iv
        a = log_weights + const - 0.5 * quad
        amax = np.max(a, axis=1, keepdims=True)
        ex = np.exp(a - amax)
        s = np.sum(ex, axis=1)
        resp[lo:hi] = ex / s[:, None]
        loglik[lo:hi] = amax[:, 0] + np.log(s)
    return resp, loglik


def _gmm_log_resp_loops(x, means, stds, log_weights):
    n = x.shape[0]
    k = means.shape[0]
    p = x.shape[1]
    inv_std = 1.0 / stds
    const = np.empty(k, dtype=np.float64)
    for c in range(k):
        s = 0.0
        for d in range(p):
            s += np.log(2.0 * np.pi * stds[c, d] * stds[c, d])
        const[c] = -0.5 * s
    resp = np.empty((n, k), dtype=np.float64)
    loglik = np.empty(n, dtype=np.float64)
    a = np.empty(k, dtype=np.float64)
    for t in range(n):
        amax = -np.inf
        for c in range(k):
            q = 0.0
            for d in range(p):
                z = (x[t, d] - means[c, d]) * inv_std[c, d]
                q += z * z
            a[c] = log_weights[c] + const[c] - 0.5 * q
            if a[c] > amax:
                amax = a[c]
        s = 0.0
        for c in range(k):
            a[c] = np.exp(a[c] - amax)
            s += a[c]
        for c in range(k):
            resp[t, c] = a[c] / s
        loglik[t] = amax + np.log(s)
    return resp, loglik


# ---------------------------------------------------------------------------
# Raw Fisher-vector block for one scale group.
# Per component k, mean part (1/sqrt(w_k)) sum_t r_tk (x_t - mu_k)/sigma_k
# followed by std part (1/sqrt(2 w_k)) sum_t r_tk [((x_t - mu_k)/sigma_k)^2 - 1],
# flattened component-major. Posteriors below `trunc` are dropped; the sum
# over t runs in row order, so the result is independent of thread count.
# ---------------------------------------------------------------------------


def fv_accumulate_numpy(x, resp, means, stds, weights, trunc=FV_GAMMA_TRUNCATION):
    k, p = means.shape
    r = np.where(resp >= trunc, resp, 0.0)
    s0 = r.sum(axis=0)
    s1 = r.T @ x
    s2 = r.T @ (x * x)
    var = stds * stds
    mean_part = (s1 - s0[:, None] * means) / stds
    std_part = (s2 - 2.0 * means * s1 + means * means * s0[:, None]) / var - s0[:, None]
    mean_part /= np.sqrt(weights)[:, None]
    std_part /= np.sqrt(2.0 * weights)[:, None]
    out = np.empty((k, 2 * p), dtype=np.float64)
    out[:, :p] = mean_part
    out[:, p:] = std_part
    return out.ravel()


def _fv_accumulate_loops(x, resp, means, stds, weights, trunc=FV_GAMMA_TRUNCATION):
    t_n = x.shape[0]
    k, p = means.shape
    inv_std = 1.0 / stds
    out = np.zeros((k, 2 * p), dtype=np.float64)
    for t in range(t_n):
        for c in range(k):
            r = resp[t, c]
            if r < trunc:
                continue
            # two contiguous passes so both halves vectorize
            for d in range(p):
                out[c, d] += r * ((x[t, d] - means[c, d]) * inv_std[c, d])
            for d in range(p):
                z = (x[t, d] - means[c, d]) * inv_std[c, d]
                out[c, p + d] += r * (z * z - 1.0)
    for c in range(k):
        wm = 1.0 / np.sqrt(weights[c])
        ws = 1.0 / np.sqrt(2.0 * weights[c])
        for d in range(p):
            out[c, d] *= wm
            out[c, p + d] *= ws
    return out.ravel()


# ---------------------------------------------------------------------------
# One epoch of dual coordinate descent for the L2-regularized L2-loss
# linear SVM (liblinear-style). Updates alpha and w in place, visiting
# samples in the given order. diag = 1/(2C).
# ---------------------------------------------------------------------------


def svm_cd_epoch_numpy(x, y, sqnorm, alpha, w, diag, order):
    for i in order:
        xi = x[i]
        g = y[i] * (w @ xi) - 1.0 + alpha[i] * diag
        if alpha[i] == 0.0 and g >= 0.0:
            continue
        a_new = alpha[i] - g / (sqnorm[i] + diag)
        if a_new < 0.0:
            a_new = 0.0
        delta = a_new - alpha[i]
        if delta != 0.0:
            w += (delta * y[i]) * xi
            alpha[i] = a_new


def _svm_cd_epoch_loops(x, y, sqnorm, alpha, w, diag, order):
    n_dim = x.shape[1]
    for oi in range(order.shape[0]):
        i = order[oi]
        dot = 0.0
        for d in range(n_dim):
            dot += w[d] * x[i, d]
        g = y[i] * dot - 1.0 + alpha[i] * diag
        if alpha[i] == 0.0 and g >= 0.0:
            continue
        a_new = alpha[i] - g / (sqnorm[i] + diag)
        if a_new < 0.0:
            a_new = 0.0
        delta = a_new - alpha[i]
        if delta != 0.0:
            step = delta * y[i]
            for d in range(n_dim):
                w[d] += step * x[i, d]
            alpha[i] = a_new


if HAVE_NUMBA:
    # fastmath lets LLVM vectorize the reduction chains; results stay
    # deterministic run to run (fixed compiled code), they just differ from
    # the numpy path within the usual reassociation tolerance
    pool_pyramid_numba = njit(cache=True)(_pool_pyramid_loops)
    gmm_log_resp_numba = njit(cache=True, fastmath=True)(_gmm_log_resp_loops)
    fv_accumulate_numba = njit(cache=True, fastmath=True)(_fv_accumulate_loops)
    svm_cd_epoch_numba = njit(cache=True, fastmath=True)(_svm_cd_epoch_loops)

if USE_NUMBA:
    pool_pyramid = pool_pyramid_numba
    gmm_log_resp = gmm_log_resp_numba
    fv_accumulate = fv_accumulate_numba
    svm_cd_epoch = svm_cd_epoch_numba
    BACKEND = "numba"
else:
    pool_pyramid = pool_pyramid_numpy
    gmm_log_resp = gmm_log_resp_numpy
    fv_accumulate = fv_accumulate_numpy
    svm_cd_epoch = svm_cd_epoch_numpy
    BACKEND = "numpy"


def warmup():
    """Trigger JIT compilation of all kernels on tiny inputs."""
    if BACKEND != "numba":
        return
    v = np.zeros((2, 2, 1), dtype=np.float32)
    pool_pyramid(v)
    x = np.zeros((2, 2), dtype=np.float64)
    means = np.zeros((1, 2), dtype=np.float64)
    stds = np.ones((1, 2), dtype=np.float64)
    logw = np.zeros(1, dtype=np.float64)
    resp, _ = gmm_log_resp(x, means, stds, logw)
    fv_accumulate(x, resp, means, stds, np.ones(1))
    svm_cd_epoch(
        x,
        np.ones(2, dtype=np.float64),
        np.zeros(2, dtype=np.float64),
        np.zeros(2, dtype=np.float64),
        np.zeros(2, dtype=np.float64),
        0.5,
        np.arange(2, dtype=np.int64),
    )
