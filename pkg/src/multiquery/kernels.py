"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba implementations are used when numba is importable and the
environment variable ``MULTIQUERY_DISABLE_NUMBA`` is unset or ``0``.
Both implementations are always importable under explicit names
(``*_nb`` / ``*_np``) so tests and benchmarks can compare them.
"""

import os

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _HAVE_NUMBA = False


def _flag_disabled(value):
    return value.strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = _HAVE_NUMBA and not _flag_disabled(os.environ.get("MULTIQUERY_DISABLE_NUMBA", "0"))


def _njit(fn):
    if not _HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# --------------------------------------------------------------------------
# Sobol sequence (Gray-code ordering), integer representation
# --------------------------------------------------------------------------


def _sobol_ints_py(directions, start, n):
    d, bits = directions.shape
    out = np.zeros((n, d), dtype=np.uint64)
    if n == 0:
        return out
    # direct construction of the first requested point from its Gray code
    gray = start ^ (start >> 1)
    state = np.zeros(d, dtype=np.uint64)
    for b in range(bits):
        if (gray >> b) & 1:
            for j in range(d):
                state[j] ^= directions[j, b]
    for j in range(d):
        out[0, j] = state[j]
    for i in range(1, n):
        idx = start + i - 1
        # position of the lowest zero bit of idx
        c = 0
        while (idx >> c) & 1:
            c += 1
        for j in range(d):
            state[j] ^= directions[j, c]
            out[i, j] = state[j]
    return out


sobol_ints_nb = _njit(_sobol_ints_py)


def sobol_ints_np(directions, start, n):
    """Vectorized Sobol integers: XOR of direction numbers over Gray-code bits."""
    d, bits = directions.shape
    idx = np.arange(start, start + n, dtype=np.uint64)
    gray = idx ^ (idx >> np.uint64(1))
    out = np.zeros((n, d), dtype=np.uint64)
    for b in range(bits):
        mask = ((gray >> np.uint64(b)) & np.uint64(1)).astype(bool)
        if mask.any():
            out[mask] ^= directions[:, b]
    return out


# --------------------------------------------------------------------------
# Squared-exponential (ARD) kernel
# --------------------------------------------------------------------------


def _se_kernel_py(x1, x2, lengthscales, signal_variance):
    n1, d = x1.shape
    n2 = x2.shape[0]
    out = np.empty((n1, n2))
    inv = 1.0 / lengthscales
    for i in range(n1):
        for k in range(n2):
            s = 0.0
            for j in range(d):
                t = (x1[i, j] - x2[k, j]) * inv[j]
                s += t * t
            out[i, k] = signal_variance * np.exp(-0.5 * s)
    return out


se_kernel_nb = _njit(_se_kernel_py)


def se_kernel_np(x1, x2, lengthscales, signal_variance):
    a = x1 / lengthscales
    b = x2 / lengthscales
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    np.maximum(sq, 0.0, out=sq)
    return signal_variance * np.exp(-0.5 * sq)


def _se_lengthscale_traces_py(x, kmat, wmat, lengthscales):
    # returns 0.5 * sum_{ik} W_ik * K_ik * (x_ij - x_kj)^2 / l_j^2 for every j
    n, d = x.shape
    out = np.zeros(d)
    inv2 = 1.0 / (lengthscales * lengthscales)
    for i in range(n):
        for k in range(i + 1, n):
            wk = wmat[i, k] * kmat[i, k]
            for j in range(d):
                t = x[i, j] - x[k, j]
                out[j] += wk * t * t
    # symmetric off-diagonal pairs counted once above; diagonal terms vanish
    for j in range(d):
        out[j] *= inv2[j]
    return out


se_lengthscale_traces_nb = _njit(_se_lengthscale_traces_py)


def se_lengthscale_traces_np(x, kmat, wmat, lengthscales):
    wk = wmat * kmat
    out = np.empty(x.shape[1])
    for j in range(x.shape[1]):
        col = x[:, j]
        diff2 = (col[:, None] - col[None, :]) ** 2
        out[j] = 0.5 * np.sum(wk * diff2) / lengthscales[j] ** 2
    return out


# --------------------------------------------------------------------------
# Systematic resampling
# --------------------------------------------------------------------------


def _systematic_resample_py(weights, u):
    n = weights.shape[0]
    idx = np.empty(n, dtype=np.int64)
    cumulative = weights[0]
    j = 0
    for i in range(n):
        pos = (i + u) / n
        while pos > cumulative and j < n - 1:
            j += 1
            cumulative += weights[j]
        idx[i] = j
    return idx


systematic_resample_nb = _njit(_systematic_resample_py)


def systematic_resample_np(weights, u):
    n = weights.shape[0]
    positions = (np.arange(n) + u) / n
    cumulative = np.cumsum(weights)
    idx = np.searchsorted(cumulative, positions, side="left")
    return np.minimum(idx, n - 1).astype(np.int64)


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------


def sobol_ints(directions, start, n):
    """Integer Sobol points ``start .. start+n-1`` for direction matrix ``(d, bits)``."""
    directions = np.ascontiguousarray(directions, dtype=np.uint64)
    if USE_NUMBA:
        return sobol_ints_nb(directions, np.int64(start), np.int64(n))
    return sobol_ints_np(directions, int(start), int(n))


def se_kernel(x1, x2, lengthscales, signal_variance):
    x1 = np.ascontiguousarray(x1, dtype=float)
    x2 = np.ascontiguousarray(x2, dtype=float)
    lengthscales = np.ascontiguousarray(lengthscales, dtype=float)
    if USE_NUMBA:
        return se_kernel_nb(x1, x2, lengthscales, float(signal_variance))
    return se_kernel_np(x1, x2, lengthscales, float(signal_variance))


def se_lengthscale_traces(x, kmat, wmat, lengthscales):
    x = np.ascontiguousarray(x, dtype=float)
    lengthscales = np.ascontiguousarray(lengthscales, dtype=float)
    if USE_NUMBA:
        return se_lengthscale_traces_nb(
            x, np.ascontiguousarray(kmat), np.ascontiguousarray(wmat), lengthscales
        )
    return se_lengthscale_traces_np(x, kmat, wmat, lengthscales)


def systematic_resample(weights, u):
    weights = np.ascontiguousarray(weights, dtype=float)
    if USE_NUMBA:
        return systematic_resample_nb(weights, float(u))
    return systematic_resample_np(weights, float(u))
