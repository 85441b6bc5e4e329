"""Hot inner loops, each in a numba flavour and a numpy flavour.

Both flavours accumulate in the same order. The purely arithmetic kernels
(resampling, distances, Gaussian log densities) therefore agree bit for bit;
the ELU pair calls ``exp``/``expm1``, whose libm and numpy implementations may
differ in the last ulp. ``BACKEND`` names the flavour bound to the public
names below.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

BACKEND = "numba" if USE_NUMBA else "numpy"


# -- polyphase FIR resampling ------------------------------------------------

@njit
def _polyphase_numba(x, table, up, down, n_out):
    taps = table.shape[1]
    lead = taps // 2 - 1
    n_in = x.shape[0]
    y = np.zeros(n_out)
    for n in range(n_out):
        pos = n * down
        k = pos // up
        p = pos - k * up
        start = k - lead
        acc = 0.0
        for j in range(taps):
            i = start + j
            if 0 <= i < n_in:
                acc += table[p, j] * x[i]
        y[n] = acc
    return y


def _polyphase_numpy(x, table, up, down, n_out, chunk=1 << 16):
    taps = table.shape[1]
    lead = taps // 2 - 1
    padded = np.concatenate([np.zeros(lead), x, np.zeros(taps)])
    y = np.zeros(n_out)
    for lo in range(0, n_out, chunk):
        n = np.arange(lo, min(lo + chunk, n_out), dtype=np.int64)
        pos = n * down
        k = pos // up
        coeffs = table[pos - k * up]
        # source index k - lead + j lives at k + j in ``padded``
        acc = np.zeros(n.shape[0])
        for j in range(taps):
            acc = acc + coeffs[:, j] * padded[k + j]
        y[lo:lo + n.shape[0]] = acc
    return y


# -- squared Euclidean distance scan ------------------------------------------

@njit
def _sq_distances_numba(query, matrix):
    n, d = matrix.shape
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(d):
            diff = query[j] - matrix[i, j]
            acc += diff * diff
        out[i] = acc
    return out


def _sq_distances_numpy(query, matrix):
    acc = np.zeros(matrix.shape[0])
    for j in range(matrix.shape[1]):
        diff = query[j] - matrix[:, j]
        acc = acc + diff * diff
    return acc


# -- diagonal-Gaussian log densities ------------------------------------------

@njit
def _diag_logpdf_numba(X, means, variances):
    n, d = X.shape
    k = means.shape[0]
    log2pi = np.log(2.0 * np.pi)
    out = np.empty((n, k))
    for c in range(k):
        logdet = 0.0
        for j in range(d):
            logdet += np.log(variances[c, j])
        for i in range(n):
            acc = 0.0
            for j in range(d):
                diff = X[i, j] - means[c, j]
                acc += diff * diff / variances[c, j]
            out[i, c] = -0.5 * (d * log2pi + logdet + acc)
    return out


def _diag_logpdf_numpy(X, means, variances):
    n, d = X.shape
    k = means.shape[0]
    log2pi = np.log(2.0 * np.pi)
    out = np.empty((n, k))
    for c in range(k):
        logvar = np.log(variances[c])
        logdet = 0.0
        for j in range(d):
            logdet += logvar[j]
        acc = np.zeros(n)
        for j in range(d):
            diff = X[:, j] - means[c, j]
            acc = acc + diff * diff / variances[c, j]
        out[:, c] = -0.5 * (d * log2pi + logdet + acc)
    return out


# -- exponential-linear unit ---------------------------------------------------

@njit
def _elu_numba(z):
    flat = z.ravel()
    out = np.empty_like(flat)
    for i in range(flat.shape[0]):
        v = flat[i]
        out[i] = v if v > 0.0 else np.expm1(v)
    return out.reshape(z.shape)


def _elu_numpy(z):
    return np.where(z > 0.0, z, np.expm1(np.minimum(z, 0.0)))


@njit
def _elu_grad_numba(z, upstream):
    fz = z.ravel()
    fu = upstream.ravel()
    out = np.empty_like(fz)
    for i in range(fz.shape[0]):
        v = fz[i]
        out[i] = fu[i] if v > 0.0 else fu[i] * np.exp(v)
    return out.reshape(z.shape)


def _elu_grad_numpy(z, upstream):
    return np.where(z > 0.0, upstream, upstream * np.exp(np.minimum(z, 0.0)))


NUMBA_KERNELS = {
    "polyphase": _polyphase_numba,
    "sq_distances": _sq_distances_numba,
    "diag_logpdf": _diag_logpdf_numba,
    "elu": _elu_numba,
    "elu_grad": _elu_grad_numba,
}
NUMPY_KERNELS = {
    "polyphase": _polyphase_numpy,
    "sq_distances": _sq_distances_numpy,
    "diag_logpdf": _diag_logpdf_numpy,
    "elu": _elu_numpy,
    "elu_grad": _elu_grad_numpy,
}
_active = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS


def polyphase(x, table, up, down, n_out):
    """Apply a polyphase filter ``table`` (phases x taps) at rate ``up/down``."""
    return _active["polyphase"](np.ascontiguousarray(x, dtype=np.float64),
                                np.ascontiguousarray(table, dtype=np.float64),
                                int(up), int(down), int(n_out))


def sq_distances(query, matrix):
    """Squared Euclidean distance from ``query`` to every row of ``matrix``."""
    return _active["sq_distances"](np.ascontiguousarray(query, dtype=np.float64),
                                   np.ascontiguousarray(matrix, dtype=np.float64))


def diag_logpdf(X, means, variances):
    """Log density of each row of ``X`` under each diagonal Gaussian (n x k)."""
    return _active["diag_logpdf"](np.ascontiguousarray(X, dtype=np.float64),
                                  np.ascontiguousarray(means, dtype=np.float64),
                                  np.ascontiguousarray(variances, dtype=np.float64))


def elu(z):
    return _active["elu"](np.ascontiguousarray(z, dtype=np.float64))


def elu_grad(z, upstream):
    """Upstream gradient times the ELU derivative at pre-activation ``z``."""
    return _active["elu_grad"](np.ascontiguousarray(z, dtype=np.float64),
                               np.ascontiguousarray(upstream, dtype=np.float64))
