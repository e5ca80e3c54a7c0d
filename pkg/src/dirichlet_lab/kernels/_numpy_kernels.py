"""Pure numpy implementations of the hot loops.

All functions take 2-D float arrays of shape ``(n_paths, n_steps + 1)`` and
return *unscaled* Riemann sums; callers multiply by ``dt / eps``.
"""

import numpy as np


def ucp_terminal(X, Y, m, k):
    """sum_{j<k} (X[min(j+m,k)] - X[j]) * (Y[min(j+m,k)] - Y[j])"""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if k <= 0:
        return np.zeros(X.shape[0])
    j = np.arange(k)
    ahead = np.minimum(j + m, k)
    dx = X[:, ahead] - X[:, :k]
    dy = Y[:, ahead] - Y[:, :k]
    return np.einsum("ij,ij->i", dx, dy)


def ceps_terminal(X, Y, m, k):
    """Like :func:`ucp_terminal` but reading past ``k`` (constant past the last index)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n = X.shape[1] - 1
    if k <= 0:
        return np.zeros(X.shape[0])
    j = np.arange(k)
    ahead = np.minimum(j + m, n)
    dx = X[:, ahead] - X[:, :k]
    dy = Y[:, ahead] - Y[:, :k]
    return np.einsum("ij,ij->i", dx, dy)


def ucp_path(X, Y, m):
    """ucp_terminal evaluated at every k = 0..n, using windowed cumulative sums.

    For k >= m the sum splits into full windows j <= k-m (whose increments do
    not depend on k) and the clamped tail k-m < j < k, where
    (X_k - X_j)(Y_k - Y_j) expands into products of running window sums.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    P, N = X.shape
    n = N - 1
    out = np.zeros((P, N))
    if n == 0:
        return out
    full = np.zeros((P, N))
    if n >= m:
        prod = (X[:, m:] - X[:, :-m]) * (Y[:, m:] - Y[:, :-m])  # index j = 0..n-m
        full[:, m:] = np.cumsum(prod, axis=1)  # full[k] = sum_{j<=k-m}
    pad = np.zeros((P, 1))
    cx = np.concatenate([pad, np.cumsum(X, axis=1)], axis=1)
    cy = np.concatenate([pad, np.cumsum(Y, axis=1)], axis=1)
    cxy = np.concatenate([pad, np.cumsum(X * Y, axis=1)], axis=1)
    k = np.arange(N)
    lo = np.maximum(k - m + 1, 0)  # tail indices lo..k-1
    cnt = k - lo
    sx = cx[:, k] - cx[:, lo]
    sy = cy[:, k] - cy[:, lo]
    sxy = cxy[:, k] - cxy[:, lo]
    tail = cnt * X * Y - X * sy - Y * sx + sxy
    out[:] = full + tail
    out[:, 0] = 0.0
    return out


def causal_convolution(B, dW):
    """X[j] = sum_{i<j} B[j-i] * dW[i] for each row; output has n+1 columns.

    ``B`` has shape (P, n+1) with B[:, 0] the value at lag 0; ``dW`` has
    shape (P, n).
    """
    B = np.asarray(B, dtype=float)
    dW = np.asarray(dW, dtype=float)
    P, n = dW.shape
    out = np.zeros((P, n + 1))
    for p in range(P):
        full = np.convolve(B[p, : n + 1], dW[p])
        # drop the lag-0 term i == j
        out[p, 1:n] = full[1:n] - B[p, 0] * dW[p, 1:n]
        out[p, n] = full[n]
    return out
