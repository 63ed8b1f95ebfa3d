"""Slow reference implementations written straight from the definitions.

Nothing here imports the package, so these can be trusted to disagree
with it when it is wrong.
"""

import numpy as np


def correlate_ref(A, x):
    """out[n, m, i, j] = sum_{c, p, q} A[m, c, p + k0, q + k0] * x[n, c, i + p, j + q], zero outside."""
    M, C, k, _ = A.shape
    N, _, H, W = x.shape
    k0 = k // 2
    out = np.zeros((N, M, H, W))
    for n in range(N):
        for m in range(M):
            for i in range(H):
                for j in range(W):
                    s = 0.0
                    for c in range(C):
                        for p in range(-k0, k0 + 1):
                            for q in range(-k0, k0 + 1):
                                if 0 <= i + p < H and 0 <= j + q < W:
                                    s += A[m, c, p + k0, q + k0] * x[n, c, i + p, j + q]
                    out[n, m, i, j] = s
    return out


def adjoint_ref(A, y):
    """Adjoint of :func:`correlate_ref` by brute-force transposition of its matrix."""
    M, C, k, _ = A.shape
    N, _, H, W = y.shape
    out = np.zeros((N, C, H, W))
    k0 = k // 2
    for n in range(N):
        for m in range(M):
            for i in range(H):
                for j in range(W):
                    for c in range(C):
                        for p in range(-k0, k0 + 1):
                            for q in range(-k0, k0 + 1):
                                if 0 <= i + p < H and 0 <= j + q < W:
                                    out[n, c, i + p, j + q] += A[m, c, p + k0, q + k0] * y[n, m, i, j]
    return out


def self_correlation_ref(A, full=False):
    """R[n, m, i, j] = sum_{c, p, q} A[n, c, i + p, j + q] A[m, c, p, q] over offsets |i|, |j| <= r."""
    M, C, k, _ = A.shape
    k0 = k // 2
    r = 2 * k0 if full else k0
    R = np.zeros((M, M, 2 * r + 1, 2 * r + 1))
    for n in range(M):
        for m in range(M):
            for i in range(-r, r + 1):
                for j in range(-r, r + 1):
                    s = 0.0
                    for c in range(C):
                        for p in range(-k0, k0 + 1):
                            for q in range(-k0, k0 + 1):
                                if abs(i + p) <= k0 and abs(j + q) <= k0:
                                    s += A[n, c, i + p + k0, j + q + k0] * A[m, c, p + k0, q + k0]
                    R[n, m, i + r, j + r] = s
    return R


def numeric_grad(f, theta, h=1e-6):
    """Central-difference gradient of scalar ``f()`` with respect to array ``theta`` (in place)."""
    g = np.zeros_like(theta)
    for idx in np.ndindex(theta.shape):
        old = theta[idx]
        theta[idx] = old + h
        fp = f()
        theta[idx] = old - h
        fm = f()
        theta[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g
