"""Orthogonality penalty for convolution kernels and isometry diagnostics."""

import numpy as np

from .convops import (
    Support,
    apply_adjoint,
    apply_operator,
    delta_kernel,
    kernel_self_correlation,
    self_correlation_grad,
    transpose_kernel,
)
from .tensor import as_kernel


def regularized_side(A):
    """The kernel whose self-correlation is driven to a delta.

    ``A`` itself when ``C > M`` (isometric adjoint), otherwise ``A``
    transposed (isometric operator).
    """
    M, C = A.shape[:2]
    return (A, False) if C > M else (transpose_kernel(A), True)


def _delta_like(R):
    n, s = R.shape[0], R.shape[-1]
    return delta_kernel(n, n, s)


def ortho_penalty(A, gamma):
    """Penalty ``gamma/2 * ||Conv(B, B) - delta||_F^2`` and its gradient.

    ``B`` is ``A`` when ``C > M`` and ``A`` transposed otherwise; the
    self-correlation uses "same" support, so it has the kernel's own
    ``k x k`` extent. Returns ``(loss, grad)`` with ``grad`` shaped like ``A``.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")
    A = as_kernel(A)
    B, transposed = regularized_side(A)
    R = kernel_self_correlation(B, Support.SAME)
    E = R - _delta_like(R)
    loss = 0.5 * gamma * float(np.sum(E * E))
    grad = gamma * self_correlation_grad(B, E, Support.SAME)
    if transposed:
        grad = transpose_kernel(grad)
    return loss, grad


def isometry_residual(A, support=Support.FULL):
    """Frobenius distance between the self-correlation and the delta kernel.

    Evaluated on the side chosen by :func:`regularized_side`. With the
    default full support this is zero exactly when the corresponding
    operator is an isometry on signals over the whole integer grid.
    """
    A = as_kernel(A)
    B, _ = regularized_side(A)
    R = kernel_self_correlation(B, support)
    return float(np.linalg.norm((R - _delta_like(R)).ravel()))


def check_isometry_condition(A, tol):
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    return isometry_residual(A) <= tol


def _normalize(v):
    return v / np.linalg.norm(v.ravel())


def extreme_singular_values(A, iterations=200, spatial=(16, 16), seed=0):
    """Estimate the largest and a lower bound on the smallest singular value.

    Both come from power iteration on ``A* A`` over signals of shape
    ``(1, C) + spatial``: first for ``sigma_max``, then on the shifted
    operator ``sigma_max^2 I - A* A`` whose top eigenvalue gives
    ``sigma_max^2 - sigma_min^2``. The smallest-value estimate is a
    heuristic: with too few iterations it sits above the true minimum.

    Returns ``(sigma_max, sigma_min_lower)``.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    A = as_kernel(A)
    C = A.shape[1]
    rng = np.random.default_rng(seed)
    shape = (1, C) + tuple(spatial)

    def gram(v):
        return apply_adjoint(A, apply_operator(A, v))

    v = _normalize(rng.standard_normal(shape))
    lam = 0.0
    for _ in range(iterations):
        w = gram(v)
        lam = float(np.sum(v * w))
        v = _normalize(w) if np.any(w) else v
    lam_max = max(float(np.sum(v * gram(v))), lam, 0.0)
    sigma_max = float(np.sqrt(lam_max))

    u = _normalize(rng.standard_normal(shape))
    mu = 0.0
    for _ in range(iterations):
        w = lam_max * u - gram(u)
        mu = float(np.sum(u * w))
        if not np.any(w):
            break
        u = _normalize(w)
    mu = float(np.sum(u * (lam_max * u - gram(u))))
    sigma_min = float(np.sqrt(max(lam_max - mu, 0.0)))
    return sigma_max, sigma_min
