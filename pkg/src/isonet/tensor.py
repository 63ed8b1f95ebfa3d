"""Dense float64 containers for signals and kernels.

Signals are arrays shaped ``(N, C, H, W)`` and kernels are arrays shaped
``(M, C, k, k)`` with ``k`` odd. Both are plain :class:`numpy.ndarray`
objects; the helpers here validate shapes and implement the zero-extension
convention, under which any read outside the stored support returns 0.

Kernel spatial indices are *offsets* in ``[-k0, k0]``; offset ``(p, q)`` is
stored at array index ``(p + k0, q + k0)``.
"""

import numpy as np

DTYPE = np.float64


def as_signal(x):
    """Return ``x`` as a float64 ``(N, C, H, W)`` array, validating its shape."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 4:
        raise ValueError(f"signal must be 4-D (N, C, H, W), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ValueError(f"signal dimensions must be >= 1, got {x.shape}")
    return x


def as_kernel(A):
    """Return ``A`` as a float64 ``(M, C, k, k)`` array with odd ``k``."""
    A = np.asarray(A, dtype=DTYPE)
    if A.ndim != 4:
        raise ValueError(f"kernel must be 4-D (M, C, k, k), got shape {A.shape}")
    if A.shape[2] != A.shape[3] or A.shape[2] % 2 == 0:
        raise ValueError(f"kernel spatial size must be square and odd, got {A.shape[2:]}")
    if min(A.shape) < 1:
        raise ValueError(f"kernel dimensions must be >= 1, got {A.shape}")
    return A


def kernel_radius(A):
    """Half-width ``k0`` of a kernel with spatial size ``k = 2*k0 + 1``."""
    return (A.shape[-1] - 1) // 2


def inner_product(x, y):
    """Euclidean inner product of two equally shaped arrays."""
    x = np.asarray(x, dtype=DTYPE)
    y = np.asarray(y, dtype=DTYPE)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return float(np.dot(x.ravel(), y.ravel()))


def frobenius_norm(t):
    return float(np.sqrt(np.sum(np.square(np.asarray(t, dtype=DTYPE)))))


def sample_extended(t, coords, *, kernel=False):
    """Read ``t`` at ``coords`` under zero extension.

    ``coords`` indexes every axis of ``t``. The trailing two coordinates are
    spatial; for signals they are array indices in ``[0, H) x [0, W)``, and
    with ``kernel=True`` they are offsets in ``[-k0, k0]``. Leading
    (batch/channel) coordinates must be in range. Anything outside the
    spatial support reads as 0.
    """
    t = np.asarray(t)
    coords = tuple(int(c) for c in coords)
    if len(coords) != t.ndim:
        raise ValueError(f"expected {t.ndim} coordinates, got {len(coords)}")
    lead, (i, j) = coords[:-2], coords[-2:]
    if kernel:
        k0 = (t.shape[-1] - 1) // 2
        i, j = i + k0, j + k0
    H, W = t.shape[-2:]
    if not (0 <= i < H and 0 <= j < W):
        return 0.0
    return float(t[lead + (i, j)])
