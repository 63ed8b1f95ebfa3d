"""Multi-channel convolution, correlation and their adjoints.

Conventions
-----------
A 2D map ``xi`` of shape ``(H, W)`` is a function on ``[0, H) x [0, W)``
extended by zeros. A ``k x k`` kernel ``alpha`` (``k = 2*k0 + 1``) is a
function on offsets ``[-k0, k0]^2``, also extended by zeros.

* correlation:  ``(alpha ⋆ xi)[i, j] = sum_{p,q} xi[i + p, j + q] * alpha[p, q]``
* convolution:  ``(alpha * xi)[i, j] = sum_{p,q} xi[i - p, j - q] * alpha[p, q]``

``"same"`` support evaluates the result on the index range of ``xi``.
``"full"`` support evaluates it on every index where the two supports
overlap; the output then starts at coordinate ``-k0`` relative to ``xi``'s
own origin, so for two ``k x k`` kernels it is a ``(2k - 1) x (2k - 1)``
map centred on offset ``(0, 0)``.

The operator of a kernel ``A`` of shape ``(M, C, k, k)`` maps a ``C``-channel
signal to an ``M``-channel one, ``(A x)_m = sum_c alpha_mc ⋆ xi_c``; its
adjoint is ``(A* y)_c = sum_m alpha_mc * eta_m``. Both use "same" support.
"""

from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DTYPE, as_kernel, as_signal


class Support(str, Enum):
    SAME = "same"
    FULL = "full"


def _support(support):
    return Support(support.value if isinstance(support, Support) else str(support).lower())


def _check_odd(alpha):
    if alpha.ndim != 2 or alpha.shape[0] != alpha.shape[1] or alpha.shape[0] % 2 == 0:
        raise ValueError(f"kernel slice must be square with odd size, got {alpha.shape}")


def correlate2d(alpha, xi, support=Support.SAME):
    """Correlation ``alpha ⋆ xi`` of one 2D map with one odd-sized kernel.

    Boundaries are handled by clipping index ranges, never by padding.
    """
    alpha = np.asarray(alpha, dtype=DTYPE)
    xi = np.asarray(xi, dtype=DTYPE)
    _check_odd(alpha)
    k0 = (alpha.shape[0] - 1) // 2
    H, W = xi.shape
    # output coordinate i lives at array index i - lo
    lo = 0 if _support(support) is Support.SAME else -k0
    out_h = H - 2 * lo
    out_w = W - 2 * lo
    out = np.zeros((out_h, out_w), dtype=DTYPE)
    for p in range(-k0, k0 + 1):
        # rows i with 0 <= i + p < H and lo <= i < lo + out_h
        i0, i1 = max(lo, -p), min(lo + out_h, H - p)
        if i0 >= i1:
            continue
        for q in range(-k0, k0 + 1):
            j0, j1 = max(lo, -q), min(lo + out_w, W - q)
            if j0 >= j1:
                continue
            w = alpha[p + k0, q + k0]
            if w == 0.0:
                continue
            out[i0 - lo:i1 - lo, j0 - lo:j1 - lo] += w * xi[i0 + p:i1 + p, j0 + q:j1 + q]
    return out


def convolve2d(alpha, xi, support=Support.SAME):
    """Convolution ``alpha * xi``; the same as correlating with ``alpha`` flipped."""
    alpha = np.asarray(alpha, dtype=DTYPE)
    return correlate2d(alpha[::-1, ::-1], xi, support)


def full_convolve(a, b):
    """Linear convolution of two arbitrary 2D maps on their full support.

    Unlike :func:`convolve2d` neither argument has to be odd-sized, which is
    what the commutativity/associativity identities need.
    """
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    out = np.zeros((a.shape[0] + b.shape[0] - 1, a.shape[1] + b.shape[1] - 1), dtype=DTYPE)
    for p in range(a.shape[0]):
        for q in range(a.shape[1]):
            out[p:p + b.shape[0], q:q + b.shape[1]] += a[p, q] * b
    return out


def transpose_kernel(A):
    """Swap the output and input channel axes: ``(M, C, k, k) -> (C, M, k, k)``."""
    return np.ascontiguousarray(np.swapaxes(as_kernel(A), 0, 1))


def delta_kernel(M, C, k):
    """Kernel with a 1 at offset ``(0, 0)`` on channel pairs ``(i, i)``, ``i < min(M, C)``."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {k}")
    A = np.zeros((M, C, k, k), dtype=DTYPE)
    k0 = (k - 1) // 2
    n = min(M, C)
    A[np.arange(n), np.arange(n), k0, k0] = 1.0
    return A


def _check_channels(A, x, axis_name, expected):
    if x.shape[1] != expected:
        raise ValueError(
            f"signal has {x.shape[1]} channels but kernel {A.shape} expects {expected} ({axis_name})"
        )


def im2col(x, k):
    """Patch matrix of a signal for a stride-1, zero-padded ``k x k`` window.

    Returns an array of shape ``(C*k*k, N*H*W)``: row ``(c, p, q)`` and
    column ``(n, i, j)`` hold ``x[n, c, i + p - k0, j + q - k0]``, zero
    outside the map. Channel-first keeps every slice copy contiguous in
    ``(i, j)``, which is what makes this path fast.
    """
    N, C, H, W = x.shape
    k0 = (k - 1) // 2
    xp = np.zeros((C, N, H + 2 * k0, W + 2 * k0), dtype=DTYPE)
    xp[:, :, k0:k0 + H, k0:k0 + W] = x.transpose(1, 0, 2, 3)
    cols = np.empty((C, k, k, N, H, W), dtype=DTYPE)
    for p in range(k):
        for q in range(k):
            cols[:, p, q] = xp[:, :, p:p + H, q:q + W]
    return cols.reshape(C * k * k, N * H * W)


# Batch chunk for the patch-matrix path; keeps each patch block cache-sized.
CHUNK = 8


def _correlate_batch(A, x):
    M, C, k, _ = A.shape
    N, _, H, W = x.shape
    if k == 1:
        out = np.tensordot(A[:, :, 0, 0], x, axes=([1], [1]))  # M, N, H, W
        return out.transpose(1, 0, 2, 3)
    Am = A.reshape(M, -1)
    out = np.empty((M, N, H, W), dtype=DTYPE)
    for s in range(0, N, CHUNK):
        out[:, s:s + CHUNK] = (Am @ im2col(x[s:s + CHUNK], k)).reshape(M, -1, H, W)
    return out.transpose(1, 0, 2, 3)


def apply_operator(A, x):
    """Apply the convolution operator of ``A`` to a batch of signals.

    ``A`` is ``(M, C, k, k)``, ``x`` is ``(N, C, H, W)``; the result is
    ``(N, M, H, W)`` with channel ``m`` equal to ``sum_c alpha_mc ⋆ xi_c``.
    """
    A = as_kernel(A)
    x = as_signal(x)
    _check_channels(A, x, "C", A.shape[1])
    return _correlate_batch(A, x)


def adjoint_kernel(A):
    """Kernel whose correlation realises the adjoint operator of ``A``."""
    return np.ascontiguousarray(np.swapaxes(A, 0, 1)[:, :, ::-1, ::-1])


def apply_adjoint(A, y):
    """Apply the adjoint operator: channel ``c`` of the result is ``sum_m alpha_mc * eta_m``."""
    A = as_kernel(A)
    y = as_signal(y)
    _check_channels(A, y, "M", A.shape[0])
    return _correlate_batch(adjoint_kernel(A), y)


def apply_operator_naive(A, x):
    """Reference operator built from :func:`correlate2d` by explicit loops.

    Deliberately slow; used to check the patch-matrix path.
    """
    A = as_kernel(A)
    x = as_signal(x)
    _check_channels(A, x, "C", A.shape[1])
    M, C = A.shape[:2]
    N, _, H, W = x.shape
    out = np.zeros((N, M, H, W), dtype=DTYPE)
    for n in range(N):
        for m in range(M):
            for c in range(C):
                out[n, m] += correlate2d(A[m, c], x[n, c])
    return out


def apply_adjoint_naive(A, y):
    A = as_kernel(A)
    y = as_signal(y)
    _check_channels(A, y, "M", A.shape[0])
    M, C = A.shape[:2]
    N, _, H, W = y.shape
    out = np.zeros((N, C, H, W), dtype=DTYPE)
    for n in range(N):
        for c in range(C):
            for m in range(M):
                out[n, c] += convolve2d(A[m, c], y[n, m])
    return out


def _shifted_windows(A, support):
    """Views ``W[n, c, i, j, p, q] = A[n, c, p + i, q + j]`` over all output offsets.

    Offsets ``(i, j)`` span ``[-k0, k0]`` for "same" and ``[-2k0, 2k0]``
    for "full"; the window axes ``(p, q)`` span the kernel support.
    """
    k = A.shape[-1]
    k0 = (k - 1) // 2
    r = k0 if _support(support) is Support.SAME else 2 * k0
    # pad so that p + i stays addressable for every |i| <= r
    Ap = np.pad(A, ((0, 0), (0, 0), (r, r), (r, r)))
    return sliding_window_view(Ap, (k, k), axis=(2, 3))


def kernel_self_correlation(A, support=Support.SAME):
    """Correlate a kernel with itself, treating its rows as input signals.

    Returns ``R`` of shape ``(M, M, s, s)`` with
    ``R[n, m] = sum_c alpha_mc ⋆ alpha_nc`` where ``s = k`` for "same"
    and ``s = 2k - 1`` for "full". The "same" variant equals running the
    kernel's own convolution layer on the kernel itself.
    """
    A = as_kernel(A)
    W = _shifted_windows(A, support)
    return np.einsum("ncijpq,mcpq->nmij", W, A, optimize=True)


def self_correlation_grad(A, E, support=Support.SAME):
    """Vector-Jacobian product of :func:`kernel_self_correlation`.

    Given an upstream ``E`` shaped like the self-correlation, returns
    ``sum E * dR/dA``. Because ``R[n, m, i, j] = R[m, n, -i, -j]``, the two
    bilinear terms coincide when ``E`` has the same symmetry; the general
    form is used here so the function is correct for any ``E``.
    """
    A = as_kernel(A)
    W = _shifted_windows(A, support)
    # d/dA[a] through the signal slot:  sum_{m,i,j} E[a, m, i, j] A[m, c, u - i, v - j]
    # d/dA[a] through the kernel slot:  sum_{n,i,j} E[n, a, i, j] A[n, c, u + i, v + j]
    through_kernel = np.einsum("naij,ncijuv->acuv", E, W, optimize=True)
    through_signal = np.einsum("amij,mcijuv->acuv", E[:, :, ::-1, ::-1], W, optimize=True)
    return through_signal + through_kernel


def conv_input_gradient(A, upstream):
    """Gradient with respect to the input of ``apply_operator(A, .)``."""
    return apply_adjoint(A, upstream)


def conv_weight_gradient(x, upstream, k):
    """Gradient with respect to the kernel of ``apply_operator(., x)``.

    Entry ``(m, c, p, q)`` is ``sum_{n,i,j} x[n, c, i + p, j + q] * upstream[n, m, i, j]``.
    """
    x = as_signal(x)
    upstream = as_signal(upstream)
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {k}")
    if upstream.shape[0] != x.shape[0] or upstream.shape[2:] != x.shape[2:]:
        raise ValueError(f"upstream shape {upstream.shape} does not match input {x.shape}")
    M = upstream.shape[1]
    _, gA = conv_backward(np.zeros((M, x.shape[1], k, k)), x, upstream, input_grad=False)
    return gA


def conv_backward(A, x, upstream, input_grad=True):
    """Input and kernel gradients of ``apply_operator(A, x)`` in one pass.

    Returns ``(grad_x, grad_A)``; ``grad_x`` is ``None`` when
    ``input_grad`` is false.
    """
    M, C, k, _ = A.shape
    N, _, H, W = x.shape
    if upstream.shape != (N, M, H, W):
        raise ValueError(f"upstream shape {upstream.shape} != expected {(N, M, H, W)}")
    if k == 1:
        gA = np.tensordot(upstream, x, axes=([0, 2, 3], [0, 2, 3])).reshape(M, C, 1, 1)
        if not input_grad:
            return None, gA
        gx = np.tensordot(A[:, :, 0, 0], upstream, axes=([0], [1])).transpose(1, 0, 2, 3)
        return gx, gA
    Bm = adjoint_kernel(A).reshape(C, -1)
    gA = np.zeros((M, C * k * k), dtype=DTYPE)
    gx = np.empty((C, N, H, W), dtype=DTYPE) if input_grad else None
    for s in range(0, N, CHUNK):
        u = upstream[s:s + CHUNK]
        gA += u.transpose(1, 0, 2, 3).reshape(M, -1) @ im2col(x[s:s + CHUNK], k).T
        if input_grad:
            gx[:, s:s + CHUNK] = (Bm @ im2col(u, k)).reshape(C, -1, H, W)
    return (gx.transpose(1, 0, 2, 3) if input_grad else None), gA.reshape(M, C, k, k)
