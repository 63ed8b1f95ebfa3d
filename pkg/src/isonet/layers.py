"""Pointwise and structural layers with explicit forward/backward rules.

Per-channel parameters (SReLU shifts ``b``, residual scales ``s``) are 1-D
arrays of length ``C`` broadcast over batch and spatial axes.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import DTYPE


def _per_channel(v, C, name):
    v = np.asarray(v, dtype=DTYPE)
    if v.ndim == 0:
        v = np.full(C, float(v))
    if v.shape != (C,):
        raise ValueError(f"{name} must have one value per channel ({C}), got shape {v.shape}")
    return v


def _channel_view(v):
    return v.reshape(1, -1, 1, 1)


def srelu_forward(y, b):
    """Shifted ReLU ``max(y, b_c)``; ties resolve to ``y``."""
    y = np.asarray(y, dtype=DTYPE)
    b = _per_channel(b, y.shape[1], "b")
    return np.maximum(y, _channel_view(b))


def srelu_backward(y, b, upstream):
    """Return ``(grad_y, grad_b)``.

    ``grad_y`` passes ``upstream`` where ``y >= b``; ``grad_b`` collects the
    complementary entries ``y < b`` summed per channel.
    """
    y = np.asarray(y, dtype=DTYPE)
    b = _per_channel(b, y.shape[1], "b")
    upstream = np.asarray(upstream, dtype=DTYPE)
    if upstream.shape != y.shape:
        raise ValueError(f"upstream shape {upstream.shape} != input shape {y.shape}")
    active = y >= _channel_view(b)
    grad_y = np.where(active, upstream, 0.0)
    grad_b = (upstream - grad_y).sum(axis=(0, 2, 3))
    return grad_y, grad_b


def residual_combine_forward(x, r, s):
    """``x + s_c * r``. ``s`` may be per channel or a single scalar."""
    x = np.asarray(x, dtype=DTYPE)
    r = np.asarray(r, dtype=DTYPE)
    if x.shape != r.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {r.shape}")
    s = np.asarray(s, dtype=DTYPE)
    if s.ndim == 0 or s.shape == (1,):
        return x + float(s.reshape(())) * r
    return x + _channel_view(_per_channel(s, x.shape[1], "s")) * r


def residual_combine_backward(r, s, upstream):
    """Return ``(grad_x, grad_r, grad_s)``; ``grad_s`` matches the shape of ``s``."""
    r = np.asarray(r, dtype=DTYPE)
    upstream = np.asarray(upstream, dtype=DTYPE)
    if r.shape != upstream.shape:
        raise ValueError(f"shape mismatch: {r.shape} vs {upstream.shape}")
    s = np.asarray(s, dtype=DTYPE)
    per_channel = (r * upstream).sum(axis=(0, 2, 3))
    if s.ndim == 0 or s.shape == (1,):
        return upstream, float(s.reshape(())) * upstream, per_channel.sum().reshape(s.shape)
    s = _per_channel(s, r.shape[1], "s")
    return upstream, _channel_view(s) * upstream, per_channel


@dataclass(frozen=True)
class DropoutConfig:
    p: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {self.p}")


def dropout_forward(x, p, training, rng):
    """Inverted dropout. Returns ``(out, mask)``; ``mask`` already carries the ``1/(1-p)`` scale.

    In evaluation mode, or with ``p == 0``, the input is returned unchanged
    and ``mask`` is ``None``.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = np.asarray(x, dtype=DTYPE)
    if not training or p == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def dropout_backward(mask, upstream):
    return upstream if mask is None else upstream * mask


def avg_pool2(x):
    x = np.asarray(x, dtype=DTYPE)
    N, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"avg_pool2 needs even spatial dims, got {(H, W)}")
    return x.reshape(N, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))


def avg_pool2_backward(upstream):
    g = np.asarray(upstream, dtype=DTYPE) * 0.25
    return np.repeat(np.repeat(g, 2, axis=2), 2, axis=3)


def global_avg_pool(x):
    """Spatial mean, ``(N, C, H, W) -> (N, C)``."""
    return np.asarray(x, dtype=DTYPE).mean(axis=(2, 3))


def global_avg_pool_backward(upstream, spatial):
    H, W = spatial
    g = np.asarray(upstream, dtype=DTYPE) / (H * W)
    return np.broadcast_to(g[:, :, None, None], g.shape + (H, W)).copy()


def linear_forward(features, W, bias):
    """Logits ``features @ W.T + bias`` with ``W`` shaped ``(classes, features)``."""
    features = np.asarray(features, dtype=DTYPE)
    if features.ndim != 2 or W.ndim != 2 or features.shape[1] != W.shape[1]:
        raise ValueError(f"cannot apply weight {W.shape} to features {features.shape}")
    if bias.shape != (W.shape[0],):
        raise ValueError(f"bias shape {bias.shape} does not match weight {W.shape}")
    return features @ W.T + bias


def linear_backward(features, W, upstream):
    """Return ``(grad_features, grad_W, grad_bias)``."""
    return upstream @ W, upstream.T @ features, upstream.sum(axis=0)
