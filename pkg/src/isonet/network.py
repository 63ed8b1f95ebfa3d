"""ISONet / R-ISONet assembly, initialization, forward and backward passes.

Architecture (desk scale)::

    stem:        k x k conv (input_channels -> width of stage 0), SReLU
    stage s:     [s > 0] avg_pool2, 1 x 1 channel-lifting conv
                 block_count blocks of
                   plain:     conv, SReLU, conv, SReLU
                   residual:  SReLU(x + s * conv(SReLU(conv(x))))
    head:        global average pool, dropout (train only), linear

Parameters live in an ordered ``dict`` keyed by dotted names. Names ending
in ``.A`` are convolution kernels; ``.b`` are SReLU shifts, ``.s`` residual
scales, and ``fc.W`` / ``fc.bias`` the classifier.
"""

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from . import layers
from .convops import _correlate_batch, conv_backward, delta_kernel
from .tensor import DTYPE, as_signal

VARIANTS = ("isonet", "r-isonet", "vanilla", "r-vanilla")


class Init(str, Enum):
    DELTA = "delta"
    GAUSSIAN = "gaussian"


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


class StaleCacheError(RuntimeError):
    """Backward was called with a cache from before the last parameter update."""


class CheckpointError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description.

    ``srelu=None`` picks the variant default: SReLU for the isometric
    variants, plain ReLU (``b`` fixed at 0, not learned) for the vanilla
    ones. ``residual_scale`` is ``"per_channel"`` or ``"scalar"``.
    """

    variant: str = "isonet"
    stages: tuple = ((2, 16),)
    input_channels: int = 3
    classes: int = 10
    kernel_size: int = 3
    dropout_p: float = 0.0
    residual_scale: str = "per_channel"
    srelu: bool = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        stages = tuple((int(n), int(c)) for n, c in self.stages)
        if not stages:
            raise ValueError("stages must be nonempty")
        if any(n < 0 or c < 1 for n, c in stages):
            raise ValueError(f"invalid stages {stages}")
        object.__setattr__(self, "stages", stages)
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.input_channels < 1 or self.classes < 1:
            raise ValueError("input_channels and classes must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.residual_scale not in ("per_channel", "scalar"):
            raise ValueError(f"residual_scale must be 'per_channel' or 'scalar'")
        if self.srelu is None:
            object.__setattr__(self, "srelu", not self.variant.endswith("vanilla"))

    @property
    def residual(self):
        return self.variant.startswith("r-")

    def to_json(self):
        d = asdict(self)
        d["stages"] = [list(s) for s in self.stages]
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["stages"] = tuple(tuple(s) for s in d["stages"])
        return cls(**d)


@dataclass
class NetworkParams:
    spec: NetworkSpec
    values: dict
    velocity: dict = field(default_factory=dict)
    version: int = 0

    def __getitem__(self, name):
        return self.values[name]

    def __iter__(self):
        return iter(self.values)

    def kernel_names(self):
        return [n for n in self.values if n.endswith(".A")]

    def copy(self):
        return NetworkParams(
            self.spec,
            {k: v.copy() for k, v in self.values.items()},
            {k: v.copy() for k, v in self.velocity.items()},
            self.version,
        )

    def flat(self):
        return np.concatenate([v.ravel() for v in self.values.values()])


def param_class(name):
    """Coarse parameter class: ``kernel``, ``b``, ``s`` or ``classifier``."""
    if name.endswith(".A"):
        return "kernel"
    if name.endswith(".b"):
        return "b"
    if name.endswith(".s"):
        return "s"
    return "classifier"


def _layout(spec):
    """Parameter names and shapes in declaration order."""
    k = spec.kernel_size
    out = []
    width = spec.stages[0][1]

    def act(prefix, c):
        if spec.srelu:
            out.append((f"{prefix}.b", (c,)))

    out.append(("stem.A", (width, spec.input_channels, k, k)))
    act("stem", width)
    for si, (nblocks, ch) in enumerate(spec.stages):
        if si > 0:
            out.append((f"s{si}.lift.A", (ch, width, 1, 1)))
            width = ch
        for bi in range(nblocks):
            p = f"s{si}.b{bi}"
            out.append((f"{p}.conv1.A", (ch, ch, k, k)))
            act(f"{p}.act1", ch)
            out.append((f"{p}.conv2.A", (ch, ch, k, k)))
            if spec.residual:
                out.append((f"{p}.s", (1,) if spec.residual_scale == "scalar" else (ch,)))
            act(f"{p}.act2", ch)
    out.append(("fc.W", (spec.classes, width)))
    out.append(("fc.bias", (spec.classes,)))
    return out


def build(spec, init=Init.DELTA, seed=0):
    """Initialize parameters.

    Delta: every kernel is the delta kernel, ``b = -1``, ``s = 0``.
    Gaussian: kernel entries ``N(0, 2 / (C k^2))``, ``b = -1`` when SReLU is
    on (``b = 0`` is plain ReLU and is not learned), ``s = 0``. The
    classifier is ``N(0, 1 / fan_in)`` with zero bias in both schemes.
    """
    init = Init(init)
    rng = np.random.default_rng(seed)
    values = {}
    for name, shape in _layout(spec):
        cls = param_class(name)
        if cls == "kernel":
            M, C, k, _ = shape
            if init is Init.DELTA:
                values[name] = delta_kernel(M, C, k)
            else:
                values[name] = rng.normal(0.0, np.sqrt(2.0 / (C * k * k)), size=shape)
        elif cls == "b":
            values[name] = np.full(shape, -1.0)
        elif cls == "s":
            values[name] = np.zeros(shape)
        elif name == "fc.W":
            values[name] = rng.normal(0.0, np.sqrt(1.0 / shape[1]), size=shape)
        else:
            values[name] = np.zeros(shape)
    return NetworkParams(spec, values)


# -- units -----------------------------------------------------------------
# Each unit's forward returns (output, saved) and its backward consumes the
# saved state, accumulating parameter gradients into ``grads``.


def _conv_fwd(A, x):
    if x.shape[1] != A.shape[1]:
        raise ValueError(f"input has {x.shape[1]} channels, kernel {A.shape} expects {A.shape[1]}")
    return _correlate_batch(A, x), x


class _Tape:
    def __init__(self, params, x):
        self.params = params
        self.version = params.version
        self.input_shape = x.shape
        self.entries = []
        self.features = None
        self.trunk = None
        self.dropout_mask = None


def _act_fwd(params, tape_list, name, y):
    """SReLU (or ReLU with ``b = 0`` when no shift parameter exists)."""
    b = params.values.get(name)
    if b is None:
        tape_list.append(("relu", name, y))
        return np.maximum(y, 0.0)
    tape_list.append(("srelu", name, y))
    return layers.srelu_forward(y, b)


def forward(params, x, mode=Mode.EVAL, rng=None):
    """Run the network. Returns ``(logits, cache)``.

    ``rng`` drives dropout in training mode; with ``mode="train"`` and
    ``dropout_p > 0`` it is required.
    """
    mode = Mode(mode)
    spec = params.spec
    x = as_signal(x)
    if x.shape[1] != spec.input_channels:
        raise ValueError(f"input has {x.shape[1]} channels, spec expects {spec.input_channels}")
    v = params.values
    tape = _Tape(params, x)
    ops = tape.entries

    def conv(name, h):
        out, saved = _conv_fwd(v[name], h)
        ops.append(("conv", name, saved))
        return out

    h = conv("stem.A", x)
    h = _act_fwd(params, ops, "stem.b", h)
    for si, (nblocks, ch) in enumerate(spec.stages):
        if si > 0:
            ops.append(("pool", None, h.shape))
            h = layers.avg_pool2(h)
            h = conv(f"s{si}.lift.A", h)
        for bi in range(nblocks):
            p = f"s{si}.b{bi}"
            if spec.residual:
                ops.append(("res_begin", p, None))
                r = conv(f"{p}.conv1.A", h)
                r = _act_fwd(params, ops, f"{p}.act1.b", r)
                r = conv(f"{p}.conv2.A", r)
                ops.append(("res_end", p, r))
                h = layers.residual_combine_forward(h, r, v[f"{p}.s"])
            else:
                h = conv(f"{p}.conv1.A", h)
                h = _act_fwd(params, ops, f"{p}.act1.b", h)
                h = conv(f"{p}.conv2.A", h)
            h = _act_fwd(params, ops, f"{p}.act2.b", h)
    tape.trunk = h
    feats = layers.global_avg_pool(h)
    tape.features = feats
    tape.spatial = h.shape[2:]
    if mode is Mode.TRAIN and spec.dropout_p > 0:
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        dropped, tape.dropout_mask = layers.dropout_forward(feats, spec.dropout_p, True, rng)
    else:
        dropped = feats
    tape.head_input = dropped
    logits = layers.linear_forward(dropped, v["fc.W"], v["fc.bias"])
    return logits, tape


def backward(params, cache, grad_logits, return_input_grad=False):
    """Gradients of a scalar loss with respect to every parameter.

    ``grad_logits`` is the loss gradient on the logits. Returns a dict
    keyed like ``params.values`` (and the input gradient as a second
    value when ``return_input_grad`` is set).
    """
    if cache.params is not params or cache.version != params.version:
        raise StaleCacheError("cache does not belong to the current parameter state")
    v = params.values
    grads = {}
    grad_logits = np.asarray(grad_logits, dtype=DTYPE)
    g_in, grads["fc.W"], grads["fc.bias"] = layers.linear_backward(
        cache.head_input, v["fc.W"], grad_logits
    )
    g_feat = layers.dropout_backward(cache.dropout_mask, g_in)
    g = layers.global_avg_pool_backward(g_feat, cache.spatial)

    # residual bookkeeping: the trunk gradient is parked while the branch runs
    stack = []
    for kind, name, saved in reversed(cache.entries):
        if kind == "conv":
            need = return_input_grad or name != "stem.A"
            g, grads[name] = conv_backward(v[name], saved, g, input_grad=need)
        elif kind == "srelu":
            g, grads[name] = layers.srelu_backward(saved, v[name], g)
        elif kind == "relu":
            g = np.where(saved >= 0.0, g, 0.0)
        elif kind == "pool":
            g = layers.avg_pool2_backward(g)
        elif kind == "res_end":
            s = v[f"{name}.s"]
            g_skip, g_branch, grads[f"{name}.s"] = layers.residual_combine_backward(saved, s, g)
            stack.append(g_skip)
            g = g_branch
        elif kind == "res_begin":
            g = g + stack.pop()
    ordered = {name: grads[name] for name in v}
    if return_input_grad:
        return ordered, g
    return ordered


def trunk_features(params, x):
    """Trunk output before global pooling, in evaluation mode."""
    _, cache = forward(params, x, Mode.EVAL)
    return cache.trunk


def pre_classifier_features(params, x):
    _, cache = forward(params, x, Mode.EVAL)
    return cache.features


# -- losses ----------------------------------------------------------------


def loss_cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient on the logits."""
    logits = np.asarray(logits, dtype=DTYPE)
    labels = np.asarray(labels)
    N, K = logits.shape
    if labels.shape != (N,):
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"labels must lie in [0, {K})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsumexp
    loss = -float(logp[np.arange(N), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(N), labels] -= 1.0
    return loss, grad / N


def loss_squared(output, target):
    """``0.5 * ||target - output||^2`` and its gradient ``output - target``."""
    output = np.asarray(output, dtype=DTYPE)
    target = np.asarray(target, dtype=DTYPE)
    if output.shape != target.shape:
        raise ValueError(f"shape mismatch: {output.shape} vs {target.shape}")
    diff = output - target
    return 0.5 * float(np.sum(diff * diff)), diff


# -- checkpoints -----------------------------------------------------------
#
# Layout (all integers little-endian):
#   4 bytes   magic b"ISON"
#   u32       format version (1)
#   u32       byte length L of the spec JSON, then L bytes of UTF-8 JSON
#   u32       parameter count P
#   P times:  u16 name length, name bytes (UTF-8), u8 ndim, ndim x u32 dims,
#             prod(dims) x f64 values in C order
# Parameters appear in declaration order (the order of ``build``).

MAGIC = b"ISON"
FORMAT_VERSION = 1


def save_checkpoint(params, path):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    spec_bytes = params.spec.to_json().encode()
    buf.write(struct.pack("<I", len(spec_bytes)))
    buf.write(spec_bytes)
    buf.write(struct.pack("<I", len(params.values)))
    for name, arr in params.values.items():
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path):
    with open(path, "rb") as f:
        data = f.read()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"truncated checkpoint while reading {what}", pos)
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic", 0)
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version}", 4)
    (n,) = struct.unpack("<I", take(4, "spec length"))
    spec_at = pos
    try:
        spec = NetworkSpec.from_json(take(n, "spec").decode())
    except (ValueError, TypeError, KeyError) as exc:
        raise CheckpointError(f"invalid spec: {exc}", spec_at) from None
    expected = _layout(spec)
    (count,) = struct.unpack("<I", take(4, "parameter count"))
    if count != len(expected):
        raise CheckpointError(f"expected {len(expected)} parameters, found {count}", pos - 4)
    values = {}
    for want_name, want_shape in expected:
        at = pos
        (ln,) = struct.unpack("<H", take(2, "name length"))
        name = take(ln, "name").decode(errors="replace")
        (ndim,) = struct.unpack("<B", take(1, "ndim"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "shape"))
        if name != want_name or tuple(shape) != tuple(want_shape):
            raise CheckpointError(f"parameter {name!r}{shape} != expected {want_name!r}{want_shape}", at)
        size = int(np.prod(shape)) if shape else 1
        values[name] = np.frombuffer(take(8 * size, name), dtype="<f8").astype(DTYPE).reshape(shape)
    if pos != len(data):
        raise CheckpointError("trailing bytes after last parameter", pos)
    return NetworkParams(spec, values)


def params_digest(params):
    h = hashlib.sha256()
    for name, arr in params.values.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()
