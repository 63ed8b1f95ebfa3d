"""SGD training loop with warmup/step decay, the orthogonality penalty, and a gradient checker."""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import augment_batch
from .isometry import isometry_residual, ortho_penalty
from .network import (
    Init,
    Mode,
    backward,
    build,
    forward,
    loss_cross_entropy,
    loss_squared,
    param_class,
)

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "train_loss", "train_acc", "eval_acc", "mean_iso_residual", "lr")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-4
    gamma: float = 1e-4
    epochs: int = 30
    warmup_epochs: int = 5
    decay_epochs: tuple = ()
    decay_factor: float = 0.1
    batch_size: int = 64
    seed: int = 0
    srelu: bool = True
    delta_init: bool = True
    ortho_reg: bool = True
    augment: bool = False

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        decay = tuple(int(e) for e in self.decay_epochs)
        if any(b <= a for a, b in zip(decay, decay[1:])):
            raise ValueError(f"decay_epochs must be strictly increasing, got {decay}")
        object.__setattr__(self, "decay_epochs", decay)
        if self.batch_size < 1 or self.epochs < 0 or self.warmup_epochs < 0:
            raise ValueError("batch_size must be >= 1; epochs and warmup_epochs >= 0")

    @property
    def effective_gamma(self):
        return self.gamma if self.ortho_reg else 0.0


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, step, loss, history):
        super().__init__(f"loss became {loss} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step
        self.loss = loss
        self.history = history


def lr_at(cfg, step, steps_per_epoch):
    """Learning rate for a global step (0-based).

    Linear per-step warmup to ``cfg.lr`` over ``warmup_epochs``, then
    ``lr * decay_factor ** (number of decay epochs <= current epoch)``.
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    warmup = cfg.warmup_epochs * steps_per_epoch
    if step < warmup:
        return cfg.lr * (step + 1) / warmup
    epoch = step // steps_per_epoch
    passed = sum(1 for e in cfg.decay_epochs if e <= epoch)
    return cfg.lr * cfg.decay_factor**passed


def decays(name):
    """Weight decay applies to kernels and the classifier weight only."""
    return param_class(name) == "kernel" or name == "fc.W"


def sgd_step(params, grads, cfg, lr):
    """One momentum-SGD update in place: ``v = mu v + g + wd theta``, ``theta -= lr v``."""
    for name, theta in params.values.items():
        g = grads[name]
        if cfg.weight_decay and decays(name):
            g = g + cfg.weight_decay * theta
        v = params.velocity.get(name)
        if v is None:
            v = params.velocity[name] = np.zeros_like(theta)
        v *= cfg.momentum
        v += g
        theta -= lr * v
    params.version += 1


def add_ortho_gradients(params, grads, gamma):
    """Add the orthogonality penalty gradient to every kernel gradient; return total penalty."""
    total = 0.0
    if gamma == 0.0:
        return total
    for name in params.kernel_names():
        loss, g = ortho_penalty(params.values[name], gamma)
        grads[name] = grads[name] + g
        total += loss
    return total


def mean_isometry_residual(params):
    names = params.kernel_names()
    return float(np.mean([isometry_residual(params.values[n]) for n in names]))


def dropout_rng(seed, step):
    """Counter-based stream for the dropout mask of one step."""
    return np.random.Generator(np.random.Philox(key=[seed, step]))


def accuracy(params, ds, batch_size=256):
    if len(ds) == 0:
        return float("nan")
    correct = 0
    for s in range(0, len(ds), batch_size):
        logits, _ = forward(params, ds.images[s:s + batch_size], Mode.EVAL)
        correct += int(np.sum(np.argmax(logits, axis=1) == ds.labels[s:s + batch_size]))
    return correct / len(ds)


def configure_spec(spec, cfg):
    """Apply the activation switch of ``cfg`` to a network spec."""
    return replace(spec, srelu=cfg.srelu)


@dataclass
class TrainResult:
    params: object
    history: list = field(default_factory=list)


def train(spec, cfg, dataset, eval_dataset=None, params=None, progress=None):
    """Train with minibatch SGD. Returns a :class:`TrainResult`.

    Each epoch shuffles with a generator seeded by ``cfg.seed``, runs
    forward/backward per minibatch, adds the orthogonality gradient once per
    step when enabled, and takes an SGD step. One history row is logged per
    epoch with the columns of :data:`METRIC_COLUMNS`; ``train_acc`` and
    ``train_loss`` are running averages over the epoch's minibatches.

    Raises :class:`TrainingDiverged` on a non-finite loss.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    spec = configure_spec(spec, cfg)
    if params is None:
        params = build(spec, Init.DELTA if cfg.delta_init else Init.GAUSSIAN, cfg.seed)
    gamma = cfg.effective_gamma
    n = len(dataset)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    order_rng = np.random.default_rng([cfg.seed, 17])
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        lr = cfg.lr
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            x = dataset.images[idx]
            if cfg.augment:
                x = augment_batch(x, cfg.seed, step)
            y = dataset.labels[idx]
            logits, cache = forward(params, x, Mode.TRAIN, dropout_rng(cfg.seed, step))
            loss, g = loss_cross_entropy(logits, y)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, step, loss, history)
            grads = backward(params, cache, g)
            add_ortho_gradients(params, grads, gamma)
            lr = lr_at(cfg, step, steps_per_epoch)
            sgd_step(params, grads, cfg, lr)
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == y))
            step += 1
        row = {
            "epoch": epoch,
            "train_loss": loss_sum / n,
            "train_acc": correct / n,
            "eval_acc": accuracy(params, eval_dataset) if eval_dataset is not None else float("nan"),
            "mean_iso_residual": mean_isometry_residual(params),
            "lr": lr,
        }
        if not all(np.isfinite(params.values[k]).all() for k in params.values):
            raise TrainingDiverged(epoch, step, float("nan"), history)
        history.append(row)
        log.info("epoch %d loss %.4f acc %.4f", epoch, row["train_loss"], row["train_acc"])
        if progress is not None:
            progress(row)
    return TrainResult(params, history)


# -- gradient checking -------------------------------------------------------


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst: tuple
    probes: list

    def passed(self, tol=1e-5):
        return self.max_rel_error < tol


def relative_error(a, b, floor=1e-7):
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(spec, init=Init.DELTA, n_probes=10, h=1e-5, loss="cross_entropy", seed=0,
               perturb=0.1, batch=2, spatial=(8, 8), params=None, corrupt=None, mode=Mode.TRAIN):
    """Compare analytic gradients with central differences.

    ``n_probes`` coordinates are drawn from each parameter class present
    (kernel, b, s, classifier). Parameters are built with ``init`` and then
    jittered by ``N(0, perturb^2)`` so that no class sits at a degenerate
    point (``s = 0`` zeroes every branch gradient, for instance).
    ``loss`` is ``"cross_entropy"`` or ``"squared"`` (against a random
    target on the logits). ``corrupt=(name, index, factor)`` scales one
    analytic entry to exercise the harness itself.

    Returns a :class:`GradCheckResult` whose ``worst`` names the coordinate
    with the largest relative error.
    """
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    rng = np.random.default_rng(seed)
    if params is None:
        params = build(spec, init, seed)
        for v in params.values.values():
            v += perturb * rng.standard_normal(v.shape)
    x = rng.standard_normal((batch, spec.input_channels) + tuple(spatial))
    labels = rng.integers(0, spec.classes, batch)
    target = rng.standard_normal((batch, spec.classes))

    def objective(p):
        logits, cache = forward(p, x, mode, dropout_rng(seed, 0))
        if loss == "squared":
            value, g = loss_squared(logits, target)
        else:
            value, g = loss_cross_entropy(logits, labels)
        return value, g, cache

    _, g, cache = objective(params)
    grads = backward(params, cache, g)
    if corrupt is not None:
        name, index, factor = corrupt
        grads[name][index] *= factor

    by_class = {}
    for name, v in params.values.items():
        by_class.setdefault(param_class(name), []).extend((name, i) for i in np.ndindex(v.shape))
    probes = []
    for cls, coords in by_class.items():
        picks = rng.choice(len(coords), size=min(n_probes, len(coords)), replace=False)
        chosen = [coords[i] for i in picks]
        if corrupt is not None and corrupt[0] in params.values and param_class(corrupt[0]) == cls:
            chosen.append((corrupt[0], tuple(corrupt[1])))
        for name, idx in chosen:
            theta = params.values[name]
            old = theta[idx]
            theta[idx] = old + h
            plus = objective(params)[0]
            theta[idx] = old - h
            minus = objective(params)[0]
            theta[idx] = old
            numeric = (plus - minus) / (2 * h)
            analytic = float(grads[name][idx])
            probes.append((name, tuple(int(i) for i in idx), numeric, analytic,
                           relative_error(numeric, analytic)))
    worst = max(probes, key=lambda p: p[-1])
    return GradCheckResult(worst[-1], worst, probes)
