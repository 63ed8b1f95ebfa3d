"""Datasets: CIFAR-10 binary reader/writer, a synthetic task, normalization, augmentation."""

import os
from dataclasses import dataclass, field

import numpy as np

from .tensor import DTYPE

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)
SYNTH_VERSION = "synth-v1"


class DataFormatError(ValueError):
    def __init__(self, message, path=None, offset=None):
        where = f" in {path}" if path else ""
        at = f" at byte offset {offset}" if offset is not None else ""
        super().__init__(f"{message}{where}{at}")
        self.path = path
        self.offset = offset


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    classes: int = 10
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, C, H, W), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError(f"{self.labels.shape[0]} labels for {self.images.shape[0]} images")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ValueError(f"labels must lie in [0, {self.classes})")

    def __len__(self):
        return self.images.shape[0]


def load_cifar10_binary(paths):
    """Read one or more CIFAR-10 binary batch files.

    Each 3073-byte record is a label byte followed by the R, G and B planes
    (1024 bytes each, row-major 32 x 32). Pixels are scaled to ``[0, 1]``.
    """
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    images, labels = [], []
    for path in paths:
        raw = np.fromfile(path, dtype=np.uint8)
        if raw.size % CIFAR_RECORD:
            bad = raw.size - raw.size % CIFAR_RECORD
            raise DataFormatError(
                f"file length {raw.size} is not a multiple of {CIFAR_RECORD}", path, bad
            )
        records = raw.reshape(-1, CIFAR_RECORD)
        lab = records[:, 0]
        if lab.size and lab.max() > 9:
            i = int(np.argmax(lab > 9))
            raise DataFormatError(f"label {int(lab[i])} > 9", path, i * CIFAR_RECORD)
        labels.append(lab.astype(np.int64))
        images.append(records[:, 1:].reshape((-1,) + CIFAR_SHAPE).astype(DTYPE) / 255.0)
    if not images:
        images, labels = [np.zeros((0,) + CIFAR_SHAPE)], [np.zeros(0, dtype=np.int64)]
    return Dataset(np.concatenate(images), np.concatenate(labels), 10, {"source": "cifar10"})


def write_cifar10_binary(ds, path):
    """Write a dataset in CIFAR-10 binary layout.

    Images must be ``(N, 3, 32, 32)`` with values on the ``k / 255`` grid.
    """
    if ds.images.shape[1:] != CIFAR_SHAPE:
        raise ValueError(f"CIFAR-10 layout needs (N, 3, 32, 32), got {ds.images.shape}")
    pixels = np.rint(ds.images * 255.0)
    if pixels.min(initial=0) < 0 or pixels.max(initial=0) > 255:
        raise ValueError("pixel values must lie in [0, 1]")
    out = np.empty((len(ds), CIFAR_RECORD), dtype=np.uint8)
    out[:, 0] = ds.labels
    out[:, 1:] = pixels.reshape(len(ds), -1).astype(np.uint8)
    out.tofile(path)


def _smooth_field(rng, shape, size, max_freq=2):
    """Zero-mean, unit-RMS random fields with frequencies ``1 <= |f| <= max_freq``.

    White noise is filtered in the 2D DFT domain by a radial band mask, then
    each field is rescaled to unit root-mean-square.
    """
    noise = rng.standard_normal(shape + (size, size))
    f = np.fft.fftfreq(size) * size
    radius = np.hypot(f[:, None], f[None, :])
    mask = (radius >= 1) & (radius <= max_freq)
    fields = np.fft.ifft2(np.fft.fft2(noise) * mask).real
    rms = np.sqrt(np.mean(fields**2, axis=(-2, -1), keepdims=True))
    return fields / rms


SPLIT_STREAMS = {"train": 1, "eval": 2}


def synth_templates(seed, classes, size, channels, amplitude=0.06):
    rng = np.random.default_rng([seed, 0])
    return amplitude * _smooth_field(rng, (classes, channels), size)


def synth_dataset(seed, n, classes=4, size=16, channels=3, sigma=0.5, split="train", amplitude=0.06):
    """Deterministic template-plus-noise classification task.

    Generator (``synth-v1``):

    * templates: ``amplitude`` times unit-RMS, zero-mean band-limited fields
      (spatial frequencies 1 to 2 cycles per image) drawn from
      ``default_rng([seed, 0])``, one per (class, channel);
    * labels: ``arange(n) % classes`` permuted by ``default_rng([seed, s])``
      where ``s`` is 1 for ``split="train"`` and 2 for ``"eval"``;
    * images: template of the label plus ``N(0, sigma^2)`` pixel noise drawn
      from the same stream, after the permutation.

    Splits share templates and differ only in their noise stream.
    """
    if classes < 2:
        raise ValueError("classes must be >= 2")
    templates = synth_templates(seed, classes, size, channels, amplitude)
    rng = np.random.default_rng([seed, SPLIT_STREAMS[split]])
    labels = rng.permutation(np.arange(n) % classes).astype(np.int64)
    noise = rng.standard_normal((n, channels, size, size))
    images = templates[labels] + sigma * noise
    meta = {"source": "synth", "generator": SYNTH_VERSION, "seed": seed, "split": split, "sigma": sigma}
    return Dataset(images, labels, classes, meta)


def nearest_template_accuracy(ds, templates):
    """Accuracy of assigning each image to the closest template in L2."""
    flat = ds.images.reshape(len(ds), -1)
    t = templates.reshape(templates.shape[0], -1)
    d2 = (t * t).sum(1)[None, :] - 2.0 * flat @ t.T
    return float(np.mean(np.argmin(d2, axis=1) == ds.labels))


@dataclass(frozen=True)
class Normalizer:
    """Per-channel standardization with statistics frozen from a training split.

    The divisor is ``sqrt(std^2 + eps^2)``: exactly ``eps`` for a constant
    channel, and equal to ``std`` to rounding precision otherwise.
    """

    mean: np.ndarray
    std: np.ndarray
    eps: float = 1e-8

    @classmethod
    def fit(cls, ds, eps=1e-8):
        return cls(ds.images.mean(axis=(0, 2, 3)), ds.images.std(axis=(0, 2, 3)), eps)

    def __call__(self, ds):
        m = self.mean.reshape(1, -1, 1, 1)
        s = np.sqrt(self.std.reshape(1, -1, 1, 1) ** 2 + self.eps**2)
        meta = dict(ds.meta, normalized=True)
        return Dataset((ds.images - m) / s, ds.labels, ds.classes, meta)


def normalize(train, *others, eps=1e-8):
    """Standardize ``train`` and any further splits with the train statistics.

    Returns ``(normalizer, train_n, *others_n)``; the same normalizer object
    transforms every split.
    """
    norm = Normalizer.fit(train, eps)
    return (norm, norm(train)) + tuple(norm(o) for o in others)


def augment(image, rng, flip=True, crop=True, pad=4, force_flip=None, offset=None):
    """Random horizontal flip and pad-and-crop of one ``(C, H, W)`` image.

    ``force_flip`` and ``offset`` override the random draws, which tests use.
    """
    out = image
    if flip:
        do_flip = rng.random() < 0.5 if force_flip is None else force_flip
        if do_flip:
            out = out[:, :, ::-1]
    if crop:
        C, H, W = out.shape
        if offset is None:
            dy, dx = rng.integers(-pad, pad + 1, size=2)
        else:
            dy, dx = offset
        padded = np.pad(out, ((0, 0), (pad, pad), (pad, pad)))
        out = padded[:, pad + dy:pad + dy + H, pad + dx:pad + dx + W]
    return np.ascontiguousarray(out)


def augment_batch(images, seed, step, flip=True, crop=True):
    """Augment a batch with one independent stream per example."""
    out = np.empty_like(images)
    for i, img in enumerate(images):
        rng = np.random.default_rng([seed, step, i])
        out[i] = augment(img, rng, flip, crop)
    return out
