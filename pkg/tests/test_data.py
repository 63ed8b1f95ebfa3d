import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isonet.data import (
    CIFAR_RECORD,
    DataFormatError,
    Dataset,
    augment,
    augment_batch,
    load_cifar10_binary,
    nearest_template_accuracy,
    normalize,
    synth_dataset,
    synth_templates,
    write_cifar10_binary,
)


def record(label, fill):
    return bytes([label]) + bytes([fill]) * (CIFAR_RECORD - 1)


def test_cifar_empty_file(tmp_path):
    p = tmp_path / "empty.bin"
    p.write_bytes(b"")
    ds = load_cifar10_binary(p)
    assert len(ds) == 0 and ds.images.shape == (0, 3, 32, 32)


def test_cifar_single_record(tmp_path):
    p = tmp_path / "one.bin"
    p.write_bytes(record(7, 255))
    ds = load_cifar10_binary(p)
    assert len(ds) == 1 and ds.labels[0] == 7
    npt.assert_array_equal(ds.images, 1.0)


def test_cifar_plane_order(tmp_path):
    raw = bytearray(record(2, 0))
    raw[1 + 1024 + 32 * 5 + 9] = 51  # green plane, row 5, column 9
    p = tmp_path / "one.bin"
    p.write_bytes(bytes(raw))
    ds = load_cifar10_binary(p)
    assert ds.images[0, 1, 5, 9] == pytest.approx(0.2)
    assert ds.images.sum() == pytest.approx(0.2)


def test_cifar_format_errors(tmp_path):
    p = tmp_path / "short.bin"
    p.write_bytes(record(1, 0)[:-1])
    with pytest.raises(DataFormatError) as err:
        load_cifar10_binary(p)
    assert err.value.offset == 0
    p.write_bytes(record(1, 0) + record(1, 0)[:100])
    with pytest.raises(DataFormatError) as err:
        load_cifar10_binary(p)
    assert err.value.offset == CIFAR_RECORD
    p.write_bytes(record(1, 0) + record(12, 0))
    with pytest.raises(DataFormatError) as err:
        load_cifar10_binary(p)
    assert err.value.offset == CIFAR_RECORD and "label" in str(err.value)


def test_cifar_roundtrip_multiple_files(tmp_path):
    rng = np.random.default_rng(0)
    parts = []
    for i in range(2):
        img = rng.integers(0, 256, (3, 3, 32, 32)) / 255.0
        ds = Dataset(img, rng.integers(0, 10, 3), 10)
        write_cifar10_binary(ds, tmp_path / f"b{i}.bin")
        parts.append(ds)
    both = load_cifar10_binary([tmp_path / "b0.bin", tmp_path / "b1.bin"])
    npt.assert_array_equal(both.labels, np.concatenate([d.labels for d in parts]))
    npt.assert_allclose(both.images, np.concatenate([d.images for d in parts]), atol=1e-15)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 3, 4)), np.zeros(2, dtype=int))
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 1, 4, 4)), np.zeros(3, dtype=int))
    with pytest.raises(ValueError):
        Dataset(np.zeros((1, 1, 4, 4)), np.array([4]), classes=4)


def test_synth_is_deterministic():
    a = synth_dataset(7, 64)
    b = synth_dataset(7, 64)
    npt.assert_array_equal(a.images, b.images)
    npt.assert_array_equal(a.labels, b.labels)
    assert not np.array_equal(a.images, synth_dataset(8, 64).images)
    ev = synth_dataset(7, 64, split="eval")
    assert not np.array_equal(a.images, ev.images)
    assert np.bincount(a.labels).tolist() == [16] * 4


def test_synth_noise_free_examples_are_templates():
    ds = synth_dataset(3, 40, classes=5, sigma=0.0)
    t = synth_templates(3, 5, 16, 3)
    npt.assert_array_equal(ds.images, t[ds.labels])
    assert nearest_template_accuracy(ds, t) == 1.0


def test_synth_templates_are_smooth_and_zero_mean():
    t = synth_templates(1, 4, 16, 3, amplitude=1.0)
    npt.assert_allclose(t.mean(axis=(-2, -1)), 0.0, atol=1e-12)
    npt.assert_allclose(np.sqrt((t**2).mean(axis=(-2, -1))), 1.0, atol=1e-12)
    spectrum = np.abs(np.fft.fft2(t))
    f = np.fft.fftfreq(16) * 16
    radius = np.hypot(f[:, None], f[None, :])
    assert spectrum[..., radius > 2].max() < 1e-9


def test_desk_task_is_learnable_but_not_trivial():
    ds = synth_dataset(7, 512, split="eval")
    acc = nearest_template_accuracy(ds, synth_templates(7, 4, 16, 3))
    assert 0.9 < acc < 1.0


def test_normalize():
    rng = np.random.default_rng(1)
    tr = Dataset(rng.normal(3.0, 2.0, (50, 3, 4, 4)), np.zeros(50, dtype=int), 2)
    ev = Dataset(rng.normal(3.0, 2.0, (10, 3, 4, 4)), np.zeros(10, dtype=int), 2)
    norm, trn, evn = normalize(tr, ev)
    assert np.abs(trn.images.mean(axis=(0, 2, 3))).max() < 1e-10
    assert np.abs(trn.images.var(axis=(0, 2, 3)) - 1.0).max() < 1e-10
    npt.assert_allclose(evn.images, (ev.images - norm.mean.reshape(1, -1, 1, 1)) / norm.std.reshape(1, -1, 1, 1), rtol=1e-14)
    flat = Dataset(np.ones((4, 1, 2, 2)), np.zeros(4, dtype=int), 2)
    _, flatn = normalize(flat)
    npt.assert_array_equal(flatn.images, 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_double_flip_is_identity(seed):
    img = np.random.default_rng(seed).standard_normal((3, 5, 6))
    rng = np.random.default_rng(seed)
    once = augment(img, rng, crop=False, force_flip=True)
    npt.assert_array_equal(once, img[:, :, ::-1])
    npt.assert_array_equal(augment(once, rng, crop=False, force_flip=True), img)


def test_crop():
    img = np.arange(2 * 4 * 4, dtype=float).reshape(2, 4, 4)
    rng = np.random.default_rng(0)
    npt.assert_array_equal(augment(img, rng, flip=False, offset=(0, 0)), img)
    shifted = augment(img, rng, flip=False, offset=(1, -2))
    npt.assert_array_equal(shifted[:, :3, 2:], img[:, 1:, :2])
    npt.assert_array_equal(shifted[:, 3], 0.0)
    npt.assert_array_equal(shifted[:, :, :2], 0.0)


def test_augment_batch_per_example_streams():
    imgs = np.random.default_rng(2).standard_normal((6, 3, 8, 8))
    a = augment_batch(imgs, seed=1, step=4)
    npt.assert_array_equal(a, augment_batch(imgs, seed=1, step=4))
    npt.assert_array_equal(a[2], augment(imgs[2], np.random.default_rng([1, 4, 2])))
    npt.assert_array_equal(augment_batch(imgs[:3], 1, 4), a[:3])
