from dataclasses import replace

import numpy as np
import numpy.testing as npt
import pytest

from isonet.data import Dataset
from isonet.isometry import isometry_residual
from isonet.network import Init, NetworkSpec, build, params_digest
from isonet.optim import (
    METRIC_COLUMNS,
    TrainConfig,
    TrainingDiverged,
    accuracy,
    add_ortho_gradients,
    decays,
    dropout_rng,
    grad_check,
    lr_at,
    relative_error,
    sgd_step,
    train,
)


def tiny_task(n=32, seed=0, classes=3):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    images = rng.standard_normal((n, 2, 6, 6)) * 0.3
    images[:, 0] += labels[:, None, None] - 1.0
    return Dataset(images, labels, classes)


def test_lr_schedule_examples():
    cfg = TrainConfig(lr=0.1, warmup_epochs=5, decay_epochs=(30, 60, 90))
    spe = 10
    assert lr_at(cfg, 0, spe) == pytest.approx(0.1 / 50)
    assert lr_at(cfg, 49, spe) == pytest.approx(0.1)
    assert lr_at(cfg, 50, spe) == pytest.approx(0.1)
    assert lr_at(cfg, 61 * spe, spe) == pytest.approx(0.1 * 0.01)
    assert lr_at(cfg, 90 * spe, spe) == pytest.approx(0.1 * 0.001)
    assert lr_at(replace(cfg, warmup_epochs=0), 0, spe) == 0.1
    with pytest.raises(ValueError):
        lr_at(cfg, -1, spe)


def test_config_validation():
    for bad in (dict(lr=0.0), dict(momentum=1.0), dict(decay_epochs=(5, 5)), dict(batch_size=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    assert TrainConfig(ortho_reg=False).effective_gamma == 0.0


def one_param(value, grad):
    params = build(NetworkSpec("isonet", ((0, 1),), 1, 1, kernel_size=1))
    names = list(params)
    params.values = {n: np.array(value, dtype=float) if n == "fc.W" else np.zeros_like(params[n]) for n in names}
    grads = {n: np.array(grad, dtype=float) if n == "fc.W" else np.zeros_like(params[n]) for n in names}
    return params, grads


def test_sgd_plain_step():
    params, grads = one_param([[1.0]], [[0.5]])
    cfg = TrainConfig(momentum=0.0, weight_decay=0.0)
    sgd_step(params, grads, cfg, 0.1)
    assert params["fc.W"][0, 0] == pytest.approx(1.0 - 0.05)


def test_sgd_zero_gradient_is_a_fixed_point():
    params, grads = one_param([[1.5]], [[0.0]])
    cfg = TrainConfig(momentum=0.9, weight_decay=0.0)
    for _ in range(20):
        sgd_step(params, grads, cfg, 0.1)
    assert params["fc.W"][0, 0] == 1.5


def test_sgd_momentum_two_steps():
    params, grads = one_param([[0.0]], [[1.0]])
    cfg = TrainConfig(momentum=0.9, weight_decay=0.0)
    sgd_step(params, grads, cfg, 0.1)
    sgd_step(params, grads, cfg, 0.1)
    assert params["fc.W"][0, 0] == pytest.approx(-0.1 * (1 + 1.9))
    assert params.version == 2


def test_weight_decay_only_on_kernels_and_classifier_weight():
    assert decays("stem.A") and decays("fc.W")
    assert not any(decays(n) for n in ("stem.b", "s0.b0.s", "fc.bias", "s0.b0.act2.b"))
    params = build(NetworkSpec("r-isonet", ((1, 2),), 1, 2))
    before = params.copy()
    zero = {n: np.zeros_like(v) for n, v in params.values.items()}
    sgd_step(params, zero, TrainConfig(momentum=0.0, weight_decay=0.5), 1.0)
    for n in params:
        if decays(n):
            npt.assert_allclose(params[n], 0.5 * before[n])
        else:
            npt.assert_array_equal(params[n], before[n])


def test_ortho_gradient_descent_is_monotone():
    rng = np.random.default_rng(0)
    params = build(NetworkSpec("isonet", ((2, 4),), 2, 3), Init.GAUSSIAN, 0)
    for n in params.kernel_names():
        params.values[n] = 0.3 * rng.standard_normal(params[n].shape)
    residuals = []
    for _ in range(30):
        grads = {n: np.zeros_like(v) for n, v in params.values.items()}
        add_ortho_gradients(params, grads, 10.0)
        sgd_step(params, grads, TrainConfig(momentum=0.0, weight_decay=0.0), 1e-3)
        residuals.append([isometry_residual(params[n]) for n in params.kernel_names()])
    r = np.array(residuals)
    assert np.all(np.diff(r, axis=0) <= 1e-12)


def test_zero_epochs_returns_initialization():
    spec = NetworkSpec("isonet", ((1, 4),), 2, 3)
    result = train(spec, TrainConfig(epochs=0), tiny_task())
    assert result.history == []
    assert params_digest(result.params) == params_digest(build(spec, Init.DELTA, 0))


def test_training_is_deterministic_and_logs_columns():
    spec = NetworkSpec("isonet", ((2, 4),), 2, 3, dropout_p=0.2)
    cfg = TrainConfig(epochs=3, warmup_epochs=1, batch_size=8, augment=True)
    a = train(spec, cfg, tiny_task(), tiny_task(seed=1))
    b = train(spec, cfg, tiny_task(), tiny_task(seed=1))
    assert a.history == b.history
    assert params_digest(a.params) == params_digest(b.params)
    assert list(a.history[0]) == list(METRIC_COLUMNS)
    c = train(spec, replace(cfg, seed=1), tiny_task(), tiny_task(seed=1))
    assert c.history != a.history


def test_single_batch_overfit():
    spec = NetworkSpec("isonet", ((3, 8),), 2, 3)
    data = tiny_task(n=8, seed=3)
    data = Dataset(data.images, np.array([0, 1, 2, 0, 1, 2, 2, 1]), 3)
    cfg = TrainConfig(lr=0.01, epochs=500, warmup_epochs=10, batch_size=8, weight_decay=0.0)
    result = train(spec, cfg, data)
    assert min(row["train_loss"] for row in result.history) < 0.01
    assert accuracy(result.params, data) == 1.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    spec = NetworkSpec("vanilla", ((2, 4),), 2, 3)
    cfg = TrainConfig(lr=1e6, epochs=5, warmup_epochs=0, batch_size=8, srelu=False, delta_init=False, ortho_reg=False)
    with pytest.raises(TrainingDiverged) as err:
        train(spec, cfg, tiny_task())
    assert err.value.step >= 0 and err.value.epoch >= 0
    assert not np.isfinite(err.value.loss)


def test_empty_dataset_rejected():
    empty = Dataset(np.zeros((0, 2, 6, 6)), np.zeros(0, dtype=int), 3)
    with pytest.raises(ValueError):
        train(NetworkSpec("isonet", ((1, 4),), 2, 3), TrainConfig(epochs=1), empty)
    assert np.isnan(accuracy(build(NetworkSpec("isonet", ((1, 4),), 2, 3)), empty))


def test_dropout_stream_is_counter_based():
    a = dropout_rng(3, 10).random(5)
    npt.assert_array_equal(a, dropout_rng(3, 10).random(5))
    assert not np.array_equal(a, dropout_rng(3, 11).random(5))


def test_relative_error():
    assert relative_error(1.0, 1.0) == 0.0
    assert relative_error(2.0, 1.0) == 0.5
    assert relative_error(0.0, 1e-9) == pytest.approx(1e-2)


def test_grad_check_linear_network_is_exact():
    spec = NetworkSpec("isonet", ((2, 3),), 3, 4, kernel_size=1)
    params = build(spec, Init.DELTA, 0)
    rng = np.random.default_rng(1)
    for n in params:
        if n.endswith(".b"):
            params.values[n] = np.full(params[n].shape, -1e9)
        else:
            params.values[n] = params[n] + 0.3 * rng.standard_normal(params[n].shape)
    # the loss is quadratic in each coordinate, so a large step is exact and
    # keeps rounding (about eps * loss / h) out of the comparison
    res = grad_check(spec, n_probes=10, h=1e-2, loss="squared", params=params)
    assert res.max_rel_error < 1e-9


@pytest.mark.parametrize("variant", ["isonet", "r-isonet", "vanilla", "r-vanilla"])
@pytest.mark.parametrize("loss", ["cross_entropy", "squared"])
def test_grad_check_default_network(variant, loss):
    spec = NetworkSpec(variant, ((3, 4),), 3, 5, dropout_p=0.3)
    init = Init.GAUSSIAN if "vanilla" in variant else Init.DELTA
    res = grad_check(spec, init, n_probes=10, loss=loss)
    assert res.passed(1e-5), res.worst


def test_grad_check_flags_corruption():
    spec = NetworkSpec("isonet", ((3, 4),), 3, 5)
    res = grad_check(spec, n_probes=10, corrupt=("s0.b1.conv1.A", (1, 2, 0, 1), 2.0))
    assert res.max_rel_error > 0.1
    assert res.worst[:2] == ("s0.b1.conv1.A", (1, 2, 0, 1))
    with pytest.raises(ValueError):
        grad_check(spec, n_probes=0)
