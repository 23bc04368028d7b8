import json

import numpy as np
import pytest
import torch
from scipy import stats

from otfs_bpicnet.core import RealModel, SystemConfig, make_constellation
from otfs_bpicnet.detector import DetectorParams, detect
from otfs_bpicnet.errors import ConfigError, FormatError
from otfs_bpicnet.trainer import (
    THETA_FLOOR,
    PlateauScheduler,
    TorchBatch,
    TrainConfig,
    _theta_tensor,
    _validation_samples,
    batch_rng,
    generate_batch,
    grad,
    gradient_relative_error,
    load_params,
    loss,
    numerical_grad,
    save_params,
    stack_samples,
    torch_forward,
    train,
    write_log_csv,
)

SMALL = SystemConfig(K=3, L=4, k_max=1, l_max=3, T=4)
ALPHA4 = make_constellation(4).real_alphabet


def _small_batch(seed=0, size=8, cfg=SMALL, p_range=(2, 6)):
    tc = TrainConfig(batch_size=size, p_range=p_range)
    return generate_batch(cfg, tc, np.random.default_rng(seed))


# --- data -----------------------------------------------------------------


def test_batch_shape_and_ranges():
    tc = TrainConfig()
    cfg = SystemConfig()
    batch = generate_batch(cfg, tc, batch_rng(tc, 1, 0))
    assert len(batch) == 256
    assert len({s.P for s in batch}) == 1
    assert 6 <= batch[0].P <= 14
    snrs = np.array([s.snr_db for s in batch])
    assert snrs.min() >= 10 and snrs.max() <= 20
    assert batch[0].model.H.shape == (168, 168)


def test_batch_is_reproducible():
    a = _small_batch(3)
    b = _small_batch(3)
    for sa, sb in zip(a, b):
        np.testing.assert_array_equal(sa.model.H, sb.model.H)
        np.testing.assert_array_equal(sa.model.y, sb.model.y)
    c = _small_batch(4)
    assert not np.array_equal(a[0].model.y, c[0].model.y)


def test_path_count_uniform_over_range():
    tc = TrainConfig(batch_size=1, p_range=(6, 14))
    counts = np.zeros(9)
    for i in range(1800):
        rng = batch_rng(tc, 0, i)
        counts[int(rng.integers(6, 15)) - 6] += 1
    # same draw generate_batch makes first from this generator
    assert generate_batch(SystemConfig(), tc, batch_rng(tc, 0, 0))[0].P == int(
        batch_rng(tc, 0, 0).integers(6, 15)
    )
    assert stats.chisquare(counts).pvalue > 1e-3


def test_p_range_beyond_capacity_rejected():
    with pytest.raises(ConfigError):
        generate_batch(SMALL, TrainConfig(p_range=(2, 50)), np.random.default_rng(0))


def test_validation_set_varies_paths():
    tc = TrainConfig(val_size=60, p_range=(2, 6))
    ps = {s.P for s in _validation_samples(SMALL, tc)}
    assert len(ps) > 1


@pytest.mark.parametrize(
    "kwargs",
    [dict(epochs=0), dict(lr=0.0), dict(plateau_factor=1.0), dict(p_range=(5, 3)), dict(val_size=0),
     dict(snr_range_db=(20.0, 10.0))],
)
def test_train_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


# --- loss -----------------------------------------------------------------


def _identity_model(x_true, y):
    n = len(x_true)
    return RealModel(np.eye(n)[None], np.asarray(y, float)[None], np.array([1e-8]), np.asarray(x_true, float)[None])


def test_loss_zero_for_perfect_recovery():
    a = ALPHA4[1]
    x = np.array([a, -a])
    assert loss(_identity_model(x, x), DetectorParams.ones(3)) == pytest.approx(0.0, abs=1e-12)


def test_loss_squared_error_example():
    # x_true=[1, 0] against an estimate pinned near zero by a symmetric alphabet
    m = RealModel(np.eye(2)[None], np.zeros((1, 2)), np.array([1e-8]), np.array([[1.0, 0.0]]))
    alphabet = np.array([-1.0, 1.0])
    # the identity observation y=0 is equidistant, so the posterior mean is exactly 0
    assert loss(m, DetectorParams.ones(2), alphabet) == pytest.approx(1.0, abs=1e-12)


def test_loss_is_batch_mean():
    batch = _small_batch(1)
    p = DetectorParams.ones(SMALL.T)
    assert loss(batch + batch, p) == pytest.approx(loss(batch, p), rel=1e-12)


def test_loss_matches_detector_errors():
    batch = _small_batch(2)
    m = stack_samples(batch)
    p = DetectorParams.ones(SMALL.T)
    x_hat, _ = detect(m, p, ALPHA4)
    expected = np.sum((x_hat - m.x_true) ** 2) / len(batch)
    assert loss(batch, p) == pytest.approx(expected, rel=1e-12)


# --- torch mirror and gradients -------------------------------------------


def test_torch_forward_matches_numpy_detector():
    rng = np.random.default_rng(9)
    batch = _small_batch(5)
    m = stack_samples(batch)
    p = DetectorParams(rng.uniform(0.5, 1.5, 4), rng.uniform(0.5, 1.5, 4), rng.uniform(0.5, 1.5, 4))
    x_np, _ = detect(m, p, ALPHA4)
    x_t = torch_forward(TorchBatch.from_model(m, ALPHA4), _theta_tensor(p)).detach().numpy()
    np.testing.assert_allclose(x_t, x_np, atol=1e-12)


@pytest.mark.parametrize("seed", [0, 1])
def test_gradient_matches_finite_differences(seed):
    batch = _small_batch(seed)
    rng = np.random.default_rng(seed + 100)
    p = DetectorParams(rng.uniform(0.5, 1.5, 4), rng.uniform(0.5, 1.5, 4), rng.uniform(0.5, 1.5, 4))
    g = grad(batch, p)
    fd = numerical_grad(batch, p)
    assert np.max(gradient_relative_error(g, fd, loss(batch, p))) < 1e-4


def test_second_order_stencil_available():
    batch = _small_batch(0)
    p = DetectorParams.ones(SMALL.T)
    fd2 = numerical_grad(batch, p, step=1e-6, order=2)
    fd4 = numerical_grad(batch, p, step=1e-5, order=4)
    np.testing.assert_allclose(fd2, fd4, rtol=1e-3, atol=1e-7)


def test_last_layer_inactive_when_truncated():
    batch = _small_batch(3)
    p = DetectorParams.ones(SMALL.T)
    m = stack_samples(batch)
    tb = TorchBatch.from_model(m, ALPHA4)
    theta = _theta_tensor(p, requires_grad=True)
    x = torch_forward(tb, theta, layers=SMALL.T - 1)
    torch.sum((x - tb.x_true) ** 2).backward()
    last = theta.grad[:, -1]
    assert torch.all(last == 0)
    assert torch.any(theta.grad[:, :-1] != 0)


def test_truncated_gradient_matches_leading_layers():
    # a two-layer loss depends only on the first two layers' parameters
    batch = _small_batch(4)
    p = DetectorParams.ones(SMALL.T)
    tb = TorchBatch.from_model(stack_samples(batch), ALPHA4)
    theta = _theta_tensor(p, requires_grad=True)
    x = torch_forward(tb, theta, layers=2)
    (torch.sum((x - tb.x_true) ** 2) / len(tb)).backward()
    g_trunc = grad(batch, p.truncated(2)).reshape(3, 2)
    np.testing.assert_allclose(theta.grad[:, :2].numpy(), g_trunc, rtol=1e-10, atol=1e-14)
    assert torch.all(theta.grad[:, 2:] == 0)


# --- scheduler ------------------------------------------------------------


def test_scheduler_halves_after_plateau():
    s = PlateauScheduler(1e-3, 0.5, patience=10)
    assert s.step(1.0) == 1e-3
    for _ in range(9):
        assert s.step(1.0) == 1e-3
    assert s.step(1.0) == pytest.approx(5e-4)
    # counter resets after a reduction
    for _ in range(9):
        assert s.step(1.0) == pytest.approx(5e-4)
    assert s.step(1.0) == pytest.approx(2.5e-4)


def test_scheduler_improvement_resets_count():
    s = PlateauScheduler(1e-3, 0.5, patience=3)
    for metric in [1.0, 1.0, 1.0, 0.9, 0.9, 0.9]:
        s.step(metric)
    assert s.lr == 1e-3
    s.step(0.9)
    assert s.lr == pytest.approx(5e-4)


def test_scheduler_respects_min_lr():
    s = PlateauScheduler(1e-3, 0.1, patience=1, min_lr=5e-5)
    for _ in range(10):
        s.step(1.0)
    assert s.lr == pytest.approx(5e-5)


# --- training loop --------------------------------------------------------

TINY_TRAIN = TrainConfig(epochs=4, batches_per_epoch=3, batch_size=16, lr=5e-2, p_range=(2, 6), val_size=64, seed=11)


@pytest.fixture(scope="module")
def tiny_run():
    return train(SMALL, TINY_TRAIN)


def test_training_log_and_best_checkpoint(tiny_run):
    res = tiny_run
    assert [r.epoch for r in res.log] == [1, 2, 3, 4]
    best = [r.best_val_loss for r in res.log]
    assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
    assert best[-1] <= res.init_val_loss
    assert res.params.T == SMALL.T
    assert np.all(res.params.theta2 >= THETA_FLOOR) and np.all(res.params.theta3 >= THETA_FLOOR)


def test_training_returns_best_params(tiny_run):
    tc = TINY_TRAIN
    val = stack_samples(_validation_samples(SMALL, tc))
    best = min([tiny_run.init_val_loss] + [r.val_loss for r in tiny_run.log])
    assert loss(val, tiny_run.params) == pytest.approx(best, rel=1e-9)


def test_training_is_deterministic(tiny_run):
    again = train(SMALL, TINY_TRAIN)
    np.testing.assert_array_equal(again.params.as_vector(), tiny_run.params.as_vector())


def test_fixed_batch_optimization_reaches_stationarity():
    # theta1 is unconstrained, so its optimum on a fixed batch is an interior
    # stationary point (theta2/theta3 can sit on the positivity boundary)
    batch = _small_batch(7, size=64)
    tb = TorchBatch.from_model(stack_samples(batch), ALPHA4)
    t1 = torch.ones(SMALL.T, dtype=torch.float64, requires_grad=True)
    rest = torch.ones(2, SMALL.T, dtype=torch.float64)
    opt = torch.optim.LBFGS([t1], max_iter=200, line_search_fn="strong_wolfe",
                            tolerance_grad=1e-12, tolerance_change=1e-16)

    def closure():
        opt.zero_grad()
        val = torch.sum((torch_forward(tb, torch.cat([t1[None], rest])) - tb.x_true) ** 2) / len(tb)
        val.backward()
        return val

    ones = np.ones(SMALL.T)
    g0 = np.linalg.norm(grad(batch, DetectorParams.ones(SMALL.T))[: SMALL.T])
    opt.step(closure)
    t = t1.detach().numpy()
    best = DetectorParams(t, ones, ones)
    assert loss(batch, best) < loss(batch, DetectorParams.ones(SMALL.T))
    assert np.linalg.norm(grad(batch, best)[: SMALL.T]) < 1e-4 * g0


def test_log_csv(tmp_path, tiny_run):
    path = tmp_path / "log.csv"
    write_log_csv(path, tiny_run.log)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,lr"
    assert len(lines) == 1 + len(tiny_run.log)


# --- parameter files ------------------------------------------------------


def test_params_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    p = DetectorParams(rng.normal(size=5), rng.uniform(0.1, 2, 5), rng.uniform(0.1, 2, 5))
    path = tmp_path / "p.json"
    save_params(p, path, metadata={"note": "x"})
    q = load_params(path, T=5)
    np.testing.assert_array_equal(q.as_vector(), p.as_vector())


def _write(tmp_path, doc):
    path = tmp_path / "bad.json"
    path.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return path


def test_params_layer_mismatch(tmp_path):
    path = tmp_path / "p.json"
    save_params(DetectorParams.ones(10), path)
    with pytest.raises(FormatError, match="'T'"):
        load_params(path, T=8)


def test_params_nonpositive_theta2(tmp_path):
    path = _write(tmp_path, {"T": 2, "theta1": [1, 1], "theta2": [1, 0], "theta3": [1, 1]})
    with pytest.raises(FormatError, match="theta2"):
        load_params(path)


@pytest.mark.parametrize(
    "doc, field",
    [
        ("{not json", "JSON"),
        ({"theta1": [1], "theta2": [1], "theta3": [1]}, "'T'"),
        ({"T": 2, "theta1": [1], "theta2": [1, 1], "theta3": [1, 1]}, "theta1"),
        ({"T": 1, "theta1": [1], "theta2": ["a"], "theta3": [1]}, "theta2"),
        ([1, 2, 3], "object"),
    ],
)
def test_params_malformed(tmp_path, doc, field):
    with pytest.raises(FormatError, match=field):
        load_params(_write(tmp_path, doc))
