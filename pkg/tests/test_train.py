import numpy as np
import pytest

from deeptfp.checkpoint import load_checkpoint
from deeptfp.lstm import LstmConfig, LstmModel
from deeptfp.model import DeepTfpConfig, DeepTfpModel
from deeptfp.series import (DataError, FlowSeries, Normalizer, WindowConfig,
                            build_instances)
from deeptfp.tensor import Tensor
from deeptfp.train import (TrainConfig, TrainingError, TrainReport, _Adam,
                           _clip_gradients, _Sgd, train)
from helpers import AR_WC, ar2_dataset, frozen_ar_probe_model, trained_head
from reference import ar_least_squares

SMALL_WC = WindowConfig(closeness_len=2, period_len=2, trend_len=2,
                        period_stride=4, trend_stride=8)


def small_dataset(n=60, rows=4, cols=4, seed=11, tag=""):
    rng = np.random.default_rng(seed)
    frames = rng.uniform(0.0, 100.0, size=(n, rows, cols)).round()
    series = FlowSeries(frames=frames, start_timestamp=1696118400)
    return build_instances(series, SMALL_WC, normalizer=Normalizer.fit(frames),
                           tag=tag)


def small_model(seed=7):
    cfg = DeepTfpConfig(rows=4, cols=4, windows=SMALL_WC, feature_maps=3,
                        residual_units=1, ar_order=2)
    model = DeepTfpModel(cfg)
    model.init_parameters(seed=seed)
    return model


def grad_stub(values):
    params = []
    for i, v in enumerate(values):
        p = Tensor(np.asarray(v, dtype=float), requires_grad=True)
        params.append((f"p{i}", p))
    return params


def test_sgd_step():
    params = grad_stub([np.array([1.0, 2.0])])
    params[0][1].grad[:] = np.array([0.5, -1.0])
    _Sgd(params, lr=0.1).step()
    np.testing.assert_allclose(params[0][1].data, [0.95, 2.1], atol=1e-15)


def test_adam_first_step_is_lr_sized():
    # After bias correction the first update is lr * g / (|g| + eps).
    params = grad_stub([np.array([1.0, 1.0])])
    params[0][1].grad[:] = np.array([3.0, -0.001])
    _Adam(params, lr=0.1).step()
    np.testing.assert_allclose(params[0][1].data, [0.9, 1.1], rtol=1e-4)


def test_adam_matches_reference_updates():
    rng = np.random.default_rng(0)
    params = grad_stub([rng.standard_normal(4)])
    opt = _Adam(params, lr=0.05)
    m = np.zeros(4)
    v = np.zeros(4)
    expect = params[0][1].data.copy()
    for t in range(1, 6):
        g = rng.standard_normal(4)
        params[0][1].grad[:] = g
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        expect = expect - 0.05 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        np.testing.assert_allclose(params[0][1].data, expect, atol=1e-12)


def test_clip_rescales_to_global_norm():
    params = grad_stub([np.array([3.0]), np.array([4.0])])
    params[0][1].grad[:] = 3.0
    params[1][1].grad[:] = 4.0
    _clip_gradients(params, max_norm=1.0)
    total = sum(float(np.sum(p.grad ** 2)) for _, p in params)
    np.testing.assert_allclose(np.sqrt(total), 1.0, atol=1e-12)
    np.testing.assert_allclose(params[0][1].grad, [0.6], atol=1e-12)


def test_clip_leaves_small_gradients_alone():
    params = grad_stub([np.array([0.1])])
    params[0][1].grad[:] = 0.1
    _clip_gradients(params, max_norm=5.0)
    np.testing.assert_array_equal(params[0][1].grad, [0.1])


def test_config_validation():
    with pytest.raises(DataError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(DataError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(DataError):
        TrainConfig(val_fraction=1.0)


def test_ar_recovery_matches_least_squares():
    ds = ar2_dataset()
    model = frozen_ar_probe_model()
    config = TrainConfig(optimizer="sgd", learning_rate=0.3, max_epochs=400,
                         patience=30, batch_size=512, seed=0)
    train(model, ds, config)
    theta_hat, c_hat = trained_head(model)

    n = ds.frames.shape[0]
    ts = np.arange(model.min_valid_t(), n + 1)
    n_val = int(round(config.val_fraction * len(ts)))
    train_ts = ts[:-n_val]
    window = ds.frames[train_ts[0] - 3:train_ts[-1], 0, 0]
    theta_star, c_star = ar_least_squares(window, order=2)
    assert np.abs(theta_hat - theta_star).max() < 1e-2
    assert abs(c_hat - c_star) < 1e-2


def test_loss_decreases():
    ds = small_dataset()
    model = small_model()
    config = TrainConfig(optimizer="adam", learning_rate=0.01, max_epochs=5,
                         patience=10, batch_size=16, seed=1)
    report = train(model, ds, config)
    assert len(report.rows) == 5
    assert report.rows[-1][1] < report.rows[0][1]


def test_lstm_trains_through_same_loop():
    ds = small_dataset()
    model = LstmModel(LstmConfig(rows=4, cols=4, windows=SMALL_WC, hidden=4))
    model.init_parameters(seed=2)
    config = TrainConfig(optimizer="adam", learning_rate=0.01, max_epochs=3,
                         patience=10, batch_size=16, seed=1)
    report = train(model, ds, config)
    assert report.rows[-1][1] < report.rows[0][1]


def test_training_is_deterministic():
    runs = []
    for _ in range(2):
        ds = small_dataset()
        model = small_model()
        config = TrainConfig(optimizer="sgd", learning_rate=0.05, max_epochs=3,
                             patience=10, batch_size=16, seed=5)
        report = train(model, ds, config)
        runs.append((report.rows, [p.data.copy() for _, p in model.parameters()]))
    assert runs[0][0] == runs[1][0]
    for a, b in zip(runs[0][1], runs[1][1]):
        np.testing.assert_array_equal(a, b)


def test_zero_epochs_changes_nothing():
    ds = small_dataset()
    model = small_model()
    before = [p.data.copy() for _, p in model.parameters()]
    report = train(model, ds, TrainConfig(max_epochs=0))
    assert report.rows == [] and report.best_epoch == 0
    assert np.isnan(report.best_val_rmse)
    for (_, p), old in zip(model.parameters(), before):
        np.testing.assert_array_equal(p.data, old)


def test_divergence_aborts_with_diagnostic():
    ds = small_dataset()
    model = small_model()
    config = TrainConfig(optimizer="sgd", learning_rate=1e12, max_epochs=50,
                         patience=50, batch_size=16, seed=0, clip_norm=1e30)
    with pytest.raises(TrainingError, match="learning rate"):
        train(model, ds, config)


def test_refuses_instances_tagged_test():
    ds = small_dataset(tag="test")
    with pytest.raises(TrainingError, match="test"):
        train(small_model(), ds, TrainConfig(max_epochs=1))


def test_checkpoints_track_epochs_and_best(tmp_path):
    ds = small_dataset()
    model = small_model()
    config = TrainConfig(optimizer="adam", learning_rate=0.01, max_epochs=3,
                         patience=10, batch_size=16, seed=1)
    report = train(model, ds, config, run_dir=tmp_path / "run")
    for epoch, _, _ in report.rows:
        assert (tmp_path / "run" / f"epoch-{epoch}.ckpt").exists()
    best = load_checkpoint(tmp_path / "run" / "best.ckpt")
    for (_, a), (_, b) in zip(model.parameters(), best.parameters()):
        np.testing.assert_array_equal(a.data, b.data)


def test_early_stop_restores_best(tmp_path):
    # A small validation slice can favor an early epoch; the returned
    # parameters must be that epoch's, not the last one trained.
    ds = ar2_dataset(n=160)
    model = frozen_ar_probe_model()
    config = TrainConfig(optimizer="sgd", learning_rate=0.3, max_epochs=60,
                         patience=5, batch_size=512, seed=0)
    report = train(model, ds, config, run_dir=tmp_path)
    assert report.best_epoch < len(report.rows)
    assert len(report.rows) == report.best_epoch + config.patience
    snapshot = load_checkpoint(tmp_path / f"epoch-{report.best_epoch}.ckpt")
    for (_, a), (_, b) in zip(model.parameters(), snapshot.parameters()):
        np.testing.assert_array_equal(a.data, b.data)
    vals = [row[2] for row in report.rows]
    assert report.best_val_rmse == min(vals)
    assert vals.index(min(vals)) + 1 == report.best_epoch


def test_report_csv_round_trips(tmp_path):
    report = TrainReport(rows=[(1, 0.5, 1.25), (2, 0.25, 1.125)],
                         best_epoch=2, best_val_rmse=1.125)
    path = tmp_path / "report.csv"
    report.save_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "epoch,train_loss,val_rmse"
    assert lines[1] == "1,0.5,1.25"
    parsed = [line.split(",") for line in lines[1:]]
    assert [(int(e), float(l), float(v)) for e, l, v in parsed] == report.rows
