import numpy as np
import pytest

from deeptfp.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from deeptfp.lstm import LstmConfig, LstmModel
from deeptfp.model import DeepTfpConfig, DeepTfpModel
from deeptfp.series import WindowConfig

WC = WindowConfig(closeness_len=2, period_len=2, trend_len=2,
                  period_stride=4, trend_stride=8)


def make_deeptfp(seed=5):
    model = DeepTfpModel(DeepTfpConfig(rows=3, cols=4, windows=WC,
                                       feature_maps=3, residual_units=1,
                                       ar_order=2))
    model.init_parameters(seed=seed)
    return model


def test_round_trip_is_bit_exact(tmp_path):
    model = make_deeptfp()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model)
    loaded = load_checkpoint(path)
    assert loaded.kind == "deeptfp"
    assert loaded.config == model.config
    for (name_a, a), (name_b, b) in zip(model.parameters(), loaded.parameters()):
        assert name_a == name_b
        np.testing.assert_array_equal(a.data, b.data)


def test_lstm_round_trip(tmp_path):
    model = LstmModel(LstmConfig(rows=2, cols=2, windows=WC, hidden=5))
    model.init_parameters(seed=1)
    path = tmp_path / "lstm.ckpt"
    save_checkpoint(path, model)
    loaded = load_checkpoint(path)
    assert loaded.kind == "lstm"
    assert loaded.config == model.config
    for (_, a), (_, b) in zip(model.parameters(), loaded.parameters()):
        np.testing.assert_array_equal(a.data, b.data)


def test_rewrite_is_byte_identical(tmp_path):
    model = make_deeptfp()
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(a, model)
    save_checkpoint(b, model)
    assert a.read_bytes() == b.read_bytes()


def test_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"definitely not a checkpoint")
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(path)


def test_rejects_future_version(tmp_path):
    model = make_deeptfp()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model)
    raw = bytearray(path.read_bytes())
    raw[8] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_rejects_truncation(tmp_path):
    model = make_deeptfp()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model)
    raw = path.read_bytes()
    path.write_bytes(raw[:-16])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_rejects_trailing_garbage(tmp_path):
    model = make_deeptfp()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model)
    path.write_bytes(path.read_bytes() + b"\x00" * 8)
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path)


def test_loaded_model_predicts_identically(tmp_path):
    from deeptfp.series import FlowSeries, Normalizer, build_instances

    rng = np.random.default_rng(8)
    frames = rng.uniform(0.0, 80.0, size=(40, 3, 4)).round()
    series = FlowSeries(frames=frames, start_timestamp=1696118400)
    ds = build_instances(series, WC, normalizer=Normalizer.fit(frames))
    model = make_deeptfp()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model)
    loaded = load_checkpoint(path)
    ts = list(range(model.min_valid_t(), model.min_valid_t() + 4))
    np.testing.assert_array_equal(loaded.predict_frames(ds, ts),
                                  model.predict_frames(ds, ts))
