"""RMSE scoring, the month-split experiment protocols, and artifacts.

An experiment trains each requested model on the training months, then
rolls one-step-ahead predictions through the test month.  Every
prediction consults actual observed history only; model outputs are
never fed back in.  Reported curves and RMSE figures are averaged across
grid cells per interval and stated in de-normalized vehicle counts.

Protocols are named after the amount of training data: "4a" trains on
every month before the test month, "4b" only on the single month
immediately before it.  The test month is always the last month of the
series.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .lstm import LstmConfig, LstmModel
from .model import DeepTfpConfig, DeepTfpModel
from .series import (Dataset, DataError, FlowSeries, WindowConfig,
                     format_timestamp, split_by_month)
from .train import TrainConfig, train

MODEL_NAMES = ("deeptfp", "lstm", "persistence")

SERIES_COLORS = {
    "actual": "#222222",
    "deeptfp": "#d62728",
    "lstm": "#1f77b4",
    "persistence": "#7f7f7f",
}


def rmse(actual, predicted) -> float:
    a = np.asarray(actual, dtype=float).ravel()
    p = np.asarray(predicted, dtype=float).ravel()
    if a.shape != p.shape:
        raise DataError(f"rmse: length mismatch, {a.size} vs {p.size}")
    if a.size == 0:
        raise DataError("rmse: empty sequences")
    return float(np.sqrt(np.mean((p - a) ** 2)))


@dataclass(frozen=True)
class Protocol:
    name: str
    train_months: tuple
    test_month: str


def months_of(series: FlowSeries) -> list:
    seen = []
    for t in range(1, series.n + 1):
        m = series.month_of(t)
        if not seen or seen[-1] != m:
            seen.append(m)
    return seen


def protocol_by_name(series: FlowSeries, name: str) -> Protocol:
    months = months_of(series)
    if len(months) < 3:
        raise DataError(
            f"protocols need at least 3 months of data, series has {months}")
    if name == "4a":
        return Protocol("4a", tuple(months[:-1]), months[-1])
    if name == "4b":
        return Protocol("4b", (months[-2],), months[-1])
    raise DataError(f"unknown protocol {name!r}, expected 4a or 4b")


@dataclass(frozen=True)
class ExperimentConfig:
    """Model sizes and training budget shared by every experiment run."""

    windows: WindowConfig = field(default_factory=WindowConfig)
    feature_maps: int = 8
    residual_units: int = 2
    kernel_size: int = 3
    ar_order: int = 3
    hidden: int = 16
    training: TrainConfig = field(default_factory=lambda: TrainConfig(
        optimizer="adam", learning_rate=0.003, max_epochs=12, patience=4))
    seed: int = 0


@dataclass
class EvalReport:
    name: str
    timestamps: list          # ISO-8601, one per test interval
    actual: np.ndarray        # road-averaged actual counts
    predictions: dict         # model name -> road-averaged predictions
    rmse_by_model: dict       # model name -> float
    config_digest: str

    def recomputed_rmse(self, model: str) -> float:
        return rmse(self.actual, self.predictions[model])


def _config_digest(protocol: Protocol, config: ExperimentConfig, models) -> str:
    wc = config.windows
    tc = config.training
    blob = json.dumps({
        "protocol": protocol.name,
        "train_months": list(protocol.train_months),
        "test_month": protocol.test_month,
        "models": list(models),
        "windows": [wc.closeness_len, wc.period_len, wc.trend_len,
                    wc.period_stride, wc.trend_stride],
        "feature_maps": config.feature_maps,
        "residual_units": config.residual_units,
        "kernel_size": config.kernel_size,
        "ar_order": config.ar_order,
        "hidden": config.hidden,
        "training": [tc.optimizer, tc.learning_rate, tc.max_epochs, tc.patience,
                     tc.batch_size, tc.clip_norm, tc.val_fraction, tc.seed],
        "seed": config.seed,
    }, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _build_model(name: str, rows: int, cols: int, config: ExperimentConfig):
    if name == "deeptfp":
        return DeepTfpModel(DeepTfpConfig(
            rows=rows, cols=cols, windows=config.windows,
            feature_maps=config.feature_maps,
            residual_units=config.residual_units,
            kernel_size=config.kernel_size, ar_order=config.ar_order))
    return LstmModel(LstmConfig(rows=rows, cols=cols, windows=config.windows,
                                hidden=config.hidden))


def _road_average(frames: np.ndarray) -> np.ndarray:
    return frames.mean(axis=(1, 2))


def run_experiment(series: FlowSeries, protocol: Protocol,
                   models=MODEL_NAMES, config: ExperimentConfig = None,
                   run_dir=None) -> EvalReport:
    """Train, predict the test month one step ahead, aggregate RMSE.

    With run_dir set, each trained model writes its checkpoints and
    epoch report under `<run_dir>/<protocol>-<model>/`.
    """
    config = config or ExperimentConfig()
    for name in models:
        if name not in MODEL_NAMES:
            raise DataError(f"unknown model {name!r}, expected one of {MODEL_NAMES}")
    if "persistence" not in models:
        # The no-training reference is part of every report.
        models = tuple(models) + ("persistence",)
    train_ds, test_ds = split_by_month(series, config.windows,
                                       list(protocol.train_months),
                                       protocol.test_month)
    if not test_ds.instances:
        raise DataError(f"no usable targets in test month {protocol.test_month}")
    ts = np.array([inst.t for inst in test_ds.instances], dtype=np.int64)
    actual_raw = series.frames[ts - 1]

    predictions = {}
    rmse_by_model = {}
    avg_actual = _road_average(actual_raw)
    for name in models:
        if name == "persistence":
            pred_raw = series.frames[ts - 2]
        else:
            model = _build_model(name, series.frames.shape[1],
                                 series.frames.shape[2], config)
            model.init_parameters(seed=config.seed)
            sub_dir = None if run_dir is None else (
                Path(run_dir) / f"{protocol.name}-{name}")
            training = replace(config.training, seed=config.seed)
            report = train(model, train_ds, training, run_dir=sub_dir)
            if sub_dir is not None:
                report.save_csv(sub_dir / "train-report.csv")
            pred_raw = test_ds.normalizer.inverse(model.predict_frames(test_ds, ts))
        avg_pred = _road_average(pred_raw)
        predictions[name] = avg_pred
        rmse_by_model[name] = rmse(avg_actual, avg_pred)

    timestamps = [format_timestamp(inst.timestamp) for inst in test_ds.instances]
    return EvalReport(name=protocol.name, timestamps=timestamps,
                      actual=avg_actual, predictions=predictions,
                      rmse_by_model=rmse_by_model,
                      config_digest=_config_digest(protocol, config, models))


def _svg_polyline(xs, ys, color: str) -> str:
    points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    return (f'<polyline fill="none" stroke="{color}" stroke-width="1" '
            f'points="{points}"/>')


def render_comparison_svg(report: EvalReport) -> str:
    """Road-averaged actual and per-model curves over the test month."""
    width, height = 960, 420
    left, right, top, bottom = 64, 16, 20, 44
    plot_w, plot_h = width - left - right, height - top - bottom
    curves = [("actual", report.actual)]
    curves += [(name, report.predictions[name]) for name in report.predictions]
    lo = min(float(np.min(v)) for _, v in curves)
    hi = max(float(np.max(v)) for _, v in curves)
    if hi <= lo:
        hi = lo + 1.0
    n = len(report.actual)
    xs = left + np.arange(n) / max(n - 1, 1) * plot_w

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" '
        'stroke="#444" stroke-width="1"/>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" '
        f'y2="{top + plot_h}" stroke="#444" stroke-width="1"/>',
    ]
    for k in range(5):
        value = lo + (hi - lo) * k / 4
        y = top + plot_h * (1.0 - k / 4)
        parts.append(f'<text x="{left - 8}" y="{y + 4:.0f}" font-size="11" '
                     f'text-anchor="end" fill="#444">{value:.0f}</text>')
        if k:
            parts.append(f'<line x1="{left}" y1="{y:.1f}" x2="{left + plot_w}" '
                         f'y2="{y:.1f}" stroke="#ddd" stroke-width="0.5"/>')
    for frac, label in ((0.0, report.timestamps[0]), (1.0, report.timestamps[-1])):
        x = left + frac * plot_w
        anchor = "start" if frac == 0.0 else "end"
        parts.append(f'<text x="{x:.0f}" y="{height - 26}" font-size="11" '
                     f'text-anchor="{anchor}" fill="#444">{label}</text>')
    parts.append(f'<text x="{left}" y="{height - 8}" font-size="11" '
                 f'fill="#444">mean flow per road, {report.name}: '
                 f'{", ".join(f"{m} rmse {v:.2f}" for m, v in report.rmse_by_model.items())}'
                 '</text>')

    palette_fallback = ["#2ca02c", "#9467bd", "#8c564b"]
    legend_x = left + 12
    for idx, (name, values) in enumerate(curves):
        color = SERIES_COLORS.get(name)
        if color is None:
            color = palette_fallback[idx % len(palette_fallback)]
        ys = top + (1.0 - (np.asarray(values) - lo) / (hi - lo)) * plot_h
        parts.append(_svg_polyline(xs, ys, color))
        ly = top + 14 + 14 * idx
        parts.append(f'<line x1="{legend_x}" y1="{ly - 4}" x2="{legend_x + 18}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{legend_x + 24}" y="{ly}" font-size="11" '
                     f'fill="#222">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def emit_artifacts(report: EvalReport, out_dir) -> None:
    """report.csv, summary.csv, comparison.svg under out_dir.

    Floats are written with repr so every figure can be recomputed from
    the files without loss.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = list(report.predictions)

    lines = ["timestamp,actual," + ",".join(names)]
    for i, stamp in enumerate(report.timestamps):
        row = [stamp, repr(float(report.actual[i]))]
        row += [repr(float(report.predictions[name][i])) for name in names]
        lines.append(",".join(row))
    (out / "report.csv").write_text("\n".join(lines) + "\n")

    lines = ["model,rmse"]
    for name in names:
        lines.append(f"{name},{repr(report.rmse_by_model[name])}")
    (out / "summary.csv").write_text("\n".join(lines) + "\n")

    (out / "comparison.svg").write_text(render_comparison_svg(report))
