"""Command-line entry point.

Subcommands: datagen, train, predict, experiment.  Exit codes: 0 on
success, 2 for configuration problems, 3 for data problems, 4 for a
training abort, 5 when a prediction lacks history.  Set DEEPTFP_LOG to
debug or quiet to change verbosity; logs go to stderr, data to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, help_text, parse_config_file
from .datagen import export_csv, generate
from .evaluate import (ExperimentConfig, emit_artifacts, protocol_by_name,
                       run_experiment)
from .lstm import LstmModel
from .model import DeepTfpModel
from .series import (Dataset, DataError, Normalizer, build_instances,
                     format_timestamp, load_csv, parse_timestamp)
from .train import TrainConfig, TrainingError, train

log = logging.getLogger("deeptfp")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAINING = 4
EXIT_HISTORY = 5


class HistoryError(Exception):
    """A requested prediction reaches before the usable history."""


def _setup_logging() -> None:
    level = {"debug": logging.DEBUG, "quiet": logging.WARNING}.get(
        os.environ.get("DEEPTFP_LOG", ""), logging.INFO)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(message)s")


def _run_config(args) -> RunConfig:
    file_values = parse_config_file(args.config) if args.config else {}
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return RunConfig(file_values, overrides)


def _load_series(args):
    try:
        return load_csv(args.data, args.gridmap)
    except OSError as exc:
        raise DataError(str(exc)) from exc


def cmd_datagen(args) -> int:
    config = _run_config(args)
    series, grid = generate(config.city())
    flows, gridmap = export_csv(series, grid, args.out)
    log.info("wrote %s and %s (%d frames of %dx%d)", flows, gridmap,
             series.n, series.frames.shape[1], series.frames.shape[2])
    return EXIT_OK


def _build_model(kind: str, config: RunConfig, rows: int, cols: int):
    if kind == "deeptfp":
        return DeepTfpModel(config.deeptfp(rows, cols))
    return LstmModel(config.lstm(rows, cols))


def cmd_train(args) -> int:
    config = _run_config(args)
    series, _ = _load_series(args)
    rows, cols = series.frames.shape[1], series.frames.shape[2]
    model = _build_model(args.model, config, rows, cols)
    dataset = build_instances(series, config.windows(),
                              normalizer=Normalizer.fit(series.frames),
                              tag="train")
    model.init_parameters(seed=config["seed"])
    run_dir = Path(args.out_run)
    run_dir.mkdir(parents=True, exist_ok=True)
    report = train(model, dataset, config.training(), run_dir=run_dir)
    report.save_csv(run_dir / "train-report.csv")
    if not (run_dir / "best.ckpt").exists():
        save_checkpoint(run_dir / "best.ckpt", model)
    with open(run_dir / "normalizer.json", "w") as fh:
        json.dump({"lo": dataset.normalizer.lo, "hi": dataset.normalizer.hi}, fh)
        fh.write("\n")
    if report.rows:
        log.info("trained %s for %d epochs, best val rmse %.4f at epoch %d",
                 args.model, len(report.rows), report.best_val_rmse,
                 report.best_epoch)
    else:
        log.info("zero-epoch run; wrote the initialized model")
    return EXIT_OK


def cmd_predict(args) -> int:
    run_dir = Path(args.run)
    try:
        model = load_checkpoint(run_dir / "best.ckpt")
        with open(run_dir / "normalizer.json") as fh:
            stored = json.load(fh)
        normalizer = Normalizer(lo=float(stored["lo"]), hi=float(stored["hi"]))
    except OSError as exc:
        raise DataError(f"cannot read run directory {run_dir}: {exc}") from exc
    series, grid = _load_series(args)
    try:
        at = parse_timestamp(args.at)
        t = series.t_of_timestamp(at)
    except DataError as exc:
        raise ConfigError(f"--at {args.at}: {exc}") from exc

    if t < model.min_valid_t():
        earliest = format_timestamp(series.timestamp_of(model.min_valid_t()))
        raise HistoryError(
            f"target {args.at} needs history before the series start; "
            f"earliest predictable interval is {earliest}")
    if t > series.n + 1:
        last = format_timestamp(series.timestamp_of(series.n))
        raise HistoryError(
            f"target {args.at} lies beyond the observed history, which "
            f"ends at {last}; only the next unseen interval can be predicted")

    frames = normalizer.transform(series.frames)
    frames.setflags(write=False)
    dataset = Dataset(instances=[], frames=frames, normalizer=normalizer,
                      windows=model.config.windows,
                      start_timestamp=series.start_timestamp,
                      interval_minutes=series.interval_minutes, tag="predict")
    predicted = normalizer.inverse(model.predict_frames(dataset, [t])[0])

    roads = grid.road_ids()
    lines = ["road_id,flow"]
    for road_id in roads:
        r, c = grid.cells[road_id]
        lines.append(f"{road_id},{float(predicted[r, c])!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        log.info("wrote %s (%d roads) for %s", args.out, len(roads), args.at)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_experiment(args) -> int:
    config = _run_config(args)
    series, _ = _load_series(args)
    protocol = protocol_by_name(series, args.protocol)
    base = ExperimentConfig()
    experiment = ExperimentConfig(
        windows=config.windows(),
        feature_maps=config["feature_maps"],
        residual_units=config["residual_units"],
        kernel_size=config["kernel_size"],
        ar_order=config["ar_order"],
        hidden=config["hidden"],
        training=config.training(base.training),
        seed=config["seed"])
    out = Path(args.out)
    report = run_experiment(series, protocol, config=experiment,
                            run_dir=out / "runs")
    emit_artifacts(report, out)
    for name, value in report.rmse_by_model.items():
        log.info("%s %s rmse: %.4f", protocol.name, name, value)
    log.info("artifacts in %s (config digest %s)", out, report.config_digest)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deeptfp",
        description="Citywide traffic-flow prediction: synthetic data, "
                    "training, prediction, and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, description):
        p = sub.add_parser(name, description=description, epilog=help_text(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(func=func)
        return p

    p = add("datagen", cmd_datagen, "Generate a synthetic city as CSV files.")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")

    p = add("train", cmd_train, "Train a model on a flow CSV.")
    p.add_argument("--data", required=True, help="flows.csv path")
    p.add_argument("--gridmap", required=True, help="gridmap.csv path")
    p.add_argument("--model", choices=("deeptfp", "lstm"), default="deeptfp")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out-run", required=True, help="run directory for "
                   "checkpoints, train-report.csv, and normalizer.json")
    p.add_argument("--seed", type=int, help="override the config seed")

    p = add("predict", cmd_predict, "Predict one interval from a trained run.")
    p.add_argument("--run", required=True, help="run directory from train")
    p.add_argument("--data", required=True, help="flows.csv path")
    p.add_argument("--gridmap", required=True, help="gridmap.csv path")
    p.add_argument("--at", required=True,
                   help="ISO-8601 UTC timestamp of the interval to predict; "
                        "only observations before it are consulted")
    p.add_argument("--out", help="write the per-road CSV here instead of stdout")

    p = add("experiment", cmd_experiment,
            "Train deeptfp and lstm, score them and persistence on the "
            "held-out month, and emit report.csv, summary.csv, comparison.svg.")
    p.add_argument("--data", required=True, help="flows.csv path")
    p.add_argument("--gridmap", required=True, help="gridmap.csv path")
    p.add_argument("--protocol", required=True, choices=("4a", "4b"),
                   help="4a trains on all months before the last; "
                        "4b only on the month immediately before it")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except TrainingError as exc:
        log.error("%s", exc)
        return EXIT_TRAINING
    except HistoryError as exc:
        log.error("%s", exc)
        return EXIT_HISTORY
    except (DataError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
