"""Line-oriented run configuration.

A config file holds `key = value` lines; blank lines and lines starting
with `#` are ignored.  Command-line flags override file values.  Every
key has a typed default below, and anything not in the table is
rejected, so a typo fails fast instead of silently using a default.
"""

from __future__ import annotations

from dataclasses import replace

from .datagen import CityConfig
from .lstm import LstmConfig
from .model import DeepTfpConfig
from .series import DataError, WindowConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


# key -> (type, default, description)
KEYS = {
    # synthetic city
    "rows": (int, 16, "grid rows"),
    "cols": (int, 16, "grid columns"),
    "roads": (int, 0, "road count; 0 places one road per cell"),
    "months": (int, 3, "whole calendar months to generate"),
    "start": (str, "2023-10-01", "first day, UTC"),
    "interval_minutes": (int, 15, "minutes per interval"),
    "base_flow": (float, 120.0, "mean vehicle count per interval"),
    "weekend_factor": (float, 0.75, "weekend flow multiplier"),
    "diffusion": (float, 0.15, "spatial smoothing strength, 0 to 0.25"),
    "incident_rate": (float, 0.002, "incident starts per cell per interval"),
    "incident_depth": (float, 0.5, "flow multiplied by (1 - depth) during incidents"),
    "incident_duration": (float, 8.0, "mean incident length in intervals"),
    "noise": (float, 4.0, "count noise standard deviation"),
    # lookback windows
    "closeness_len": (int, 3, "recent consecutive frames per instance"),
    "period_len": (int, 2, "daily-stride frames per instance"),
    "trend_len": (int, 2, "weekly-stride frames per instance"),
    "period_stride": (int, 96, "intervals per period step"),
    "trend_stride": (int, 672, "intervals per trend step"),
    # model sizes
    "feature_maps": (int, 8, "channels inside each branch"),
    "residual_units": (int, 2, "residual units per branch"),
    "kernel_size": (int, 3, "square convolution size, odd"),
    "ar_order": (int, 3, "fused estimates combined by the prediction head"),
    "hidden": (int, 16, "LSTM hidden width"),
    # training
    "optimizer": (str, "sgd", "sgd or adam"),
    "learning_rate": (float, 0.01, "step size"),
    "max_epochs": (int, 200, "epoch budget"),
    "patience": (int, 10, "epochs without validation improvement before stopping"),
    "batch_size": (int, 32, "instances per update"),
    "clip_norm": (float, 5.0, "global gradient norm ceiling"),
    "val_fraction": (float, 0.1, "trailing share of instances held out for validation"),
    "seed": (int, 0, "seed for generation, initialization, and batching"),
}

_TRAINING_KEYS = ("optimizer", "learning_rate", "max_epochs", "patience",
                  "batch_size", "clip_norm", "val_fraction")


def parse_config_file(path) -> dict:
    """Raw key -> string values; duplicate and malformed lines rejected."""
    values = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    for number, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{number}: expected 'key = value', got {text!r}")
        key, _, value = text.partition("=")
        key, value = key.strip(), value.strip()
        if key in values:
            raise ConfigError(f"{path}:{number}: duplicate key {key!r}")
        values[key] = value
    return values


def _convert(key: str, raw):
    kind = KEYS[key][0]
    if isinstance(raw, kind):
        return raw
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"key {key!r} expects {kind.__name__}, got {raw!r}")


class RunConfig:
    """Typed key table with the set of explicitly assigned keys.

    Tracking assignment lets a subcommand swap in its own training
    defaults while still honoring anything the user wrote down.
    """

    def __init__(self, file_values: dict = None, overrides: dict = None):
        self.values = {key: default for key, (_, default, _) in KEYS.items()}
        self.assigned = set()
        for source in (file_values or {}), (overrides or {}):
            for key, raw in source.items():
                if key not in KEYS:
                    raise ConfigError(f"unknown config key {key!r}")
                self.values[key] = _convert(key, raw)
                self.assigned.add(key)

    def __getitem__(self, key: str):
        return self.values[key]

    def was_set(self, key: str) -> bool:
        return key in self.assigned

    def windows(self) -> WindowConfig:
        return self._build(WindowConfig,
                           closeness_len=self["closeness_len"],
                           period_len=self["period_len"],
                           trend_len=self["trend_len"],
                           period_stride=self["period_stride"],
                           trend_stride=self["trend_stride"])

    def city(self) -> CityConfig:
        return self._build(CityConfig,
                           rows=self["rows"], cols=self["cols"],
                           roads=self["roads"], months=self["months"],
                           start=self["start"],
                           interval_minutes=self["interval_minutes"],
                           seed=self["seed"], base_flow=self["base_flow"],
                           weekend_factor=self["weekend_factor"],
                           diffusion=self["diffusion"],
                           incident_rate=self["incident_rate"],
                           incident_depth=self["incident_depth"],
                           incident_duration=self["incident_duration"],
                           noise=self["noise"])

    def deeptfp(self, rows: int, cols: int) -> DeepTfpConfig:
        return self._build(DeepTfpConfig, rows=rows, cols=cols,
                           windows=self.windows(),
                           feature_maps=self["feature_maps"],
                           residual_units=self["residual_units"],
                           kernel_size=self["kernel_size"],
                           ar_order=self["ar_order"])

    def lstm(self, rows: int, cols: int) -> LstmConfig:
        return self._build(LstmConfig, rows=rows, cols=cols,
                           windows=self.windows(), hidden=self["hidden"])

    def training(self, base: TrainConfig = None) -> TrainConfig:
        """The given preset, with explicitly set keys layered on top."""
        config = base or TrainConfig()
        changed = {key: self[key] for key in _TRAINING_KEYS if self.was_set(key)}
        changed["seed"] = self["seed"]
        try:
            return replace(config, **changed)
        except DataError as exc:
            raise ConfigError(str(exc)) from exc

    @staticmethod
    def _build(factory, **kwargs):
        # Range checks live in the dataclasses; surface them as config errors.
        try:
            return factory(**kwargs)
        except DataError as exc:
            raise ConfigError(str(exc)) from exc


def help_text() -> str:
    lines = ["config keys (key = value per line, # comments):"]
    for key, (kind, default, description) in KEYS.items():
        lines.append(f"  {key} = {default}  ({kind.__name__}) {description}")
    return "\n".join(lines)
