"""Flow series storage, CSV ingestion, and training window construction.

A FlowSeries is a gap-free stack of grid frames at a fixed interval (15
minutes by default).  Frames hold per-cell vehicle counts: every road is
assigned to one grid cell and roads sharing a cell are summed.  Training
instances pair a target frame X_t with three lookback windows:

    closeness  the closeness_len frames just before t
    period     period_len frames spaced period_stride apart (daily rhythm
               at the default 15-minute interval and stride 96)
    trend      trend_len frames spaced trend_stride apart (weekly rhythm
               at the default stride 672)

The target is never part of its own windows.  Indices are 1-based in the
t bookkeeping to keep the window arithmetic readable: the earliest frame
any window may touch is X_1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class RoadGridMap:
    """Assignment of road ids to grid cells."""

    rows: int
    cols: int
    cells: dict  # road_id -> (row, col)

    def __post_init__(self):
        for road, (r, c) in self.cells.items():
            if not (0 <= r < self.rows and 0 <= c < self.cols):
                raise DataError(
                    f"road {road!r} maps to ({r}, {c}), outside the "
                    f"{self.rows}x{self.cols} grid")

    def road_ids(self) -> list:
        return sorted(self.cells)


@dataclass
class FlowSeries:
    """Gap-free stack of count frames plus an observation quality mask."""

    frames: np.ndarray          # (n, rows, cols) float64 counts
    start_timestamp: int        # epoch seconds, UTC, first frame
    interval_minutes: int = 15
    observed: np.ndarray = None  # (n, rows, cols) bool, False where filled

    def __post_init__(self):
        if self.frames.ndim != 3:
            raise DataError(f"frames must be (n, rows, cols), got {self.frames.shape}")
        if self.observed is None:
            self.observed = np.ones(self.frames.shape, dtype=bool)

    @property
    def n(self) -> int:
        return self.frames.shape[0]

    @property
    def grid_shape(self) -> tuple:
        return self.frames.shape[1:]

    def timestamp_of(self, t: int) -> int:
        """Epoch seconds of frame X_t (1-based)."""
        return self.start_timestamp + (t - 1) * self.interval_minutes * 60

    def t_of_timestamp(self, ts: int) -> int:
        step = self.interval_minutes * 60
        offset = ts - self.start_timestamp
        if offset % step:
            raise DataError(f"timestamp {ts} is not aligned to the "
                            f"{self.interval_minutes}-minute grid")
        return offset // step + 1

    def month_of(self, t: int) -> str:
        dt = datetime.fromtimestamp(self.timestamp_of(t), tz=timezone.utc)
        return f"{dt.year:04d}-{dt.month:02d}"


@dataclass(frozen=True)
class WindowConfig:
    """Lookback geometry shared by instance construction and the models."""

    closeness_len: int = 3
    period_len: int = 2
    trend_len: int = 2
    period_stride: int = 96
    trend_stride: int = 672

    def __post_init__(self):
        for name in ("closeness_len", "period_len", "trend_len",
                     "period_stride", "trend_stride"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be >= 1, got {getattr(self, name)}")

    def reach(self) -> int:
        """How many frames before t the windows extend."""
        return max(self.closeness_len,
                   self.period_len * self.period_stride,
                   self.trend_len * self.trend_stride)

    def first_valid_t(self) -> int:
        return 1 + self.reach()


@dataclass
class TrainingInstance:
    t: int              # 1-based index of the target frame
    timestamp: int      # epoch seconds of the target
    closeness: np.ndarray   # (closeness_len, rows, cols)
    period: np.ndarray      # (period_len, rows, cols)
    trend: np.ndarray       # (trend_len, rows, cols)
    target: np.ndarray      # (rows, cols)
    tag: str = ""


@dataclass(frozen=True)
class Normalizer:
    """Min-max map of counts onto [-1, 1].

    Fit on training data only; the inverse is exact to well below 1e-12
    for realistic count magnitudes.
    """

    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise DataError(f"normalizer needs hi > lo, got [{self.lo}, {self.hi}]")

    @classmethod
    def fit(cls, values: np.ndarray) -> "Normalizer":
        return cls(float(np.min(values)), float(np.max(values)))

    def transform(self, x):
        # Midpoint form: no (y + 1) style cancellation at the range ends.
        x = np.asarray(x, dtype=np.float64)
        return (2.0 * x - (self.hi + self.lo)) / (self.hi - self.lo)

    def inverse(self, y):
        y = np.asarray(y, dtype=np.float64)
        return (y * (self.hi - self.lo) + (self.hi + self.lo)) / 2.0


IDENTITY_NORMALIZER = Normalizer(-1.0, 1.0)


def windows_at(frames: np.ndarray, t: int, wc: WindowConfig):
    """The three lookback views for a target at 1-based index t.

    Strided views, no copies.  closeness is [X_{t-closeness_len} .. X_{t-1}],
    period steps back period_stride at a time ending at X_{t-period_stride},
    trend the same with trend_stride.
    """
    i = t - 1
    closeness = frames[i - wc.closeness_len:i]
    period = frames[i - wc.period_len * wc.period_stride:i:wc.period_stride]
    trend = frames[i - wc.trend_len * wc.trend_stride:i:wc.trend_stride]
    return closeness, period, trend


@dataclass
class Dataset:
    """Normalized instances plus the frame stack their windows point into."""

    instances: list
    frames: np.ndarray          # (n, rows, cols), normalized
    normalizer: Normalizer
    windows: WindowConfig
    start_timestamp: int
    interval_minutes: int
    tag: str = ""

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def grid_shape(self) -> tuple:
        return self.frames.shape[1:]


def build_instances(series: FlowSeries, wc: WindowConfig,
                    normalizer: Normalizer = None,
                    t_range=None, tag: str = "") -> Dataset:
    """Every valid training instance of the series, flows normalized.

    A target index t is valid when all three windows stay inside the
    series, so t runs from 1 + reach to n.  When no normalizer is given
    one is fit on the full series, which is only appropriate standalone;
    split_by_month fits on the training months instead.
    """
    if normalizer is None:
        normalizer = Normalizer.fit(series.frames)
    frames = normalizer.transform(series.frames)
    frames.setflags(write=False)
    lo = wc.first_valid_t()
    hi = series.n
    if t_range is not None:
        lo, hi = max(lo, t_range[0]), min(hi, t_range[1])
    instances = []
    for t in range(lo, hi + 1):
        closeness, period, trend = windows_at(frames, t, wc)
        instances.append(TrainingInstance(
            t=t, timestamp=series.timestamp_of(t),
            closeness=closeness, period=period, trend=trend,
            target=frames[t - 1], tag=tag))
    return Dataset(instances=instances, frames=frames, normalizer=normalizer,
                   windows=wc, start_timestamp=series.start_timestamp,
                   interval_minutes=series.interval_minutes, tag=tag)


def _month_key(name: str) -> tuple:
    try:
        year, month = name.split("-")
        key = (int(year), int(month))
        if not 1 <= key[1] <= 12:
            raise ValueError
        return key
    except ValueError:
        raise DataError(f"month must be YYYY-MM, got {name!r}") from None


def split_by_month(series: FlowSeries, wc: WindowConfig,
                   train_months: list, test_month: str):
    """(train, test) datasets split by the month of each instance's target.

    The normalizer is fit on the frames of the training months only and
    applied to both splits; test windows may read frames from earlier
    months, but test statistics never influence the scaling.  Training
    months must all precede the test month.
    """
    train_keys = [_month_key(m) for m in train_months]
    test_key = _month_key(test_month)
    if not train_keys:
        raise DataError("no training months given")
    if len(set(train_keys)) != len(train_keys):
        raise DataError(f"duplicate training month in {train_months}")
    for m, key in zip(train_months, train_keys):
        if key == test_key:
            raise DataError(f"month {m} is in both the train and test split")
        if key > test_key:
            raise DataError(
                f"training month {m} comes after test month {test_month}")

    months = np.array([series.month_of(t) for t in range(1, series.n + 1)])
    present = set(months)
    for m in list(train_months) + [test_month]:
        if m not in present:
            raise DataError(f"month {m} has no frames in the series")

    in_train_month = np.isin(months, list(train_months))
    normalizer = Normalizer.fit(series.frames[in_train_month])
    frames = normalizer.transform(series.frames)
    frames.setflags(write=False)

    def collect(wanted: np.ndarray, tag: str) -> Dataset:
        instances = []
        for t in range(wc.first_valid_t(), series.n + 1):
            if not wanted[t - 1]:
                continue
            closeness, period, trend = windows_at(frames, t, wc)
            instances.append(TrainingInstance(
                t=t, timestamp=series.timestamp_of(t),
                closeness=closeness, period=period, trend=trend,
                target=frames[t - 1], tag=tag))
        return Dataset(instances=instances, frames=frames, normalizer=normalizer,
                       windows=wc, start_timestamp=series.start_timestamp,
                       interval_minutes=series.interval_minutes, tag=tag)

    train = collect(in_train_month, "train")
    test = collect(months == test_month, "test")
    return train, test


def parse_timestamp(text: str, line: int = 0) -> int:
    """ISO-8601 UTC ('Z' or '+00:00' suffix) to epoch seconds."""
    try:
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise DataError(f"line {line}: bad timestamp {text!r}") from None
    if dt.tzinfo is None or dt.utcoffset().total_seconds() != 0:
        raise DataError(f"line {line}: timestamp {text!r} is not UTC")
    return int(dt.timestamp())


def format_timestamp(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def load_gridmap_csv(path) -> RoadGridMap:
    """Read a road_id,row,col file; grid extent is the maximal index seen."""
    cells = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["road_id", "row", "col"]:
            raise DataError(f"{path}: expected header road_id,row,col, got {header}")
        for line, rec in enumerate(reader, start=2):
            if len(rec) != 3:
                raise DataError(f"line {line}: expected road_id,row,col, got {rec}")
            road, r, c = rec[0], rec[1], rec[2]
            if road in cells:
                raise DataError(f"line {line}: road {road!r} mapped twice")
            try:
                cells[road] = (int(r), int(c))
            except ValueError:
                raise DataError(f"line {line}: bad cell index for road {road!r}") from None
            if cells[road][0] < 0 or cells[road][1] < 0:
                raise DataError(f"line {line}: negative cell index for road {road!r}")
    if not cells:
        raise DataError(f"{path}: no roads")
    rows = 1 + max(r for r, _ in cells.values())
    cols = 1 + max(c for _, c in cells.values())
    return RoadGridMap(rows=rows, cols=cols, cells=cells)


def load_csv(flow_path, gridmap_path, interval_minutes: int = 15):
    """Read observations into a (FlowSeries, RoadGridMap) pair.

    The flow file must carry the header timestamp,road_id,flow with
    ISO-8601 UTC timestamps and non-negative integer counts.  Per road,
    timestamps must be strictly increasing; a repeat or a step backwards
    is rejected with its line number, as are unknown roads and negative
    flows.  Missing (road, interval) observations are filled by carrying
    the road's last value forward (zero before its first observation) and
    flagged False in the series' observed mask.
    """
    grid = load_gridmap_csv(gridmap_path)
    roads = grid.road_ids()
    road_index = {road: i for i, road in enumerate(roads)}
    step = interval_minutes * 60

    ts_cache: dict = {}
    times: list = []
    rows_road: list = []
    values: list = []
    last_seen = {}
    with open(flow_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["timestamp", "road_id", "flow"]:
            raise DataError(
                f"{flow_path}: expected header timestamp,road_id,flow, got {header}")
        for line, rec in enumerate(reader, start=2):
            if len(rec) != 3:
                raise DataError(f"line {line}: expected timestamp,road_id,flow")
            ts_text, road, flow_text = rec
            if road not in road_index:
                raise DataError(f"line {line}: unknown road {road!r}")
            ts = ts_cache.get(ts_text)
            if ts is None:
                ts = ts_cache[ts_text] = parse_timestamp(ts_text, line)
            prev = last_seen.get(road)
            if prev is not None and ts <= prev:
                raise DataError(
                    f"line {line}: out-of-order or duplicate timestamp for road "
                    f"{road!r} ({ts_text})")
            last_seen[road] = ts
            try:
                flow = int(flow_text)
            except ValueError:
                raise DataError(f"line {line}: flow must be an integer, "
                                f"got {flow_text!r}") from None
            if flow < 0:
                raise DataError(f"line {line}: negative flow {flow} for road {road!r}")
            times.append(ts)
            rows_road.append(road_index[road])
            values.append(flow)
    if not times:
        raise DataError(f"{flow_path}: no observations")

    times = np.asarray(times, dtype=np.int64)
    start = int(times.min())
    offsets = times - start
    if np.any(offsets % step):
        bad = int(np.argmax(offsets % step != 0))
        raise DataError(f"timestamp {format_timestamp(int(times[bad]))} is not "
                        f"aligned to the {interval_minutes}-minute grid")
    frame_idx = offsets // step
    n = int(frame_idx.max()) + 1

    # Per-road matrix first: forward filling is a road-level notion.
    per_road = np.full((n, len(roads)), np.nan)
    per_road[frame_idx, rows_road] = values
    seen = ~np.isnan(per_road)
    filled = per_road.copy()
    for i in range(1, n):
        gap = np.isnan(filled[i])
        filled[i, gap] = filled[i - 1, gap]
    filled[np.isnan(filled)] = 0.0

    frames = np.zeros((n, grid.rows, grid.cols))
    observed = np.ones((n, grid.rows, grid.cols), dtype=bool)
    for j, road in enumerate(roads):
        r, c = grid.cells[road]
        frames[:, r, c] += filled[:, j]
        observed[:, r, c] &= seen[:, j]

    series = FlowSeries(frames=frames, start_timestamp=start,
                        interval_minutes=interval_minutes, observed=observed)
    return series, grid
