"""Synthetic citywide flow generator.

Each grid cell gets a smooth spatial intensity; the signal through time is

    base_flow * cell_factor * daily(t) * weekly(t)
    + diffusion coupling to the 4-neighborhood
    then multiplicative incident dips, additive noise,
    truncation at zero, rounding to integer counts.

Everything is driven by one seeded generator in a fixed draw order, so a
(config, seed) pair always produces the same city.  With noise, incidents
and diffusion disabled the series is exactly one-day periodic up to the
weekly factor, which the period and trend windows are meant to pick up.
"""

from __future__ import annotations

import calendar
import os
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .series import DataError, FlowSeries, RoadGridMap, format_timestamp

INTERVALS_PER_DAY = 96  # at the 15-minute default


@dataclass(frozen=True)
class CityConfig:
    rows: int = 16
    cols: int = 16
    roads: int = 0              # 0 means one road per cell
    months: int = 3
    start: str = "2023-10-01"   # first interval, UTC midnight
    interval_minutes: int = 15
    seed: int = 0
    base_flow: float = 120.0
    weekend_factor: float = 0.75
    diffusion: float = 0.15
    incident_rate: float = 0.002   # starts per cell per interval
    incident_depth: float = 0.5    # flow multiplied by (1 - depth)
    incident_duration: float = 8.0 # mean length in intervals, geometric
    noise: float = 4.0             # count noise standard deviation

    def __post_init__(self):
        if not 0.0 <= self.diffusion <= 0.25:
            raise DataError(
                f"diffusion must lie in [0, 0.25] for stability, got {self.diffusion}")
        if self.roads and self.roads > self.rows * self.cols:
            raise DataError(f"{self.roads} roads cannot fit a "
                            f"{self.rows}x{self.cols} grid one per cell")


def metro_scale_config(seed: int = 0) -> CityConfig:
    """2501 roads on a 51x50 grid; too heavy for routine test runs."""
    return CityConfig(rows=51, cols=50, roads=2501, seed=seed)


def daily_profile(intervals_per_day: int = INTERVALS_PER_DAY) -> np.ndarray:
    """Two rush peaks over a floor, sampled once per interval."""
    f = np.arange(intervals_per_day) / intervals_per_day

    def bump(center, width):
        return np.exp(-((f - center) / width) ** 2)

    return 0.30 + 0.85 * bump(8.5 / 24, 0.075) + 1.00 * bump(17.75 / 24, 0.09)


def month_span(start: str, months: int) -> int:
    """Number of days covered by `months` whole months from a YYYY-MM-DD start."""
    first = datetime.strptime(start, "%Y-%m-%d").replace(tzinfo=timezone.utc)
    days = 0
    year, month = first.year, first.month
    for _ in range(months):
        days += calendar.monthrange(year, month)[1]
        month += 1
        if month > 12:
            month, year = 1, year + 1
    return days


def cell_factors(config: CityConfig, rng: np.random.Generator) -> np.ndarray:
    """Smooth spatial intensity field with mean about one."""
    raw = rng.uniform(0.6, 1.4, size=(config.rows, config.cols))
    for _ in range(2):
        padded = np.pad(raw, 1, mode="edge")
        raw = (padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2]
               + padded[1:-1, 2:] + padded[1:-1, 1:-1]) / 5.0
    return raw


def _laplacian(grid: np.ndarray) -> np.ndarray:
    # Zero-flux boundary: edge padding makes outside neighbors contribute 0,
    # so the city-wide total is conserved.
    padded = np.pad(grid, 1, mode="edge")
    return (padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2]
            + padded[1:-1, 2:] - 4.0 * grid)


def _incident_factors(config: CityConfig, n: int,
                      rng: np.random.Generator) -> np.ndarray:
    factor = np.ones((n, config.rows, config.cols))
    if config.incident_rate <= 0.0 or config.incident_depth <= 0.0:
        return factor
    dip = 1.0 - config.incident_depth
    p_end = 1.0 / max(config.incident_duration, 1.0)
    for r in range(config.rows):
        for c in range(config.cols):
            starts = np.flatnonzero(rng.random(n) < config.incident_rate)
            if starts.size == 0:
                continue
            durations = rng.geometric(p_end, size=starts.size)
            for s, d in zip(starts, durations):
                factor[s:s + d, r, c] = dip  # overlapping incidents merge
    return factor


def generate(config: CityConfig):
    """Build a (FlowSeries, RoadGridMap) city from the config's seed."""
    rng = np.random.default_rng(config.seed)
    n = month_span(config.start, config.months) * (
        24 * 60 // config.interval_minutes)
    start_dt = datetime.strptime(config.start, "%Y-%m-%d").replace(tzinfo=timezone.utc)
    start_ts = int(start_dt.timestamp())

    factors = cell_factors(config, rng)
    base_grid = config.base_flow * factors
    spatial = base_grid + config.diffusion * _laplacian(base_grid)

    per_day = 24 * 60 // config.interval_minutes
    daily = daily_profile(per_day)
    day_index = np.arange(n) // per_day
    weekday0 = start_dt.weekday()
    is_weekend = ((day_index + weekday0) % 7) >= 5
    time_factor = daily[np.arange(n) % per_day] * np.where(
        is_weekend, config.weekend_factor, 1.0)

    incidents = _incident_factors(config, n, rng)
    signal = time_factor[:, None, None] * spatial[None, :, :] * incidents
    if config.noise > 0.0:
        signal = signal + rng.normal(0.0, config.noise, size=signal.shape)
    frames = np.maximum(np.rint(signal), 0.0)

    road_count = config.roads or config.rows * config.cols
    width = len(str(config.rows * config.cols - 1))
    cells = {}
    for idx in range(road_count):
        r, c = divmod(idx, config.cols)
        cells[f"road_{idx:0{width}d}"] = (r, c)
    covered = np.zeros((config.rows, config.cols), dtype=bool)
    for r, c in cells.values():
        covered[r, c] = True
    frames *= covered  # cells without a road report no flow

    series = FlowSeries(frames=frames, start_timestamp=start_ts,
                        interval_minutes=config.interval_minutes)
    grid = RoadGridMap(rows=config.rows, cols=config.cols, cells=cells)
    return series, grid


def export_csv(series: FlowSeries, grid: RoadGridMap, out_dir) -> tuple:
    """Write flows.csv and gridmap.csv; returns the two paths.

    Canonical row order (timestamp, then road id) makes repeated exports
    byte-identical.  Requires at most one road per cell, since frames only
    store per-cell sums.
    """
    seen_cells = set()
    for road, cell in grid.cells.items():
        if cell in seen_cells:
            raise DataError(
                f"cannot export: cell {cell} carries more than one road")
        seen_cells.add(cell)

    os.makedirs(out_dir, exist_ok=True)
    flow_path = os.path.join(out_dir, "flows.csv")
    map_path = os.path.join(out_dir, "gridmap.csv")

    roads = grid.road_ids()
    with open(map_path, "w", newline="") as fh:
        fh.write("road_id,row,col\n")
        for road in roads:
            r, c = grid.cells[road]
            fh.write(f"{road},{r},{c}\n")

    step = series.interval_minutes * 60
    with open(flow_path, "w", newline="") as fh:
        fh.write("timestamp,road_id,flow\n")
        for i in range(series.n):
            stamp = format_timestamp(series.start_timestamp + i * step)
            frame = series.frames[i]
            for road in roads:
                r, c = grid.cells[road]
                fh.write(f"{stamp},{road},{int(frame[r, c])}\n")
    return flow_path, map_path
