"""Dataset construction: CSV ingestion, sliding windows, chronological splits,
and a seeded synthetic generator for desk-scale experiments.

CSV convention follows the common multivariate benchmark layout: a header
row, first column an ISO-like timestamp, remaining columns float channels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from .errors import (
    ChannelError,
    EmptyDatasetError,
    IngestionError,
    SplitError,
    WindowError,
)

TIME_FEATURES = 4  # month, day, weekday, hour


@dataclass
class Series:
    """A full multivariate series with per-step calendar features."""

    values: np.ndarray          # [N, V] float64
    time_features: np.ndarray   # [N, F] float64, scaled to [-0.5, 0.5]
    timestamps: list[datetime] | None
    channel_names: list[str]
    fill_count: int = 0
    dropped_leading: int = 0

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]


@dataclass
class SeriesWindow:
    """One (input, target) pair cut from a series.

    ``window_id`` is the absolute start index of the input inside the full
    series, so overlap checks against split boundaries stay possible.
    """

    x: np.ndarray              # [T, V] raw values
    target: np.ndarray         # [H, V] raw values
    time_features: np.ndarray  # [T+H, F]
    window_id: int

    @property
    def input_len(self) -> int:
        return self.x.shape[0]

    @property
    def horizon(self) -> int:
        return self.target.shape[0]

    def timestamp_range(self) -> range:
        """Absolute step indices covered by input plus target."""
        return range(self.window_id, self.window_id + self.input_len + self.horizon)


@dataclass
class DatasetSplit:
    train: list[SeriesWindow]
    val: list[SeriesWindow]
    test: list[SeriesWindow]
    boundaries: tuple            # (train_end, val_end) as timestamps or indices

    def windows(self, name: str) -> list[SeriesWindow]:
        try:
            got = getattr(self, name)
        except AttributeError:
            raise EmptyDatasetError(f"unknown split '{name}'") from None
        return got


@dataclass
class SynthSpec:
    """Recipe for a deterministic non-stationary multivariate series.

    Per channel: linear trend, one sinusoidal season, plus Gaussian noise
    whose scale switches at the given times (regime changes). Channels are
    finally mixed by a square matrix to create cross-channel dependence.
    """

    channels: int = 4
    length: int = 2000
    seed: int = 7
    trend: float | list[float] = 0.0
    period: float | list[float] = 24.0
    amplitude: float | list[float] = 1.0
    noise_std: float = 0.1
    switch_times: list[int] = field(default_factory=list)
    switch_scales: list[float] = field(default_factory=list)
    mixing: list[list[float]] | None = None

    def __post_init__(self):
        if self.mixing is not None:
            m = np.asarray(self.mixing, dtype=np.float64)
            if m.shape != (self.channels, self.channels):
                raise ValueError(f"mixing matrix must be [{self.channels},{self.channels}], got {m.shape}")
        if len(self.switch_times) != len(self.switch_scales):
            raise ValueError("switch_times and switch_scales must have equal length")


# ---------------------------------------------------------------------------
# calendar features


def _scale_feature(value: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return (value - lo) / (hi - lo) - 0.5


def calendar_features(timestamps: list[datetime]) -> np.ndarray:
    """Month/day/weekday/hour from real timestamps, each scaled to [-0.5, 0.5]."""
    raw = np.array(
        [[ts.month, ts.day, ts.weekday(), ts.hour] for ts in timestamps],
        dtype=np.float64,
    )
    out = np.empty_like(raw)
    out[:, 0] = _scale_feature(raw[:, 0], 1, 12)
    out[:, 1] = _scale_feature(raw[:, 1], 1, 31)
    out[:, 2] = _scale_feature(raw[:, 2], 0, 6)
    out[:, 3] = _scale_feature(raw[:, 3], 0, 23)
    return out


def pseudo_calendar_features(length: int) -> np.ndarray:
    """Calendar surrogate for synthetic data, derived from the step index:
    hour = t mod 24, weekday cycles with period 7 days, months with period 12
    (30-day months). Keeps the feature-embedding path exercised without real
    timestamps."""
    t = np.arange(length)
    day = t // 24
    out = np.empty((length, TIME_FEATURES), dtype=np.float64)
    out[:, 0] = _scale_feature((day // 30) % 12, 0, 11)   # month
    out[:, 1] = _scale_feature(day % 30, 0, 29)           # day of month
    out[:, 2] = _scale_feature(day % 7, 0, 6)             # weekday
    out[:, 3] = _scale_feature(t % 24, 0, 23)             # hour
    return out


# ---------------------------------------------------------------------------
# CSV ingestion and export


_NA_TOKENS = {"", "na", "nan", "null", "none"}


def _parse_cell(cell: str, line_no: int, column: str) -> float:
    text = cell.strip()
    if text.lower() in _NA_TOKENS:
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise IngestionError(f"line {line_no}: cannot parse '{cell}' in column '{column}'") from None


def load_csv(path: str, date_column: str = "date") -> Series:
    """Load a timestamped CSV into a Series.

    NaN policy: interior NaNs are forward-filled per channel; rows before the
    first fully observed row are dropped. Both counts are kept on the result.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        header = [c.strip() for c in header]
        if date_column in header:
            date_idx = header.index(date_column)
        else:
            date_idx = 0
        channel_names = [c for i, c in enumerate(header) if i != date_idx]
        timestamps: list[datetime] = []
        rows: list[list[float]] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(
                    f"line {line_no}: expected {len(header)} cells, got {len(row)}")
            try:
                timestamps.append(datetime.fromisoformat(row[date_idx].strip()))
            except ValueError:
                raise IngestionError(
                    f"line {line_no}: cannot parse timestamp '{row[date_idx]}'") from None
            rows.append([
                _parse_cell(cell, line_no, header[i])
                for i, cell in enumerate(row) if i != date_idx
            ])
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    values = np.asarray(rows, dtype=np.float64)
    for v, name in enumerate(channel_names):
        if np.all(np.isnan(values[:, v])):
            raise ChannelError(f"channel '{name}' holds no values")
    values, fill_count, dropped = _apply_nan_policy(values)
    timestamps = timestamps[dropped:]
    return Series(
        values=values,
        time_features=calendar_features(timestamps),
        timestamps=timestamps,
        channel_names=channel_names,
        fill_count=fill_count,
        dropped_leading=dropped,
    )


def _apply_nan_policy(values: np.ndarray) -> tuple[np.ndarray, int, int]:
    """Forward-fill interior NaNs; drop leading rows that cannot be filled."""
    values = values.copy()
    n, v = values.shape
    first_valid = 0
    for c in range(v):
        finite = np.flatnonzero(~np.isnan(values[:, c]))
        first_valid = max(first_valid, int(finite[0]))
    values = values[first_valid:]
    fill_count = 0
    for c in range(v):
        col = values[:, c]
        nan_at = np.isnan(col)
        if nan_at.any():
            fill_count += int(nan_at.sum())
            idx = np.where(nan_at, 0, np.arange(col.size))
            np.maximum.accumulate(idx, out=idx)
            values[:, c] = col[idx]
    return values, fill_count, first_valid


def write_csv(series: Series, path: str) -> None:
    """Export a series in the same dialect load_csv reads.

    Floats are written with repr so finite values round-trip bit-identically.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", *series.channel_names])
        for i in range(len(series)):
            if series.timestamps is not None:
                stamp = series.timestamps[i].isoformat(sep=" ")
            else:
                stamp = str(i)
            writer.writerow([stamp, *[repr(float(x)) for x in series.values[i]]])


# ---------------------------------------------------------------------------
# windows and splits


def window_count(length: int, input_len: int, horizon: int, stride: int) -> int:
    if length < input_len + horizon:
        return 0
    return (length - input_len - horizon) // stride + 1


def make_windows(series: Series, input_len: int, horizon: int, stride: int = 1,
                 start_offset: int = 0) -> list[SeriesWindow]:
    """Cut sliding windows starting at 0, ``stride`` apart.

    ``start_offset`` shifts the recorded window ids so windows of a segment
    carry absolute positions within the parent series.
    """
    if stride < 1:
        raise WindowError(f"stride must be >= 1, got {stride}")
    n = len(series)
    count = window_count(n, input_len, horizon, stride)
    if count == 0:
        raise WindowError(
            f"series of length {n} cannot hold a window of {input_len}+{horizon} steps")
    out = []
    for k in range(count):
        start = k * stride
        out.append(SeriesWindow(
            x=series.values[start:start + input_len],
            target=series.values[start + input_len:start + input_len + horizon],
            time_features=series.time_features[start:start + input_len + horizon],
            window_id=start_offset + start,
        ))
    return out


def _segment(series: Series, start: int, stop: int) -> Series:
    return Series(
        values=series.values[start:stop],
        time_features=series.time_features[start:stop],
        timestamps=series.timestamps[start:stop] if series.timestamps is not None else None,
        channel_names=series.channel_names,
    )


def chrono_split(series: Series, ratios, input_len: int, horizon: int,
                 stride: int = 1) -> DatasetSplit:
    """Split into contiguous train/val/test segments; windows never straddle a
    segment boundary, so no training window overlaps a test timestamp."""
    ratios = [float(r) for r in ratios]
    if len(ratios) != 3:
        raise SplitError(f"expected 3 ratios, got {len(ratios)}")
    if any(r < 0 for r in ratios) or abs(math.fsum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must be non-negative and sum to 1, got {ratios}")
    n = len(series)
    b1 = int(n * ratios[0])
    b2 = int(n * (ratios[0] + ratios[1]))
    bounds = [(0, b1), (b1, b2), (b2, n)]
    names = ("train", "val", "test")
    parts: dict[str, list[SeriesWindow]] = {}
    for name, ratio, (start, stop) in zip(names, ratios, bounds):
        if ratio == 0.0:
            parts[name] = []
            continue
        if stop - start < input_len + horizon:
            raise SplitError(
                f"{name} segment [{start}:{stop}) too short for {input_len}+{horizon}-step windows")
        parts[name] = make_windows(_segment(series, start, stop), input_len, horizon,
                                   stride, start_offset=start)
    if series.timestamps is not None:
        boundaries = (series.timestamps[b1 - 1] if b1 > 0 else None,
                      series.timestamps[b2 - 1] if b2 > 0 else None)
    else:
        boundaries = (b1, b2)
    return DatasetSplit(parts["train"], parts["val"], parts["test"], boundaries)


# ---------------------------------------------------------------------------
# synthetic generator


_SYNTH_EPOCH = datetime(2000, 1, 1)


def generate_synthetic(spec: SynthSpec) -> Series:
    """Deterministic trend + season + regime-switched noise, channel-mixed.

    channel c before mixing:
        trend_c * t + amplitude_c * sin(2*pi*t / period_c) + scale(t) * noise
    where scale(t) jumps to switch_scales[k] at switch_times[k].
    """
    v, n = spec.channels, spec.length
    rng = np.random.default_rng(spec.seed)
    t = np.arange(n, dtype=np.float64)

    def per_channel(value) -> np.ndarray:
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 0:
            return np.full(v, float(arr))
        if arr.shape != (v,):
            raise ValueError(f"per-channel parameter must be scalar or length {v}, got {arr.shape}")
        return arr

    trend = per_channel(spec.trend)
    period = per_channel(spec.period)
    amplitude = per_channel(spec.amplitude)

    scale = np.ones(n)
    for when, factor in zip(spec.switch_times, spec.switch_scales):
        scale[when:] = factor
    noise = rng.standard_normal((n, v)) * spec.noise_std
    base = (trend * t[:, None]
            + amplitude * np.sin(2.0 * np.pi * t[:, None] / period)
            + scale[:, None] * noise)
    if spec.mixing is not None:
        base = base @ np.asarray(spec.mixing, dtype=np.float64).T
    timestamps = [_SYNTH_EPOCH + timedelta(hours=int(i)) for i in range(n)]
    return Series(
        values=np.ascontiguousarray(base),
        time_features=pseudo_calendar_features(n),
        timestamps=timestamps,
        channel_names=[f"c{c}" for c in range(v)],
    )
