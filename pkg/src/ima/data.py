"""CSV ingestion, synthetic series, chronological splits, scaling and windowing."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from ima.errors import ParseError, ShapeError
from ima.numerics import Rng

EPSILON_STD = 1e-8
TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S"
DEFAULT_SPLIT = (0.7, 0.1, 0.2)


@dataclass
class RawSeries:
    timestamps: list[str]
    values: np.ndarray  # (T_total, N)
    feature_names: list[str]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"values must be 2-D, got shape {self.values.shape}")
        if self.values.shape[0] != len(self.timestamps):
            raise ShapeError(
                f"{self.values.shape[0]} value rows but {len(self.timestamps)} timestamps"
            )
        if self.values.shape[1] != len(self.feature_names):
            raise ShapeError(
                f"{self.values.shape[1]} columns but {len(self.feature_names)} feature names"
            )

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int) -> "RawSeries":
        return RawSeries(self.timestamps[start:stop], self.values[start:stop].copy(), list(self.feature_names))


def load_csv(path: str | Path) -> RawSeries:
    """Read an ETT-style CSV: a ``date`` column followed by numeric columns.

    Raises:
        FileNotFoundError: the file does not exist.
        ParseError: bad header, ragged row, or a non-numeric/empty cell.
        ShapeError: fewer than two data rows.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if not header or header[0].strip() != "date":
            raise ParseError(f"{path}: row 1, column 1: first header cell must be 'date'")
        if len(header) < 2:
            raise ParseError(f"{path}: row 1: no feature columns after 'date'")
        names = [h.strip() for h in header[1:]]
        width = len(header)
        stamps: list[str] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ParseError(f"{path}: row {lineno}: expected {width} cells, found {len(row)}")
            parsed = []
            for col, cell in enumerate(row[1:], start=2):
                try:
                    value = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {lineno}, column {col} ({header[col - 1]}): "
                        f"not a number: {cell!r}"
                    ) from None
                if not math.isfinite(value):
                    raise ParseError(f"{path}: row {lineno}, column {col}: non-finite value {cell!r}")
                parsed.append(value)
            stamps.append(row[0])
            rows.append(parsed)
    if len(rows) < 2:
        raise ShapeError(f"{path}: need at least 2 data rows, found {len(rows)}")
    return RawSeries(stamps, np.array(rows, dtype=np.float64), names)


def write_csv(raw: RawSeries, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(["date", *raw.feature_names]) + "\n")
        for stamp, row in zip(raw.timestamps, raw.values):
            fh.write(",".join([stamp, *(repr(float(v)) for v in row)]) + "\n")


@dataclass
class SyntheticSpec:
    """Sum of a sinusoid, a linear trend and Gaussian noise per channel.

    ``periods`` and ``slopes`` are cycled when shorter than ``n_channels``.
    """

    n_channels: int = 4
    length: int = 3000
    periods: Sequence[float] = (24.0, 48.0, 12.0, 168.0)
    slopes: Sequence[float] = (0.0,)
    noise_sigma: float = 0.1
    start: str = "2016-07-01 00:00:00"
    step_hours: float = 1.0


def gen_synthetic(spec: SyntheticSpec, rng: Rng) -> RawSeries:
    if spec.length < 2:
        raise ValueError(f"length must be >= 2, got {spec.length}")
    if spec.n_channels < 1:
        raise ValueError(f"n_channels must be >= 1, got {spec.n_channels}")
    if spec.noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {spec.noise_sigma}")
    if not spec.periods or not spec.slopes:
        raise ValueError("periods and slopes must be nonempty")
    if any(p <= 0 for p in spec.periods):
        raise ValueError(f"periods must be positive, got {list(spec.periods)}")

    n, length = spec.n_channels, spec.length
    periods = np.array([spec.periods[c % len(spec.periods)] for c in range(n)], dtype=np.float64)
    slopes = np.array([spec.slopes[c % len(spec.slopes)] for c in range(n)], dtype=np.float64)
    t = np.arange(length, dtype=np.float64)[:, None]
    values = np.sin(2.0 * np.pi * t / periods) + slopes * t
    if spec.noise_sigma > 0:
        values = values + rng.normal(0.0, spec.noise_sigma, size=(length, n))

    origin = datetime.strptime(spec.start, TIMESTAMP_FORMAT)
    step = timedelta(hours=spec.step_hours)
    stamps = [(origin + i * step).strftime(TIMESTAMP_FORMAT) for i in range(length)]
    return RawSeries(stamps, values, [f"ch{c}" for c in range(n)])


def split(
    raw: RawSeries, ratios: Sequence[float] = DEFAULT_SPLIT
) -> tuple[RawSeries, RawSeries, RawSeries]:
    """Chronological train/val/test cut at ``floor(cumulative_ratio * T)``."""
    if len(ratios) != 3:
        raise ValueError(f"expected three ratios, got {len(ratios)}")
    if any(not r > 0 for r in ratios):
        raise ValueError(f"split ratios must all be positive, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {sum(ratios)!r}")
    total = raw.length
    # the 1e-9 slack keeps 0.7 + 0.1 from flooring 8.0 down to 7
    first = math.floor(ratios[0] * total + 1e-9)
    second = math.floor((ratios[0] + ratios[1]) * total + 1e-9)
    return raw.slice(0, first), raw.slice(first, second), raw.slice(second, total)


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def inverse_transform(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.std + self.mean


def fit_scaler(train: RawSeries) -> Scaler:
    if train.length == 0:
        raise ShapeError("cannot fit a scaler on an empty split")
    mean = train.values.mean(axis=0)
    std = np.maximum(train.values.std(axis=0), EPSILON_STD)
    return Scaler(mean, std)


def apply_scaler(scaler: Scaler, raw: RawSeries) -> np.ndarray:
    return scaler.transform(raw.values)


@dataclass
class Batch:
    x: np.ndarray  # (B, T_X, N)
    y: np.ndarray  # (B, T_Y, N)
    indices: np.ndarray  # (B,) window ids

    @property
    def size(self) -> int:
        return self.x.shape[0]


@dataclass
class WindowDataset:
    source: np.ndarray
    seq_len: int
    pred_len: int
    starts: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.starts)

    @property
    def n_features(self) -> int:
        return self.source.shape[1]

    def window(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        s = int(self.starts[index])
        mid = s + self.seq_len
        return self.source[s:mid], self.source[mid : mid + self.pred_len]

    def gather(self, indices: Sequence[int] | np.ndarray) -> Batch:
        idx = np.asarray(indices, dtype=np.int64)
        starts = self.starts[idx]
        x_rows = starts[:, None] + np.arange(self.seq_len)
        y_rows = starts[:, None] + self.seq_len + np.arange(self.pred_len)
        return Batch(self.source[x_rows], self.source[y_rows], idx)


def make_windows(std: np.ndarray, seq_len: int, pred_len: int, stride: int = 1) -> WindowDataset:
    std = np.asarray(std, dtype=np.float64)
    if seq_len < 1 or pred_len < 1 or stride < 1:
        raise ValueError(
            f"seq_len, pred_len and stride must be >= 1, got {seq_len}, {pred_len}, {stride}"
        )
    total = std.shape[0]
    if seq_len + pred_len > total:
        raise ShapeError(
            f"window of seq_len={seq_len} + pred_len={pred_len} exceeds series length {total}"
        )
    count = (total - seq_len - pred_len) // stride + 1
    return WindowDataset(std, seq_len, pred_len, np.arange(count, dtype=np.int64) * stride)


def batch_iter(
    ds: WindowDataset, batch_size: int, shuffle: bool = False, rng: Rng | None = None
) -> Iterator[Batch]:
    """One epoch of batches; the final short batch is kept."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if len(ds) == 0:
        raise ShapeError("dataset has no windows")
    if shuffle:
        if rng is None:
            raise ValueError("shuffle=True needs an rng")
        order = rng.permutation(len(ds))
    else:
        order = np.arange(len(ds), dtype=np.int64)
    for lo in range(0, len(order), batch_size):
        yield ds.gather(order[lo : lo + batch_size])
