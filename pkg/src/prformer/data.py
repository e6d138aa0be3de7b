"""CSV ingestion, chronological splits, and sliding-window batches.

The on-disk format is the public benchmark layout: a header row, first
column `date`, remaining columns numeric, `.` decimal, comma separated.
Splits are computed with integer arithmetic on the row count so the
boundaries are exact and reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


class DataError(Exception):
    """Unusable input data (file layout, values, or sizes)."""


@dataclass
class SeriesTable:
    timestamps: list  # ordered date strings
    channels: list  # column names
    values: np.ndarray  # (timesteps, channels) float32

    @property
    def length(self):
        return self.values.shape[0]

    @property
    def n_channels(self):
        return self.values.shape[1]


@dataclass
class WindowBatch:
    inputs: np.ndarray  # (batch, L, C)
    targets: np.ndarray  # (batch, H, C)
    starts: np.ndarray  # source row index of each window's first input


def load_csv(path):
    """Parse a benchmark-format CSV into a SeriesTable."""
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise DataError(f"dataset file not found: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2:
            raise DataError(f"{path}: need a date column plus at least one channel")
        channels = header[1:]
        timestamps = []
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, "
                                f"got {len(row)}")
            timestamps.append(row[0])
            parsed = []
            for col, cell in zip(channels, row[1:]):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}:{lineno}: non-numeric cell {cell!r} in column "
                        f"{col!r}") from None
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    for i in range(1, len(timestamps)):
        # benchmark dates are ISO-formatted, so string order is time order
        if timestamps[i] <= timestamps[i - 1]:
            raise DataError(f"{path}: timestamps not strictly increasing at row "
                            f"{i + 2} ({timestamps[i]!r} after {timestamps[i - 1]!r})")
    return SeriesTable(timestamps=timestamps, channels=channels,
                       values=np.asarray(rows, dtype=np.float32))


def save_csv(table, path):
    """Write a SeriesTable back out; full float precision so reload is exact."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + list(table.channels))
        for ts, row in zip(table.timestamps, table.values):
            writer.writerow([ts] + [repr(float(v)) for v in row])


_SCHEMES = {"6:2:2": (6, 2), "7:1:2": (7, 1)}


def split_ranges(n, scheme, lookback, horizon, strict=False):
    """Chronological (train, val, test) half-open row ranges.

    Train/val sizes are floor(ratio * n); test takes the remainder. In the
    standard mode val and test windows may begin their lookback inside the
    preceding split's tail (targets never leave their own split); strict mode
    confines whole windows to their split.
    """
    if scheme not in _SCHEMES:
        raise DataError(f"unknown split scheme {scheme!r}")
    r_train, r_val = _SCHEMES[scheme]
    n_train = n * r_train // 10
    n_val = n * r_val // 10
    n_test = n - n_train - n_val
    window = lookback + horizon
    if strict:
        ranges = [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, n)]
    else:
        ranges = [(0, n_train),
                  (n_train - lookback, n_train + n_val),
                  (n_train + n_val - lookback, n)]
    for name, (start, end), size in zip(("train", "val", "test"), ranges,
                                        (n_train, n_val, n_test)):
        if size <= 0 or end - start < window or start < 0:
            raise DataError(
                f"{name} split too small for lookback {lookback} + horizon "
                f"{horizon}: {size} rows of {n}")
    return tuple(ranges)


def window_count(range_len, lookback, horizon):
    return range_len - lookback - horizon + 1


def window_iter(values, row_range, lookback, horizon, batch_size,
                shuffle_seed=None):
    """Yield WindowBatch covers of every valid start in `row_range`.

    Each window pairs `lookback` input rows with the `horizon` rows that
    follow immediately. With a seed the start order is a deterministic
    shuffle; otherwise chronological. The final short batch is emitted.
    """
    start, end = row_range
    count = window_count(end - start, lookback, horizon)
    if count < 1:
        raise DataError(f"range {row_range} shorter than one "
                        f"lookback+horizon window ({lookback}+{horizon})")
    starts = np.arange(start, start + count)
    if shuffle_seed is not None:
        starts = starts[np.random.default_rng(shuffle_seed).permutation(count)]
    for at in range(0, count, batch_size):
        chunk = starts[at:at + batch_size]
        inputs = np.stack([values[s:s + lookback] for s in chunk])
        targets = np.stack([values[s + lookback:s + lookback + horizon]
                            for s in chunk])
        yield WindowBatch(inputs=inputs, targets=targets, starts=chunk)


PREDICTION_COLUMNS = ["window_start", "horizon_step", "channel", "y_true", "y_pred"]


def write_predictions(path, batches, channels):
    """Stream (window_start, horizon_step, channel, y_true, y_pred) rows.

    `batches` yields (starts, y_true, y_pred) triples with arrays shaped
    (b,), (b, H, C), (b, H, C).
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTION_COLUMNS)
        for starts, y_true, y_pred in batches:
            for i, s in enumerate(starts):
                for h in range(y_true.shape[1]):
                    for c, name in enumerate(channels):
                        writer.writerow([int(s), h, name,
                                         repr(float(y_true[i, h, c])),
                                         repr(float(y_pred[i, h, c]))])
