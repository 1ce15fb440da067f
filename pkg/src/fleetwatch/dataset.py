"""Per-unit sensor series: CSV ingestion, cleaning, percentile normalisation, time splits.

Calendar units are fixed durations so splits are deterministic: the training
window is 61 days, a month is 30 days and an incremental step is 14 days.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

TRAIN_SPAN = np.timedelta64(61, "D")
MONTH = np.timedelta64(30, "D")
STEP = np.timedelta64(14, "D")
FILTER_LIMIT = 3.0
MISSING_TOKENS = ["", "NaN"]


class DataError(ValueError):
    """Malformed, empty or otherwise unusable sensor data."""


def to_time(value) -> np.datetime64:
    """Parse an ISO-8601 instant (``Z`` suffix allowed) into ``datetime64[s]`` UTC."""
    if isinstance(value, np.datetime64):
        return value.astype("datetime64[s]")
    ts = pd.Timestamp(value)
    if ts.tzinfo is not None:
        ts = ts.tz_convert("UTC").tz_localize(None)
    return np.datetime64(ts.to_datetime64(), "s")


def format_time(t: np.datetime64) -> str:
    return str(np.datetime64(t, "s")) + "Z"


def _readonly(a: np.ndarray, dtype=None) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class UnitSeries:
    """One unit's time-indexed sensor matrix (rows = samples, cols = signals)."""

    unit_id: str
    timestamps: np.ndarray
    values: np.ndarray
    signal_names: tuple[str, ...]
    fault_time: np.datetime64 | None = None
    period: np.timedelta64 | None = field(default=None, compare=False)

    def __post_init__(self):
        ts = _readonly(self.timestamps, "datetime64[s]")
        vals = _readonly(self.values, np.float64)
        if vals.ndim != 2:
            raise DataError(f"{self.unit_id}: values must be 2-d, got shape {vals.shape}")
        if vals.shape[0] != ts.shape[0]:
            raise DataError(f"{self.unit_id}: {vals.shape[0]} value rows but {ts.shape[0]} timestamps")
        if vals.shape[1] != len(self.signal_names):
            raise DataError(f"{self.unit_id}: {vals.shape[1]} columns but {len(self.signal_names)} signal names")
        if ts.shape[0] > 1 and not np.all(ts[1:] > ts[:-1]):
            raise DataError(f"{self.unit_id}: timestamps are not strictly increasing")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "signal_names", tuple(self.signal_names))
        if self.fault_time is not None:
            object.__setattr__(self, "fault_time", to_time(self.fault_time))
        if self.period is None and ts.shape[0] > 1:
            object.__setattr__(self, "period", np.median(np.diff(ts)).astype("timedelta64[s]"))

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def start(self) -> np.datetime64:
        return self.timestamps[0]

    @property
    def end(self) -> np.datetime64:
        return self.timestamps[-1]

    def select(self, mask: np.ndarray) -> "UnitSeries":
        return UnitSeries(
            self.unit_id, self.timestamps[mask], self.values[mask], self.signal_names, self.fault_time, self.period
        )

    def window(self, start: np.datetime64 | None = None, end: np.datetime64 | None = None) -> "UnitSeries":
        """Rows with ``start <= t < end`` (open bounds when ``None``)."""
        return self.select(time_mask(self.timestamps, start, end))

    def with_values(self, values: np.ndarray) -> "UnitSeries":
        return UnitSeries(self.unit_id, self.timestamps, values, self.signal_names, self.fault_time, self.period)


def time_mask(timestamps: np.ndarray, start=None, end=None) -> np.ndarray:
    mask = np.ones(timestamps.shape[0], dtype=bool)
    if start is not None:
        mask &= timestamps >= start
    if end is not None:
        mask &= timestamps < end
    return mask


# -- CSV ---------------------------------------------------------------------


def load_unit(path: str | Path, fault_time=None, unit_id: str | None = None) -> UnitSeries:
    """Read ``timestamp,<signal1>,...`` CSV into a raw (uncleaned) series."""
    path = Path(path)
    try:
        df = pd.read_csv(path, keep_default_na=False, na_values=MISSING_TOKENS, dtype=str)
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: cannot parse CSV ({exc})") from exc
    if df.shape[1] < 2 or df.columns[0] != "timestamp":
        raise DataError(f"{path}: header must start with 'timestamp' and name at least one signal")
    if df.shape[0] == 0:
        raise DataError(f"{path}: no data rows")
    try:
        ts = pd.to_datetime(df["timestamp"], utc=True, format="ISO8601")
        # astype(float) parses with round-trip precision; pd.to_numeric does not
        values = df.iloc[:, 1:].astype(np.float64).to_numpy()
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    stamps = ts.dt.tz_localize(None).to_numpy().astype("datetime64[s]")
    return UnitSeries(
        unit_id=unit_id or path.stem,
        timestamps=stamps,
        values=values,
        signal_names=tuple(df.columns[1:]),
        fault_time=None if fault_time is None else to_time(fault_time),
    )


def write_unit(series: UnitSeries, path: str | Path) -> None:
    """Write in the CSV schema read by :func:`load_unit`; floats round-trip exactly."""
    stamps = np.datetime_as_string(series.timestamps, unit="s")
    df = pd.DataFrame(series.values, columns=list(series.signal_names))
    df.insert(0, "timestamp", [s + "Z" for s in stamps])
    df.to_csv(path, index=False, na_rep="", lineterminator="\n")


# -- fleet manifest -----------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    unit_id: str
    path: Path
    fault_time: np.datetime64 | None


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse a fleet manifest: ``{"units": [{"unit_id", "path", "fault_time"}]}``.

    Relative CSV paths are resolved against the manifest's directory.
    """
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    entries = []
    for u in doc["units"]:
        p = Path(u["path"])
        if not p.is_absolute():
            p = path.parent / p
        ft = u.get("fault_time")
        entries.append(ManifestEntry(u["unit_id"], p, None if ft is None else to_time(ft)))
    return entries


def write_manifest(path: str | Path, entries: Iterable[ManifestEntry], **extra) -> None:
    path = Path(path)
    units = []
    for e in entries:
        p = Path(e.path)
        try:
            p = p.relative_to(path.parent)
        except ValueError:
            pass
        units.append(
            {
                "unit_id": e.unit_id,
                "path": p.as_posix(),
                "fault_time": None if e.fault_time is None else format_time(e.fault_time),
            }
        )
    with open(path, "w") as fh:
        json.dump({"units": units, **extra}, fh, indent=2)
        fh.write("\n")


def load_fleet(manifest_path: str | Path, clean_rows: bool = True) -> list[UnitSeries]:
    fleet = []
    for e in read_manifest(manifest_path):
        s = load_unit(e.path, fault_time=e.fault_time, unit_id=e.unit_id)
        fleet.append(clean(s) if clean_rows else s)
    return fleet


# -- cleaning and normalisation ----------------------------------------------


def clean(series: UnitSeries) -> UnitSeries:
    """Drop rows holding a missing value or an exact zero."""
    v = series.values
    keep = ~np.any(np.isnan(v) | (v == 0.0), axis=1)
    if not keep.any():
        raise DataError(f"{series.unit_id}: every row has a missing value or a zero")
    return series if keep.all() else series.select(keep)


@dataclass(frozen=True)
class Normalizer:
    """Per-signal affine map sending the 1st percentile to -1 and the 99th to +1."""

    signal_names: tuple[str, ...]
    p1: np.ndarray
    p99: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p1", _readonly(self.p1, np.float64))
        object.__setattr__(self, "p99", _readonly(self.p99, np.float64))
        object.__setattr__(self, "signal_names", tuple(self.signal_names))
        if np.any(self.p99 <= self.p1):
            bad = [n for n, a, b in zip(self.signal_names, self.p1, self.p99) if not b > a]
            raise DataError(f"constant signal(s) in normaliser window: {bad}")

    def apply(self, values: np.ndarray) -> np.ndarray:
        return 2.0 * (values - self.p1) / (self.p99 - self.p1) - 1.0

    def to_dict(self) -> dict:
        return {"signal_names": list(self.signal_names), "p1": self.p1.tolist(), "p99": self.p99.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(tuple(d["signal_names"]), np.asarray(d["p1"]), np.asarray(d["p99"]))


def fit_normalizer(series: UnitSeries, window: tuple | None = None) -> Normalizer:
    """Fit on rows in ``[window[0], window[1])``; percentiles interpolate linearly."""
    data = series if window is None else series.window(*window)
    if len(data) < 2:
        raise DataError(f"{series.unit_id}: fewer than 2 rows in normaliser window")
    p1, p99 = np.percentile(data.values, [1.0, 99.0], axis=0)
    return Normalizer(series.signal_names, p1, p99)


def _check_signals(series: UnitSeries, norm: Normalizer) -> None:
    if series.signal_names != norm.signal_names:
        raise DataError(f"{series.unit_id}: signal set does not match the normaliser")


def normalize(series: UnitSeries, norm: Normalizer) -> UnitSeries:
    """Normalise without filtering (evaluation data)."""
    _check_signals(series, norm)
    return series.with_values(norm.apply(series.values))


def normalize_and_filter_train(series: UnitSeries, norm: Normalizer) -> UnitSeries:
    """Normalise training data and drop rows with any value above 3."""
    out = normalize(series, norm)
    keep = ~np.any(out.values > FILTER_LIMIT, axis=1)
    if not keep.any():
        raise DataError(f"{series.unit_id}: every training row exceeds {FILTER_LIMIT} after normalisation")
    return out if keep.all() else out.select(keep)


# -- splits ------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    """Train / healthy-evaluation / blackout / fault windows of one unit.

    train = [start, train_end); healthy = [train_end, blackout_start);
    blackout = [blackout_start, fault_time); fault = [fault_time, end].
    Without a fault the healthy window runs to the end and the others are empty.
    """

    start: np.datetime64
    train_end: np.datetime64
    end: np.datetime64
    blackout_start: np.datetime64 | None = None
    fault_time: np.datetime64 | None = None

    def masks(self, timestamps: np.ndarray) -> dict[str, np.ndarray]:
        empty = np.zeros(timestamps.shape[0], dtype=bool)
        out = {
            "train": time_mask(timestamps, self.start, self.train_end),
            "healthy": time_mask(timestamps, self.train_end, self.blackout_start),
            "blackout": empty,
            "fault": empty,
        }
        if self.fault_time is not None:
            out["blackout"] = time_mask(timestamps, self.blackout_start, self.fault_time)
            out["fault"] = time_mask(timestamps, self.fault_time, None)
        return out


def split(series: UnitSeries) -> SplitSpec:
    start, end = series.start, series.end
    train_end = start + TRAIN_SPAN
    if end <= train_end:
        raise DataError(f"{series.unit_id}: series does not extend past the {TRAIN_SPAN} training window")
    if series.fault_time is None:
        return SplitSpec(start=start, train_end=train_end, end=end)
    blackout_start = series.fault_time - MONTH
    if blackout_start <= train_end:
        raise DataError(
            f"{series.unit_id}: fault at {format_time(series.fault_time)} leaves no healthy window "
            "between training and the one-month blackout"
        )
    return SplitSpec(
        start=start, train_end=train_end, end=end, blackout_start=blackout_start, fault_time=series.fault_time
    )


def prepare_training(series: UnitSeries, end=None, whole: bool = False) -> tuple[Normalizer, UnitSeries]:
    """Normaliser fitted on the 61-day training window plus normalised, filtered training rows.

    ``end`` overrides the end of the training rows (the normaliser is then
    fitted on the same rows); ``whole=True`` keeps the normaliser of the
    61-day window but returns every row of the series, filtered.
    """
    train_end = series.start + TRAIN_SPAN if end is None else end
    norm_end = series.start + TRAIN_SPAN if whole else train_end
    norm = fit_normalizer(series, (series.start, norm_end))
    rows = series if whole else series.window(series.start, train_end)
    return norm, normalize_and_filter_train(rows, norm)
