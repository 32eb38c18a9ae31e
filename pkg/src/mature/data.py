"""Demand-series representation, ingestion, windowing, and synthesis.

A demand series is a T x N matrix of non-negative hourly passenger
counts for N stations. Two series form a mode pair: a station-intensive
donor and a station-sparse target sharing one time axis.

The synthesizer produces coupled multi-modal demand:

    lam[t, i] = base_i * profile(hour) * week(day)
                * (1 + 0.7 * coupling * load_i * tanh(f[j_i, t] / 2))
    value     = (1 - noise) * lam + noise * Poisson(lam)

where f are AR(1) latent factors with unit stationary variance shared
across modes: every sparse station draws its factor from a subset of
the intensive mode's factors, so cross-mode transfer is genuinely
informative exactly when coupling > 0. Base levels, the daily profile,
and the weekend factor are quantized to dyadic rationals; with noise
and coupling off, every (station, hour-of-day) column then repeats one
exactly representable value whose arithmetic mean is exact, so a
historical-average table reproduces the series with zero error.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError
from .store import DATASET_MAGIC, read_container, write_container

logger = logging.getLogger(__name__)

HOURS_PER_DAY = 24.0


@dataclass
class DemandSeries:
    mode: str
    stations: list
    values: np.ndarray             # [T, N] non-negative
    step_hours: float = 1.0
    start: datetime = datetime(2022, 1, 3)
    coords: dict | None = None     # optional station -> (lon, lat), metadata only
    gap_bins: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"data: values must be [T, N], got shape {self.values.shape}")
        if self.values.shape[1] != len(self.stations):
            raise DataError(
                f"data: {len(self.stations)} stations but values have "
                f"{self.values.shape[1]} columns"
            )
        if self.step_hours <= 0:
            raise DataError(f"data: step_hours must be positive, got {self.step_hours}")
        if self.values.size and self.values.min() < 0:
            raise DataError("data: demand values must be non-negative")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_stations(self) -> int:
        return self.values.shape[1]

    def hour_of_day(self) -> np.ndarray:
        offset = self.start.hour + self.start.minute / 60.0
        return (offset + np.arange(self.n_steps) * self.step_hours) % HOURS_PER_DAY

    def day_index(self) -> np.ndarray:
        offset = self.start.hour + self.start.minute / 60.0
        return ((offset + np.arange(self.n_steps) * self.step_hours) // HOURS_PER_DAY).astype(int)

    def day_of_week(self) -> np.ndarray:
        return (self.start.weekday() + self.day_index()) % 7

    def timestamps(self) -> list:
        return [self.start + timedelta(hours=float(t * self.step_hours)) for t in range(self.n_steps)]


@dataclass
class ModePairDataset:
    intensive: DemandSeries
    sparse: DemandSeries

    def __post_init__(self):
        a, b = self.intensive, self.sparse
        if a.n_steps != b.n_steps or a.step_hours != b.step_hours or a.start != b.start:
            raise DataError(
                "data: mode pair must share one time axis; got "
                f"({a.n_steps} steps from {a.start}) vs ({b.n_steps} steps from {b.start})"
            )


@dataclass
class NormalizationState:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        if np.any(self.hi < self.lo):
            raise ContractError("data: normalization max must be >= min")

    @property
    def degenerate(self) -> np.ndarray:
        return self.hi == self.lo

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        span = np.where(self.degenerate, 1.0, self.hi - self.lo)
        return np.where(self.degenerate, 0.0, (x - self.lo) / span)

    def invert(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        span = np.where(self.degenerate, 1.0, self.hi - self.lo)
        return np.where(self.degenerate, self.lo, x * span + self.lo)

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationState":
        return cls(lo=np.array(d["lo"]), hi=np.array(d["hi"]))


def fit_minmax(train) -> NormalizationState:
    """Per-station min/max; fit on the training split only."""
    values = train.values if isinstance(train, DemandSeries) else np.asarray(train, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] == 0:
        raise ContractError(f"data: need a non-empty [T, N] training block, got {values.shape}")
    return NormalizationState(lo=values.min(axis=0), hi=values.max(axis=0))


@dataclass
class WindowedBatch:
    inputs_r: np.ndarray    # [B, tau, N_R]
    targets_r: np.ndarray   # [B, N_R]
    inputs_s: np.ndarray | None = None
    targets_s: np.ndarray | None = None
    target_steps: np.ndarray | None = None   # absolute time index of each target

    @property
    def n_samples(self) -> int:
        return self.inputs_r.shape[0]


# ---------------------------------------------------------------------------
# ingestion

CSV_SCHEMA = {"timestamp": "timestamp", "station": "station_id", "value": "boardings"}


def ingest_csv(path, mode: str = "mode", schema: dict | None = None, step_hours: float = 1.0) -> DemandSeries:
    """Aggregate (timestamp, station, count) rows into hourly bins.

    Absent (station, bin) pairs become zero-demand; stations are sorted
    by id, so the result is independent of row order.
    """
    schema = {**CSV_SCHEMA, **(schema or {})}
    rows = []
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"data: {path} is empty (no header row)")
        missing = [schema[k] for k in ("timestamp", "station", "value") if schema[k] not in reader.fieldnames]
        if missing:
            raise DataError(f"data: {path} is missing columns {missing}; found {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                ts = datetime.fromisoformat(row[schema["timestamp"]].strip())
                station = row[schema["station"]].strip()
                value = float(row[schema["value"]])
            except (ValueError, AttributeError, TypeError, KeyError) as exc:
                raise DataError(f"data: {path} line {lineno}: malformed row ({exc})") from exc
            if ts.tzinfo is not None:
                ts = ts.replace(tzinfo=None)
            if not station:
                raise DataError(f"data: {path} line {lineno}: empty station id")
            if not np.isfinite(value) or value < 0:
                raise DataError(f"data: {path} line {lineno}: demand must be finite and >= 0, got {value}")
            rows.append((ts, station, value))
    if not rows:
        raise DataError(f"data: {path} has a header but no data rows")

    first = min(ts for ts, _, _ in rows)
    last = max(ts for ts, _, _ in rows)
    midnight = first.replace(hour=0, minute=0, second=0, microsecond=0)
    step = timedelta(hours=step_hours)
    first_bin = int((first - midnight) / step)
    start = midnight + first_bin * step
    n_steps = int((last - start) / step) + 1
    stations = sorted({station for _, station, _ in rows})
    index = {sid: j for j, sid in enumerate(stations)}
    values = np.zeros((n_steps, len(stations)))
    hit = np.zeros((n_steps, len(stations)), dtype=bool)
    for ts, station, value in rows:
        t = int((ts - start) / step)
        values[t, index[station]] += value
        hit[t, index[station]] = True
    gaps = int(hit.size - hit.sum())
    if gaps:
        logger.info("ingest %s: %d empty (station, bin) pairs filled with 0", path, gaps)
    return DemandSeries(mode=mode, stations=stations, values=values,
                        step_hours=step_hours, start=start, gap_bins=gaps)


def export_csv(series: DemandSeries, path, schema: dict | None = None) -> None:
    """Inverse of ingest_csv up to zero-bin omission; floats use repr."""
    schema = {**CSV_SCHEMA, **(schema or {})}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    times = series.timestamps()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([schema["timestamp"], schema["station"], schema["value"]])
        for t, ts in enumerate(times):
            for j, sid in enumerate(series.stations):
                v = series.values[t, j]
                if v != 0.0:
                    writer.writerow([ts.isoformat(), sid, repr(float(v))])


# ---------------------------------------------------------------------------
# filtering, splitting, windowing

def filter_low_demand(series: DemandSeries, threshold: float = 5.0):
    """Drop stations whose mean demand per step is strictly below threshold.

    Returns (filtered series, kept ids, dropped ids).
    """
    if series.n_steps == 0 or series.n_stations == 0:
        raise ContractError("data: cannot filter an empty series")
    means = series.values.mean(axis=0)
    keep = means >= threshold
    kept = [sid for sid, k in zip(series.stations, keep) if k]
    dropped = [sid for sid, k in zip(series.stations, keep) if not k]
    if not kept:
        raise ContractError(
            f"data: threshold {threshold} drops every station "
            f"(station means max out at {means.max():.3g}); lower the threshold"
        )
    filtered = replace(
        series,
        stations=kept,
        values=series.values[:, keep],
        coords={s: series.coords[s] for s in kept if s in series.coords} if series.coords else None,
    )
    return filtered, kept, dropped


def trim_whole_days(series: DemandSeries) -> DemandSeries:
    """Cut to the largest block of whole days starting at a midnight."""
    hours = series.hour_of_day()
    starts = np.flatnonzero(hours == 0.0)
    if starts.size == 0:
        raise ContractError("data: series never crosses a midnight; cannot form whole days")
    first = int(starts[0])
    spd = int(HOURS_PER_DAY / series.step_hours)
    n_days = (series.n_steps - first) // spd
    if n_days < 1:
        raise ContractError("data: series is shorter than one whole day")
    stop = first + n_days * spd
    return replace(
        series,
        values=series.values[first:stop],
        start=series.start + timedelta(hours=float(first * series.step_hours)),
    )


@dataclass
class SplitRanges:
    """Contiguous [start, stop) step ranges cut at day boundaries."""

    train: tuple
    val: tuple
    test: tuple

    def as_dict(self) -> dict:
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test)}


def split_day_ranges(series: DemandSeries, test_days: int = 27, val_fraction: float = 0.2,
                     tau: int = 12) -> SplitRanges:
    """Chronological train/val/test split on whole days.

    The last `test_days` days form the test block; the remaining days
    split into leading train and trailing validation blocks of roughly
    (1 - val_fraction) : val_fraction. Windows are drawn inside one
    block only, so no sample straddles a boundary.
    """
    steps_per_day = HOURS_PER_DAY / series.step_hours
    if steps_per_day != int(steps_per_day):
        raise ContractError(f"data: step_hours {series.step_hours} does not divide a day")
    spd = int(steps_per_day)
    n_days = series.n_steps // spd
    if series.n_steps % spd:
        raise ContractError(
            f"data: series length {series.n_steps} is not whole days (step {series.step_hours}h)"
        )
    if test_days < 1 or test_days >= n_days:
        raise ContractError(f"data: test_days {test_days} must be in [1, {n_days - 1}]")
    rest = n_days - test_days
    val_days = max(1, int(round(rest * val_fraction)))
    train_days = rest - val_days
    if train_days < 1:
        raise ContractError(f"data: no train days left (rest {rest}, val {val_days})")
    min_len = tau + 1
    for name, days in (("train", train_days), ("val", val_days), ("test", test_days)):
        if days * spd < min_len:
            raise ContractError(f"data: {name} split has {days * spd} steps < tau + 1 = {min_len}")
    t1 = train_days * spd
    t2 = rest * spd
    return SplitRanges(train=(0, t1), val=(t1, t2), test=(t2, n_days * spd))


def window_range(values: np.ndarray, rng: tuple, tau: int) -> tuple:
    """All (input window, next-step target) pairs inside [start, stop).

    Returns (inputs [B, tau, N], targets [B, N], target_steps [B]).
    """
    start, stop = rng
    length = stop - start
    if length < tau + 1:
        raise ContractError(f"data: range of {length} steps cannot fit tau + 1 = {tau + 1}")
    n = length - tau
    idx = start + np.arange(n)[:, None] + np.arange(tau)[None, :]
    inputs = values[idx]
    target_steps = start + np.arange(n) + tau
    return inputs, values[target_steps], target_steps


def window_pair(pair: ModePairDataset, rng: tuple, tau: int) -> WindowedBatch:
    in_r, tg_r, steps = window_range(pair.intensive.values, rng, tau)
    in_s, tg_s, _ = window_range(pair.sparse.values, rng, tau)
    return WindowedBatch(inputs_r=in_r, targets_r=tg_r, inputs_s=in_s, targets_s=tg_s,
                         target_steps=steps)


# ---------------------------------------------------------------------------
# synthesis

@dataclass
class SynthConfig:
    n_r: int = 100
    n_s: int = 10
    days: int = 90
    seed: int = 0
    noise: float = 1.0            # 0 = deterministic rates, 1 = Poisson counts
    coupling: float = 0.8         # 0 = independent modes, 1 = full factor strength
    n_factors: int = 8
    n_shared: int = 4             # sparse stations draw from the first n_shared factors
    rho: float = 0.9              # AR(1) factor persistence
    weekend_drop: float = 0.4375  # weekend level is (1 - weekend_drop), dyadic
    base_r: tuple = (20.0, 120.0)
    base_s: tuple = (8.0, 24.0)
    start: datetime = datetime(2022, 1, 3)   # a Monday

    def __post_init__(self):
        if self.n_r < 1 or self.n_s < 1 or self.days < 1:
            raise ContractError("data: synth dimensions must be positive")
        if not 0.0 <= self.coupling <= 1.0:
            raise ContractError(f"data: coupling must be in [0, 1], got {self.coupling}")
        if not 0.0 <= self.noise <= 1.0:
            raise ContractError(f"data: noise must be in [0, 1], got {self.noise}")
        if not 1 <= self.n_shared <= self.n_factors:
            raise ContractError("data: n_shared must be in [1, n_factors]")

    def to_dict(self) -> dict:
        return {
            "n_r": self.n_r, "n_s": self.n_s, "days": self.days, "seed": self.seed,
            "noise": self.noise, "coupling": self.coupling, "n_factors": self.n_factors,
            "n_shared": self.n_shared, "rho": self.rho, "weekend_drop": self.weekend_drop,
            "base_r": list(self.base_r), "base_s": list(self.base_s),
            "start": self.start.isoformat(),
        }


def _dyadic(x: np.ndarray, grid: float = 1024.0) -> np.ndarray:
    return np.round(np.asarray(x, dtype=np.float64) * grid) / grid


def daily_profile(hours: np.ndarray) -> np.ndarray:
    """Double-peak commuter curve on a dyadic grid, mean roughly 0.5."""
    h = np.asarray(hours, dtype=np.float64)
    morning = 0.95 * np.exp(-0.5 * ((h - 8.0) / 1.6) ** 2)
    evening = 0.85 * np.exp(-0.5 * ((h - 17.5) / 2.1) ** 2)
    return _dyadic(0.1875 + morning + evening)


def _ar1(rng: np.random.Generator, n_factors: int, n_steps: int, rho: float) -> np.ndarray:
    innovations = rng.normal(size=(n_steps, n_factors))
    f = np.empty((n_steps, n_factors))
    f[0] = innovations[0]
    scale = np.sqrt(1.0 - rho * rho)
    for t in range(1, n_steps):
        f[t] = rho * f[t - 1] + scale * innovations[t]
    return f


def synthesize(config: SynthConfig) -> ModePairDataset:
    """Deterministic coupled two-mode demand; see the module docstring."""
    rng = np.random.default_rng(config.seed)
    n_steps = config.days * 24
    factors = _ar1(rng, config.n_factors, n_steps, config.rho)

    assign_r = rng.integers(0, config.n_factors, size=config.n_r)
    load_r = rng.uniform(0.4, 1.0, size=config.n_r)
    base_r = _dyadic(rng.uniform(*config.base_r, size=config.n_r), 16.0)
    assign_s = rng.integers(0, config.n_shared, size=config.n_s)
    load_s = rng.uniform(0.5, 1.0, size=config.n_s)
    base_s = _dyadic(rng.uniform(*config.base_s, size=config.n_s), 16.0)

    hours = np.arange(n_steps) % 24
    day = np.arange(n_steps) // 24
    dow = (config.start.weekday() + day) % 7
    week = np.where(dow >= 5, 1.0 - config.weekend_drop, 1.0)
    seasonal = daily_profile(hours) * week   # [T]

    def mode_rates(assign, load, base):
        shared = np.tanh(factors[:, assign] / 2.0)      # [T, N]
        lift = 1.0 + 0.7 * config.coupling * load[None, :] * shared
        return base[None, :] * seasonal[:, None] * lift

    lam_r = mode_rates(assign_r, load_r, base_r)
    lam_s = mode_rates(assign_s, load_s, base_s)

    def observe(lam):
        if config.noise == 0.0:
            return lam
        counts = rng.poisson(lam).astype(np.float64)
        return (1.0 - config.noise) * lam + config.noise * counts

    values_r = observe(lam_r)
    values_s = observe(lam_s)
    stations_r = [f"R{j:03d}" for j in range(config.n_r)]
    stations_s = [f"S{j:03d}" for j in range(config.n_s)]
    return ModePairDataset(
        intensive=DemandSeries(mode="intensive", stations=stations_r, values=values_r,
                               start=config.start),
        sparse=DemandSeries(mode="sparse", stations=stations_s, values=values_s,
                            start=config.start),
    )


# ---------------------------------------------------------------------------
# dataset cache container

def save_pair(path, pair: ModePairDataset, meta: dict | None = None) -> None:
    header = {
        "intensive": _series_header(pair.intensive),
        "sparse": _series_header(pair.sparse),
        "meta": meta or {},
    }
    write_container(path, DATASET_MAGIC, header, [pair.intensive.values, pair.sparse.values])


def load_pair(path) -> tuple:
    header, arrays = read_container(path, DATASET_MAGIC)
    pair = ModePairDataset(
        intensive=_series_from_header(header["intensive"], arrays[0]),
        sparse=_series_from_header(header["sparse"], arrays[1]),
    )
    return pair, header["meta"]


def _series_header(series: DemandSeries) -> dict:
    return {
        "mode": series.mode,
        "stations": list(series.stations),
        "step_hours": series.step_hours,
        "start": series.start.isoformat(),
        "gap_bins": series.gap_bins,
    }


def _series_from_header(h: dict, values: np.ndarray) -> DemandSeries:
    return DemandSeries(
        mode=h["mode"], stations=list(h["stations"]), values=values,
        step_hours=h["step_hours"], start=datetime.fromisoformat(h["start"]),
        gap_bins=h["gap_bins"],
    )
