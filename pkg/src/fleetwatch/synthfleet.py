"""Seeded synthetic fleet: multi-regime latent-factor sensor streams with injectable faults.

Each signal is ``mean_r + amplitude_r * (loadings_r @ z(t) + noise * e(t))``, where
``r`` is the unit's current operating regime and ``z`` a few smooth latent
factors (daily cycle plus slow AR(1) drift) centred to zero mean over the
horizon and ``e`` is i.i.d. standard normal. A unit-specific per-signal gain/offset models sensor calibration
differences between units. Faults ramp selected signals up to a shift of
``magnitude`` per-signal standard deviations and stay there.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import ManifestEntry, TRAIN_SPAN, UnitSeries, format_time, to_time, write_manifest, write_unit

DAY_SECONDS = 86_400


@dataclass
class Regime:
    mean: np.ndarray  # (n_signals,)
    amplitude: np.ndarray  # (n_signals,)
    loadings: np.ndarray  # (n_signals, n_factors)


@dataclass
class FaultSpec:
    """Fault detected at ``day``; the shift ramps in over the preceding ``drift_days``."""

    day: float
    signals: tuple[int, ...]
    magnitude: float
    drift_days: float = 7.0


@dataclass
class UnitPlan:
    unit_id: str
    schedule: tuple[tuple[float, int], ...]  # (start day, regime id), first start is 0
    gain: np.ndarray | None = None
    offset: np.ndarray | None = None
    fault: FaultSpec | None = None
    seasonal: tuple[float, float] = (0.0, 0.0)  # (amplitude, phase) of a yearly swing along the drift direction


@dataclass
class FleetConfig:
    regimes: list[Regime]
    units: list[UnitPlan]
    n_signals: int = 24
    n_factors: int = 3
    period_minutes: float = 5.0
    duration_days: float = 365.0
    start: str = "2020-01-01T00:00:00Z"
    noise: float = 0.7  # relative to the regime amplitude
    factor_timescale_days: float = 1.0
    drift_direction: np.ndarray | None = None  # (n_signals,), in amplitude units

    @property
    def n_units(self) -> int:
        return len(self.units)

    def validate(self) -> None:
        for r in self.regimes:
            if r.mean.shape != (self.n_signals,) or r.amplitude.shape != (self.n_signals,):
                raise ValueError("regime mean/amplitude must have one entry per signal")
            if r.loadings.shape != (self.n_signals, self.n_factors):
                raise ValueError("regime loadings must be (n_signals, n_factors)")
        for u in self.units:
            sched = u.schedule
            if not sched or sched[0][0] != 0:
                raise ValueError(f"{u.unit_id}: schedule must start at day 0")
            days = [d for d, _ in sched]
            if any(b <= a for a, b in zip(days, days[1:])) or days[-1] >= self.duration_days:
                raise ValueError(f"{u.unit_id}: schedule days must increase within the horizon")
            if any(not 0 <= r < len(self.regimes) for _, r in sched):
                raise ValueError(f"{u.unit_id}: unknown regime id in schedule")
            if u.fault is not None:
                if not u.fault.magnitude > 0:
                    raise ValueError(f"{u.unit_id}: fault magnitude must be positive")
                if not 0 < u.fault.day < self.duration_days:
                    raise ValueError(f"{u.unit_id}: fault day outside the horizon")

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "n_signals": self.n_signals,
            "n_factors": self.n_factors,
            "period_minutes": self.period_minutes,
            "duration_days": self.duration_days,
            "start": self.start,
            "noise": self.noise,
            "factor_timescale_days": self.factor_timescale_days,
            "drift_direction": arr(self.drift_direction),
            "regimes": [
                {"mean": arr(r.mean), "amplitude": arr(r.amplitude), "loadings": arr(r.loadings)}
                for r in self.regimes
            ],
            "units": [
                {
                    "unit_id": u.unit_id,
                    "schedule": [list(s) for s in u.schedule],
                    "gain": arr(u.gain),
                    "offset": arr(u.offset),
                    "seasonal": list(u.seasonal),
                    "fault": None
                    if u.fault is None
                    else {
                        "day": u.fault.day,
                        "signals": list(u.fault.signals),
                        "magnitude": u.fault.magnitude,
                        "drift_days": u.fault.drift_days,
                    },
                }
                for u in self.units
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FleetConfig":
        def arr(a):
            return None if a is None else np.asarray(a, dtype=np.float64)

        regimes = [Regime(arr(r["mean"]), arr(r["amplitude"]), arr(r["loadings"])) for r in d["regimes"]]
        units = []
        for u in d["units"]:
            f = u.get("fault")
            units.append(
                UnitPlan(
                    unit_id=u["unit_id"],
                    schedule=tuple((float(a), int(b)) for a, b in u["schedule"]),
                    gain=arr(u.get("gain")),
                    offset=arr(u.get("offset")),
                    seasonal=tuple(float(v) for v in u.get("seasonal", (0.0, 0.0))),
                    fault=None
                    if f is None
                    else FaultSpec(float(f["day"]), tuple(int(s) for s in f["signals"]), float(f["magnitude"]),
                                   float(f["drift_days"])),
                )
            )
        keys = ("n_signals", "n_factors", "period_minutes", "duration_days", "start", "noise", "factor_timescale_days")
        return cls(regimes=regimes, units=units, drift_direction=arr(d.get("drift_direction")),
                   **{k: d[k] for k in keys if k in d})


def _latent_factors(rng: np.random.Generator, t_days: np.ndarray, n_factors: int, timescale: float) -> np.ndarray:
    n = t_days.shape[0]
    dt = float(np.median(np.diff(t_days))) if n > 1 else 1.0
    rho = np.exp(-dt / timescale)
    phases = rng.uniform(0.0, 2 * np.pi, size=n_factors)
    daily = np.sin(2 * np.pi * t_days[:, None] + phases)
    shocks = rng.standard_normal((n, n_factors)) * np.sqrt(1.0 - rho * rho)
    drift = np.empty((n, n_factors))
    drift[0] = rng.standard_normal(n_factors)
    for i in range(1, n):
        drift[i] = rho * drift[i - 1] + shocks[i]
    z = 0.5 * daily + drift
    z -= z.mean(axis=0)
    return z / z.std(axis=0)


def unit_timestamps(cfg: FleetConfig) -> np.ndarray:
    step = np.timedelta64(int(round(cfg.period_minutes * 60)), "s")
    n = int(round(cfg.duration_days * DAY_SECONDS / (cfg.period_minutes * 60)))
    return to_time(cfg.start) + step * np.arange(n)


def generate_unit(cfg: FleetConfig, unit_index: int, seed: int) -> UnitSeries:
    """Deterministic in ``(cfg, unit_index, seed)``."""
    cfg.validate()
    plan = cfg.units[unit_index]
    rng = np.random.default_rng([int(seed), int(unit_index)])
    ts = unit_timestamps(cfg)
    t_days = (ts - ts[0]).astype(np.float64) / DAY_SECONDS
    z = _latent_factors(rng, t_days, cfg.n_factors, cfg.factor_timescale_days)
    eps = rng.standard_normal((len(ts), cfg.n_signals))

    values = np.empty((len(ts), cfg.n_signals))
    starts = [d for d, _ in plan.schedule] + [np.inf]
    for (d0, r), d1 in zip(plan.schedule, starts[1:]):
        rows = (t_days >= d0) & (t_days < d1)
        reg = cfg.regimes[r]
        inner = z[rows] @ reg.loadings.T + cfg.noise * eps[rows]
        if cfg.drift_direction is not None and plan.seasonal[0] != 0.0:
            amp, phase = plan.seasonal
            swing = amp * np.sin(2 * np.pi * t_days[rows] / 365.0 + phase)
            inner += swing[:, None] * cfg.drift_direction
        values[rows] = reg.mean + reg.amplitude * inner
    if plan.gain is not None:
        values *= plan.gain
    if plan.offset is not None:
        values += plan.offset

    fault_time = None
    if plan.fault is not None:
        f = plan.fault
        sig = list(f.signals)
        std = values[t_days < TRAIN_SPAN / np.timedelta64(1, "D")][:, sig].std(axis=0)
        ramp = np.clip((t_days - (f.day - f.drift_days)) / max(f.drift_days, 1e-12), 0.0, 1.0)
        values[:, sig] += ramp[:, None] * (f.magnitude * std)
        fault_time = ts[0] + np.timedelta64(int(round(f.day * DAY_SECONDS)), "s")

    names = tuple(f"s{k:02d}" for k in range(cfg.n_signals))
    return UnitSeries(plan.unit_id, ts, values, names, fault_time=fault_time)


def generate_fleet(cfg: FleetConfig, seed: int, out_dir: str | Path) -> Path:
    """Write one CSV per unit, ``manifest.json`` and ``ground_truth.json``; return the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, plan in enumerate(cfg.units):
        series = generate_unit(cfg, k, seed)
        path = out_dir / f"{plan.unit_id}.csv"
        write_unit(series, path)
        entries.append(ManifestEntry(plan.unit_id, path, series.fault_time))
    manifest = out_dir / "manifest.json"
    write_manifest(manifest, entries, sampling_period_minutes=cfg.period_minutes)
    truth = {
        "seed": seed,
        "start": cfg.start,
        "units": {
            u.unit_id: {
                "schedule": [list(s) for s in u.schedule],
                "fault": None if u.fault is None else {
                    "detection_time": format_time(e.fault_time),
                    "signals": list(u.fault.signals),
                    "magnitude": u.fault.magnitude,
                    "drift_days": u.fault.drift_days,
                },
            }
            for u, e in zip(cfg.units, entries)
        },
        "config": cfg.to_dict(),
    }
    with open(out_dir / "ground_truth.json", "w") as fh:
        json.dump(truth, fh, indent=1)
        fh.write("\n")
    return manifest


def random_fleet_config(
    seed: int,
    n_units: int = 10,
    n_faulted: int = 2,
    n_signals: int = 24,
    n_factors: int = 3,
    n_regimes: int = 4,
    period_minutes: float = 5.0,
    duration_days: float = 365.0,
    regime_change_day: float = 90.0,
    fault_magnitude: float = 5.0,
    fault_signals: int = 3,
    noise: float = 0.7,
    regime_spread: float = 1.5,
    loading_jitter: float = 0.1,
    seasonal_range: tuple[float, float] = (0.0, 3.0),
) -> FleetConfig:
    """Fleet sharing one regime library.

    Faulted units run regime 0 and switch to regime 1 at ``regime_change_day``;
    their fault is detected between days ``duration - 50`` and ``duration - 25``.
    Healthy units start in a random regime and switch once or twice at random
    days. Regimes differ by a mean shift of ``regime_spread`` amplitudes along a
    shared direction, and by perturbed loadings. Healthy units also drift along
    that direction with a yearly sinusoid whose amplitude is drawn from
    ``seasonal_range``.
    """
    rng = np.random.default_rng(seed)
    base = rng.uniform(20.0, 80.0, n_signals)
    amplitude = rng.uniform(1.0, 3.0, n_signals)
    direction = rng.standard_normal(n_signals)
    loadings0 = rng.standard_normal((n_signals, n_factors))
    levels = regime_spread * np.array([0.0, 1.0, -1.0, 2.0, -2.0, 3.0])[:n_regimes]
    if n_regimes > len(levels):
        levels = np.concatenate([levels, regime_spread * rng.uniform(-3, 3, n_regimes - len(levels))])
    regimes = []
    for lev in levels:
        W = loadings0 + loading_jitter * rng.standard_normal((n_signals, n_factors))
        W /= np.linalg.norm(W, axis=1, keepdims=True)
        regimes.append(Regime(base + lev * direction * amplitude, amplitude.copy(), W))

    units = []
    for k in range(n_units):
        gain = rng.uniform(0.9, 1.1, n_signals)
        offset = 0.5 * amplitude * rng.standard_normal(n_signals)
        if k < n_faulted:
            schedule = ((0.0, 0), (float(regime_change_day), 1))
            day = float(np.round(rng.uniform(duration_days - 50.0, duration_days - 25.0), 1))
            sig = tuple(int(s) for s in np.sort(rng.choice(n_signals, fault_signals, replace=False)))
            fault = FaultSpec(day, sig, fault_magnitude)
        else:
            n_switch = int(rng.integers(1, 3))
            days = np.sort(rng.choice(np.arange(30, int(duration_days) - 30), n_switch, replace=False))
            reg = [int(rng.integers(n_regimes))]
            for _ in days:
                reg.append(int(rng.choice([r for r in range(n_regimes) if r != reg[-1]])))
            schedule = tuple(zip([0.0, *map(float, days)], reg))
            fault = None
        seasonal = (float(rng.uniform(*seasonal_range)), float(rng.uniform(0.0, 2 * np.pi)))
        if k < n_faulted:
            seasonal = (0.0, 0.0)
        units.append(UnitPlan(f"unit_{k:02d}", schedule, gain, offset, fault, seasonal))
    return FleetConfig(regimes, units, n_signals, n_factors, period_minutes, duration_days, noise=noise,
                       drift_direction=direction)
