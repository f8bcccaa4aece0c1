"""Seeded synthetic PV/load time series and day-ahead forecasts.

A year of node-level truth is generated at 15-minute resolution (96 steps
per day): a double-peak daily load shape with seasonal modulation and
day-to-day noise, and a clear-sky PV bell scaled by season and a per-day
cloud factor. The day-ahead side only ever sees hourly region-level net
load with multiplicative forecast noise - the information asymmetry the
two controllers are built around.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import Network, builtin_case_path

STEPS = 96
STEPS_PER_HOUR = 4
HOURS = 24


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    load_peaks_mw: tuple[float, ...]
    power_factor: float = 0.9
    days: int = 365
    pv_scale: float = 1.0
    seasonal_amplitude: float = 0.15
    cloud_min: float = 0.2
    day_noise: float = 0.10
    forecast_noise_sigma: float = 0.05
    daylight: tuple[float, float] = (6.0, 18.0)

    def __post_init__(self) -> None:
        if any(p < 0 for p in self.load_peaks_mw):
            raise ValueError("load peaks must be >= 0")
        if not (0.0 < self.power_factor <= 1.0):
            raise ValueError(f"power factor must be in (0, 1], got {self.power_factor}")
        if not (0.0 < self.pv_scale <= 1.0):
            raise ValueError(f"pv_scale must be in (0, 1], got {self.pv_scale}")
        if not (0.0 < self.cloud_min <= 1.0):
            raise ValueError(f"cloud_min must be in (0, 1], got {self.cloud_min}")
        if self.days < 1:
            raise ValueError("days must be >= 1")

    @classmethod
    def from_json(cls, path: str | Path) -> "ScenarioConfig":
        data = json.loads(Path(path).read_text())
        return cls(
            seed=int(data["seed"]),
            load_peaks_mw=tuple(float(x) for x in data["load_peaks_mw"]),
            power_factor=float(data.get("power_factor", 0.9)),
            days=int(data.get("days", 365)),
            pv_scale=float(data.get("pv_scale", 1.0)),
            seasonal_amplitude=float(data.get("seasonal_amplitude", 0.15)),
            cloud_min=float(data.get("cloud_min", 0.2)),
            day_noise=float(data.get("day_noise", 0.10)),
            forecast_noise_sigma=float(data.get("forecast_noise_sigma", 0.05)),
            daylight=tuple(float(x) for x in data.get("daylight", (6.0, 18.0))),
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "days": self.days,
            "load_peaks_mw": list(self.load_peaks_mw),
            "power_factor": self.power_factor,
            "pv_scale": self.pv_scale,
            "seasonal_amplitude": self.seasonal_amplitude,
            "cloud_min": self.cloud_min,
            "day_noise": self.day_noise,
            "forecast_noise_sigma": self.forecast_noise_sigma,
            "daylight": list(self.daylight),
        }


def builtin_scenario(name: str) -> "ScenarioConfig":
    """Scenario config shipped next to a built-in case (e.g. 'ieee33')."""
    return ScenarioConfig.from_json(
        builtin_case_path(name).with_name(f"{name}_scenario.json")
    )


@dataclass(frozen=True)
class DayProfile:
    """Node-level truth for one day: 96-step loads and PV generation (MW/MVAr)."""

    day_index: int
    load_p: np.ndarray  # (n_buses, 96) MW
    load_q: np.ndarray  # (n_buses, 96) MVAr
    pv_p: np.ndarray  # (n_pvs, 96) MW


@dataclass(frozen=True)
class RegionForecast:
    """Hourly net-load forecast per region and for the whole system (MW).

    Deliberately coarse: no node-level and no sub-hourly information exists
    on this side of the day boundary.
    """

    region_mw: np.ndarray  # (n_regions, 24)
    system_mw: np.ndarray  # (24,)


_STEP_HOURS = np.arange(STEPS) / STEPS_PER_HOUR


def _daily_load_shape(t_hours: np.ndarray) -> np.ndarray:
    """Double-peak shape, ~1.0 at the evening peak, ~0.35 overnight."""
    morning = 0.30 * np.exp(-(((t_hours - 8.5) / 2.5) ** 2))
    evening = 0.65 * np.exp(-(((t_hours - 19.0) / 3.0) ** 2))
    return 0.35 + morning + evening


def _pv_shape(t_hours: np.ndarray, daylight: tuple[float, float]) -> np.ndarray:
    """Clear-sky bell: half-cosine over the daylight window, zero outside."""
    rise, set_ = daylight
    mid = 0.5 * (rise + set_)
    half = 0.5 * (set_ - rise)
    bell = np.cos(0.5 * math.pi * (t_hours - mid) / half)
    bell[(t_hours < rise) | (t_hours >= set_)] = 0.0
    return np.clip(bell, 0.0, None)


def _seasonal_load(day: int, amplitude: float) -> float:
    # winter-peaking: max near mid-January
    return 1.0 + amplitude * math.cos(2.0 * math.pi * (day - 15) / 365.0)


def _seasonal_pv(day: int, amplitude: float) -> float:
    # summer-peaking, kept <= 1 so generation never exceeds capacity
    return 1.0 - amplitude * 0.5 * (1.0 - math.cos(2.0 * math.pi * (day - 172) / 365.0))


def generate_day(net: Network, cfg: ScenarioConfig, day: int) -> DayProfile:
    """Deterministic profile for one day; days are independently seeded so a
    year can be produced in any order or in parallel."""
    if not (0 <= day < cfg.days):
        raise ValueError(f"day {day} outside 0..{cfg.days - 1}")
    if len(cfg.load_peaks_mw) != net.n_buses:
        raise ValueError(
            f"config has {len(cfg.load_peaks_mw)} load peaks, case has {net.n_buses} buses"
        )
    rng = np.random.default_rng([cfg.seed, day])
    peaks = np.asarray(cfg.load_peaks_mw)

    shape = _daily_load_shape(_STEP_HOURS)
    season = _seasonal_load(day, cfg.seasonal_amplitude)
    bus_noise = rng.uniform(1.0 - cfg.day_noise, 1.0 + cfg.day_noise, size=net.n_buses)
    load_p = peaks[:, None] * bus_noise[:, None] * season * shape[None, :]
    load_q = load_p * math.tan(math.acos(cfg.power_factor))

    bell = _pv_shape(_STEP_HOURS, cfg.daylight)
    pv_season = _seasonal_pv(day, cfg.seasonal_amplitude)
    cloud = rng.uniform(cfg.cloud_min, 1.0)
    caps = np.array([pv.s_mva for pv in net.pvs])
    pv_p = caps[:, None] * cfg.pv_scale * pv_season * cloud * bell[None, :]

    return DayProfile(day_index=day, load_p=load_p, load_q=load_q, pv_p=pv_p)


def generate_year(net: Network, cfg: ScenarioConfig) -> list[DayProfile]:
    return [generate_day(net, cfg, d) for d in range(cfg.days)]


def net_load_mw(net: Network, day: DayProfile) -> np.ndarray:
    """Per-bus net load (load minus PV), shape (n_buses, 96)."""
    net_mw = day.load_p.copy()
    for k, pv in enumerate(net.pvs):
        net_mw[pv.bus] -= day.pv_p[k]
    return net_mw


def true_hourly_region_net_load(net: Network, day: DayProfile) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free hourly means per region and for the system, shape (M,24)/(24,)."""
    per_bus = net_load_mw(net, day)
    hourly_bus = per_bus.reshape(net.n_buses, HOURS, STEPS_PER_HOUR).mean(axis=2)
    region = np.zeros((net.region_count, HOURS))
    for b in net.buses:
        region[b.region - 1] += hourly_bus[b.id]
    return region, hourly_bus.sum(axis=0)


def make_forecast(
    net: Network,
    day: DayProfile,
    rng: np.random.Generator,
    sigma: float = 0.05,
) -> RegionForecast:
    """Noisy day-ahead forecast: truth times (1 + eta), eta ~ N(0, sigma),
    drawn independently for every (region, hour) cell and for each system
    hour. sigma = 0 is the exact-forecast test hook."""
    region_true, system_true = true_hourly_region_net_load(net, day)
    if sigma == 0.0:
        return RegionForecast(region_mw=region_true, system_mw=system_true)
    region_noise = rng.normal(0.0, sigma, size=region_true.shape)
    system_noise = rng.normal(0.0, sigma, size=system_true.shape)
    return RegionForecast(
        region_mw=region_true * (1.0 + region_noise),
        system_mw=system_true * (1.0 + system_noise),
    )


def dump_year(net: Network, cfg: ScenarioConfig, out_dir: str | Path) -> None:
    """Write the generated year as one JSON file per day for audit."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for d in range(cfg.days):
        day = generate_day(net, cfg, d)
        payload = {
            "day_index": d,
            "load_p_mw": day.load_p.round(9).tolist(),
            "load_q_mvar": day.load_q.round(9).tolist(),
            "pv_p_mw": day.pv_p.round(9).tolist(),
        }
        (out / f"day_{d:03d}.json").write_text(json.dumps(payload))
