"""Day-ahead device schedules and their grid-code validation.

A schedule fixes the tap position for each of the 24 hours and, for each
capacitor, at most one contiguous commitment interval. Grid codes limit
the number of daily tap changes and confine capacitor commitments to each
unit's allowed window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import OltcSpec, ScSpec

HOURS = 24


@dataclass(frozen=True)
class DaySchedule:
    """Tap position per hour plus one optional ON interval [h0, h1) per capacitor."""

    oltc_taps: tuple[int, ...]
    sc_intervals: tuple[tuple[int, int] | None, ...]

    def tap_at(self, hour: int) -> int:
        return self.oltc_taps[hour]

    def sc_states_at(self, hour: int) -> np.ndarray:
        return np.array(
            [iv is not None and iv[0] <= hour < iv[1] for iv in self.sc_intervals], dtype=bool
        )

    def to_dict(self) -> dict:
        scs = []
        for k, iv in enumerate(self.sc_intervals):
            entry: dict = {"id": k + 1}
            if iv is not None:
                entry["on"] = [iv[0], iv[1]]
            scs.append(entry)
        return {"oltc_taps": list(self.oltc_taps), "scs": scs}

    @classmethod
    def from_dict(cls, data: dict, n_sc: int | None = None) -> "DaySchedule":
        taps = tuple(int(t) for t in data["oltc_taps"])
        entries = {int(e["id"]): e for e in data.get("scs", [])}
        count = n_sc if n_sc is not None else (max(entries) if entries else 0)
        intervals: list[tuple[int, int] | None] = []
        for k in range(1, count + 1):
            e = entries.get(k)
            if e is not None and "on" in e:
                intervals.append((int(e["on"][0]), int(e["on"][1])))
            else:
                intervals.append(None)
        return cls(oltc_taps=taps, sc_intervals=tuple(intervals))


def neutral_schedule(n_sc: int) -> DaySchedule:
    """Reference position all day, every capacitor off."""
    return DaySchedule(oltc_taps=(0,) * HOURS, sc_intervals=(None,) * n_sc)


def count_tap_changes(taps: tuple[int, ...], carried_tap: int) -> int:
    changes = 0
    prev = carried_tap
    for t in taps:
        if t != prev:
            changes += 1
        prev = t
    return changes


def validate_schedule(
    sched: DaySchedule,
    oltc: OltcSpec,
    scs: tuple[ScSpec, ...],
    carried_tap: int = 0,
) -> list[str]:
    """Return every grid-code violation; an empty list means executable.

    Each violation names the device, the rule, and the offending hour(s).
    """
    violations: list[str] = []
    taps = sched.oltc_taps
    if len(taps) != HOURS:
        violations.append(f"oltc: schedule must cover {HOURS} hours, got {len(taps)}")
        return violations
    lo, hi = -oltc.max_tap, oltc.max_tap
    for h, t in enumerate(taps):
        if not (lo <= t <= hi):
            violations.append(f"oltc: tap {t} at hour {h} outside range {lo}..{hi}")
    changes = count_tap_changes(taps, carried_tap)
    if changes > oltc.daily_change_limit:
        violations.append(
            f"oltc: {changes} tap changes exceed the daily limit of {oltc.daily_change_limit}"
        )
    if len(sched.sc_intervals) != len(scs):
        violations.append(
            f"capacitors: schedule covers {len(sched.sc_intervals)} units, case has {len(scs)}"
        )
        return violations
    for k, (sc, iv) in enumerate(zip(scs, sched.sc_intervals)):
        if iv is None:
            continue
        h0, h1 = iv
        if not (0 <= h0 < h1 <= 24):
            violations.append(f"sc{k + 1} at bus {sc.bus}: empty or out-of-range interval {iv}")
            continue
        w0, w1 = sc.window
        if h0 < w0 or h1 > w1:
            violations.append(
                f"sc{k + 1} at bus {sc.bus}: interval {h0}-{h1} outside allowed window {w0}-{w1}"
            )
    return violations


def random_schedule(
    rng: np.random.Generator,
    oltc: OltcSpec,
    scs: tuple[ScSpec, ...],
    carried_tap: int = 0,
) -> DaySchedule:
    """Uniform random schedule that is valid by construction.

    Samples k <= daily_change_limit change hours with uniform new taps
    (repeats collapse into fewer effective changes), and per capacitor a
    fair coin for commitment with a uniform sub-interval of its window.
    """
    k = int(rng.integers(0, oltc.daily_change_limit + 1))
    taps = [carried_tap] * HOURS
    if k > 0:
        change_hours = np.sort(rng.choice(HOURS, size=k, replace=False))
        current = carried_tap
        pos = 0
        for h in range(HOURS):
            if pos < k and h == change_hours[pos]:
                current = int(rng.integers(-oltc.max_tap, oltc.max_tap + 1))
                pos += 1
            taps[h] = current
    intervals: list[tuple[int, int] | None] = []
    for sc in scs:
        if rng.random() < 0.5:
            intervals.append(None)
            continue
        w0, w1 = sc.window
        h0 = int(rng.integers(w0, w1))
        h1 = int(rng.integers(h0 + 1, w1 + 1))
        intervals.append((h0, h1))
    return DaySchedule(oltc_taps=tuple(taps), sc_intervals=tuple(intervals))
