"""Day-ahead scheduling agent.

Pipeline per day: retrieve the most similar stored day, assemble a prompt
(task + forecast + output grammar + reasoning guidance + optional
reference day + optional feedback), query the advisor, parse the fenced
answer block, validate against the grid codes, and re-prompt with the
failure reason if needed. Offline improvement additionally runs refinement
rounds on environment feedback and folds the best result back into the
knowledge base under a similarity threshold.

The scripted advisor at the bottom is a deterministic drop-in for the
remote chat backend so the whole pipeline runs offline; its rule table is
documented in the README.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .advisor import Advisor, AdvisorConfig, AdvisorTransportError, HttpChatBackend
from .env import EpisodeLog, VoltageControlEnv, zero_policy
from .network import Network
from .scenario import HOURS, DayProfile, RegionForecast
from .schedule import DaySchedule, neutral_schedule, validate_schedule

NORM_FLOOR = 1e-9


# --- similarity and knowledge base ------------------------------------------


def similarity(fa: np.ndarray, fb: np.ndarray) -> float:
    """Product of temporal similarity (cosine of the two 24-hour profiles)
    and magnitude similarity (ratio of absolute daily sums, min over max).

    Degenerate profiles: a near-zero-norm side zeroes the temporal factor;
    two near-zero sums give magnitude 1, exactly one gives 0.
    """
    fa = np.asarray(fa, dtype=float)
    fb = np.asarray(fb, dtype=float)
    if fa.shape != (HOURS,) or fb.shape != (HOURS,):
        raise ValueError(f"profiles must be {HOURS}-vectors")
    na = float(np.linalg.norm(fa))
    nb = float(np.linalg.norm(fb))
    ts = 0.0 if (na < NORM_FLOOR or nb < NORM_FLOOR) else float(fa @ fb) / (na * nb)
    sa = abs(float(fa.sum()))
    sb = abs(float(fb.sum()))
    if sa < NORM_FLOOR and sb < NORM_FLOOR:
        ms = 1.0
    elif sa < NORM_FLOOR or sb < NORM_FLOOR:
        ms = 0.0
    else:
        ms = min(sa, sb) / max(sa, sb)
    return ts * ms


@dataclass
class KnowledgeEntry:
    """One remembered day: what was forecast, what was scheduled, and how it went."""

    system_mw: np.ndarray  # (24,)
    region_mw: np.ndarray  # (n_regions, 24)
    schedule: DaySchedule
    reward: float
    hourly_v_system: np.ndarray  # (24,)
    hourly_v_region: np.ndarray  # (n_regions, 24)

    def to_dict(self) -> dict:
        return {
            "system_mw": self.system_mw.tolist(),
            "region_mw": self.region_mw.tolist(),
            "schedule": self.schedule.to_dict(),
            "reward": self.reward,
            "hourly_v_system": self.hourly_v_system.tolist(),
            "hourly_v_region": self.hourly_v_region.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KnowledgeEntry":
        region = np.array(data["region_mw"], dtype=float)
        return cls(
            system_mw=np.array(data["system_mw"], dtype=float),
            region_mw=region,
            schedule=DaySchedule.from_dict(data["schedule"]),
            reward=float(data["reward"]),
            hourly_v_system=np.array(data["hourly_v_system"], dtype=float),
            hourly_v_region=np.array(data["hourly_v_region"], dtype=float),
        )


class KnowledgeBase:
    """Append/replace store of historical days keyed by forecast similarity."""

    SCHEMA_VERSION = 1

    def __init__(self, threshold: float = 0.7):
        self.threshold = threshold
        self.entries: list[KnowledgeEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def retrieve(self, system_forecast: np.ndarray) -> tuple[KnowledgeEntry | None, float, int]:
        """Most similar stored entry: (entry, similarity, index).

        An empty base returns (None, -inf, -1); -inf always sits below the
        update threshold, so unmatched days are appended.
        """
        if not self.entries:
            return None, float("-inf"), -1
        scores = [similarity(e.system_mw, system_forecast) for e in self.entries]
        idx = int(np.argmax(scores))
        return self.entries[idx], float(scores[idx]), idx

    def save(self, path: str | Path) -> None:
        payload = {
            "version": self.SCHEMA_VERSION,
            "threshold": self.threshold,
            "entries": [e.to_dict() for e in self.entries],
        }
        Path(path).write_text(json.dumps(payload))

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeBase":
        data = json.loads(Path(path).read_text())
        if data.get("version") != cls.SCHEMA_VERSION:
            raise ValueError(f"unsupported knowledge base version {data.get('version')}")
        kb = cls(threshold=float(data["threshold"]))
        kb.entries = [KnowledgeEntry.from_dict(e) for e in data["entries"]]
        return kb


def update_kb(
    kb: KnowledgeBase,
    candidate: KnowledgeEntry,
    eps_hat: float,
    matched_index: int,
) -> str:
    """Threshold-gated update. Below the threshold the day is novel and is
    appended; at or above it the candidate replaces the matched entry only
    if it earned a strictly better reward. Returns the action taken."""
    if eps_hat < kb.threshold:
        kb.entries.append(candidate)
        return "appended"
    if candidate.reward > kb.entries[matched_index].reward:
        kb.entries[matched_index] = candidate
        return "replaced"
    return "discarded"


# --- prompt assembly ---------------------------------------------------------

SECTION_TASK = "== Feeder and task =="
SECTION_FORECAST = "== Forecast (MW) =="
SECTION_FORMAT = "== Output format =="
SECTION_GUIDANCE = "== Reasoning guidance =="
SECTION_REFERENCE = "== Reference day =="
SECTION_FEEDBACK = "== Previous attempt and feedback =="
SECTION_CORRECTION = "== Correction request =="

SYSTEM_MESSAGE = (
    "You schedule day-ahead voltage control devices for a radial distribution "
    "feeder. You answer with careful reasoning followed by a single fenced "
    "answer block in the exact grammar requested."
)


def format_hourly(values: np.ndarray, decimals: int = 4) -> str:
    return ", ".join(f"h{h:02d}={values[h]:.{decimals}f}" for h in range(HOURS))


def parse_hourly(text: str) -> np.ndarray:
    pairs = re.findall(r"h(\d\d)=(-?\d+(?:\.\d+)?)", text)
    values = np.full(HOURS, np.nan)
    for hour, value in pairs:
        h = int(hour)
        if 0 <= h < HOURS:
            values[h] = float(value)
    if np.isnan(values).any():
        raise ValueError("incomplete 24-hour series")
    return values


def format_schedule_line(sched: DaySchedule) -> str:
    events = [f"0={sched.oltc_taps[0]}"]
    for h in range(1, HOURS):
        if sched.oltc_taps[h] != sched.oltc_taps[h - 1]:
            events.append(f"{h}={sched.oltc_taps[h]}")
    parts = ["OLTC: " + ", ".join(events)]
    for k, iv in enumerate(sched.sc_intervals):
        parts.append(f"SC{k + 1}: OFF" if iv is None else f"SC{k + 1}: ON {iv[0]}-{iv[1]}")
    return " / ".join(parts)


def _task_section(net: Network, carried_tap: int) -> str:
    oltc = net.oltc
    lines = [
        SECTION_TASK,
        f"The feeder has {net.n_buses} buses grouped into {net.region_count} regions; "
        f"the voltage target is {net.v_ref:.4f} p.u. and the allowed band is "
        f"[{net.v_min:.2f}, {net.v_max:.2f}] p.u.",
        "Devices under day-ahead control:",
        f"- Root transformer tap: positions {-oltc.max_tap}..{oltc.max_tap}, each step shifts "
        f"the source voltage by {oltc.step_pu:.4f} p.u. Grid code: at most "
        f"{oltc.daily_change_limit} tap changes per day; a change at hour 0 relative to the "
        f"carried-in tap counts toward the limit.",
    ]
    for k, sc in enumerate(net.scs):
        lines.append(
            f"- SC{k + 1}: capacitor at bus {sc.bus} (region {net.region_of(sc.bus)}), "
            f"{sc.q_mvar:.3f} MVAr when committed. Grid code: may only be committed inside "
            f"hours {sc.window[0]:02d}-{sc.window[1]:02d}, as at most one contiguous interval "
            f"per day."
        )
    lines += [
        f"Carried-in tap position: {carried_tap}",
        "Task: from the hourly net-load forecast for the next day, schedule the tap position "
        "per hour and each capacitor's commitment interval. High net load depresses voltages "
        "(raise the tap, commit capacitors over the load peak); strongly negative net load "
        "(solar surplus) lifts voltages (lower the tap around midday).",
    ]
    return "\n".join(lines)


def _forecast_section(forecast: RegionForecast) -> str:
    lines = [SECTION_FORECAST]
    for r in range(forecast.region_mw.shape[0]):
        lines.append(f"Region {r + 1} net load: {format_hourly(forecast.region_mw[r])}")
    lines.append(f"System net load: {format_hourly(forecast.system_mw)}")
    return "\n".join(lines)


def _format_section(net: Network, carried_tap: int) -> str:
    sc_lines = "\n".join(
        f"SC{k + 1}: ON <h0>-<h1>   (or: SC{k + 1}: OFF)" for k in range(len(net.scs))
    )
    return (
        f"{SECTION_FORMAT}\n"
        "End your reply with exactly one fenced block of this shape:\n"
        "```\n"
        "OLTC: <hour>=<tap>, <hour>=<tap>, ...\n"
        f"{sc_lines}\n"
        "```\n"
        "The OLTC line lists tap change events; a position holds until the next event; "
        f"if hour 0 is absent the carried-in tap {carried_tap} holds. "
        "Each capacitor line is either ON <h0>-<h1> (committed for hours h0 through h1-1) "
        "or OFF."
    )


def _guidance_section() -> str:
    return (
        f"{SECTION_GUIDANCE}\n"
        "Reason in steps before the final block: "
        "(1) describe the trend and magnitude of the system and region net load; "
        "(2) pick each capacitor's interval from its region's peak-load hours inside its "
        "window; (3) pick tap events within the change budget, lowering where net load is "
        "strongly negative and raising where it peaks; (4) emit the answer block."
    )


def _reference_section(entry: KnowledgeEntry, eps_hat: float) -> str:
    lines = [
        SECTION_REFERENCE,
        f"Most similar stored day, similarity {eps_hat:.3f}.",
        f"System net load: {format_hourly(entry.system_mw)}",
        f"Schedule: {format_schedule_line(entry.schedule)}",
        f"Total reward: {entry.reward:.4f} (0 is a perfectly flat voltage day)",
        f"System hourly mean voltage: {format_hourly(entry.hourly_v_system)}",
    ]
    for r in range(entry.region_mw.shape[0]):
        lines.append(f"Region {r + 1} net load: {format_hourly(entry.region_mw[r])}")
        lines.append(
            f"Region {r + 1} hourly mean voltage: {format_hourly(entry.hourly_v_region[r])}"
        )
    return "\n".join(lines)


def _feedback_section(net: Network, schedule: DaySchedule, log: EpisodeLog) -> str:
    lines = [
        SECTION_FEEDBACK,
        f"Schedule: {format_schedule_line(schedule)}",
        f"Total reward: {log.total_reward:.4f}",
        f"System hourly mean voltage: {format_hourly(log.hourly_system_v)}",
    ]
    for r in range(log.hourly_region_v.shape[0]):
        lines.append(
            f"Region {r + 1} hourly mean voltage: {format_hourly(log.hourly_region_v[r])}"
        )
    lines.append(
        f"Refine this schedule: raise the tap over hours whose mean voltage sits below "
        f"{net.v_ref - 0.01:.4f}, lower it over hours above {net.v_ref + 0.01:.4f}, within "
        "the grid codes, then emit a corrected answer block."
    )
    return "\n".join(lines)


def build_prompt(
    net: Network,
    forecast: RegionForecast,
    carried_tap: int = 0,
    few_shot: KnowledgeEntry | None = None,
    few_shot_similarity: float = 0.0,
    feedback: tuple[DaySchedule, EpisodeLog] | None = None,
    correction: str | None = None,
) -> list[dict]:
    """Deterministic chat messages for one scheduling request."""
    sections = [
        _task_section(net, carried_tap),
        _forecast_section(forecast),
        _format_section(net, carried_tap),
        _guidance_section(),
    ]
    if few_shot is not None:
        sections.append(_reference_section(few_shot, few_shot_similarity))
    if feedback is not None:
        sections.append(_feedback_section(net, feedback[0], feedback[1]))
    if correction is not None:
        sections.append(
            f"{SECTION_CORRECTION}\n"
            f"Your previous reply was rejected: {correction}. "
            "Emit a corrected answer block that satisfies the grammar and the grid codes."
        )
    return [
        {"role": "system", "content": SYSTEM_MESSAGE},
        {"role": "user", "content": "\n\n".join(sections)},
    ]


# --- response parsing ---------------------------------------------------------


class ScheduleParseError(ValueError):
    """Response text does not yield a schedule; .reason feeds the re-prompt."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


_FENCE_RE = re.compile(r"```[a-zA-Z]*\n?(.*?)```", re.S)
_OLTC_EVENT_RE = re.compile(r"^h?(\d{1,2})\s*=\s*([+-]?\d+)$")
_SC_ON_RE = re.compile(r"^ON\s+(\d{1,2})\s*-\s*(\d{1,2})$", re.I)


def _answer_segments(text: str) -> list[str]:
    blocks = _FENCE_RE.findall(text)
    if blocks:
        body = blocks[-1]
    else:
        # lenient fallback: a bare OLTC line cluster outside fences
        lines = text.splitlines()
        start = None
        for i, line in enumerate(lines):
            if line.strip().startswith("OLTC:"):
                start = i
        if start is None:
            raise ScheduleParseError("missing answer block")
        body_lines = []
        for line in lines[start:]:
            if not line.strip():
                break
            body_lines.append(line)
        body = "\n".join(body_lines)
    segments = []
    for line in body.splitlines():
        for seg in line.split(" / "):
            seg = seg.strip()
            if seg:
                segments.append(seg)
    if not segments:
        raise ScheduleParseError("missing answer block")
    return segments


def parse_response(
    text: str,
    oltc,
    n_sc: int,
    carried_tap: int = 0,
) -> DaySchedule:
    """Extract the final answer block and expand it into a full schedule.

    Raises ScheduleParseError with a distinct reason per failure kind:
    missing block, malformed line, tap out of range, hour out of range.
    """
    segments = _answer_segments(text)
    events: dict[int, int] = {}
    have_oltc = False
    intervals: dict[int, tuple[int, int] | None] = {}
    for seg in segments:
        if seg.upper().startswith("OLTC:"):
            if have_oltc:
                raise ScheduleParseError("malformed line: duplicate OLTC line")
            have_oltc = True
            rest = seg[5:].strip()
            items = [item.strip() for item in rest.split(",") if item.strip()]
            if not items:
                raise ScheduleParseError("malformed line: OLTC line has no events")
            for item in items:
                m = _OLTC_EVENT_RE.match(item)
                if not m:
                    raise ScheduleParseError(f"malformed line: OLTC event {item!r}")
                hour, tap = int(m.group(1)), int(m.group(2))
                if not (0 <= hour < HOURS):
                    raise ScheduleParseError(f"hour out of range: OLTC event at hour {hour}")
                if abs(tap) > oltc.max_tap:
                    raise ScheduleParseError(
                        f"tap out of range: {tap} outside +-{oltc.max_tap}"
                    )
                if hour in events:
                    raise ScheduleParseError(f"malformed line: duplicate OLTC hour {hour}")
                events[hour] = tap
            continue
        m = re.match(r"^SC(\d+)\s*:\s*(.+)$", seg, re.I)
        if not m:
            raise ScheduleParseError(f"malformed line: {seg!r}")
        k = int(m.group(1))
        if not (1 <= k <= n_sc):
            raise ScheduleParseError(f"malformed line: unknown capacitor SC{k}")
        if k in intervals:
            raise ScheduleParseError(f"malformed line: duplicate line for SC{k}")
        body = m.group(2).strip()
        if body.upper() == "OFF":
            intervals[k] = None
            continue
        on = _SC_ON_RE.match(body)
        if not on:
            raise ScheduleParseError(f"malformed line: SC{k} state {body!r}")
        h0, h1 = int(on.group(1)), int(on.group(2))
        if not (0 <= h0 < h1 <= 24):
            raise ScheduleParseError(f"hour out of range: SC{k} interval {h0}-{h1}")
        intervals[k] = (h0, h1)
    if not have_oltc:
        raise ScheduleParseError("malformed line: missing OLTC line")
    taps = []
    current = carried_tap
    for h in range(HOURS):
        if h in events:
            current = events[h]
        taps.append(current)
    return DaySchedule(
        oltc_taps=tuple(taps),
        sc_intervals=tuple(intervals.get(k) for k in range(1, n_sc + 1)),
    )


# --- proposing and refining ----------------------------------------------------


@dataclass
class ProposalResult:
    schedule: DaySchedule
    fallback_used: bool
    transport_failed: bool
    attempts: int
    eps_hat: float
    matched_index: int
    matched_entry: KnowledgeEntry | None
    transcripts: list[dict] = field(default_factory=list)


def _attempt_schedule(
    advisor: Advisor,
    net: Network,
    mode: str,
    carried_tap: int,
    make_messages,
    transcripts: list[dict],
) -> tuple[DaySchedule | None, bool]:
    """Prompt/parse/validate with re-prompts; each retry is a fresh dialogue
    carrying the last failure reason. Returns (schedule or None, transport_failed)."""
    reason: str | None = None
    for attempt in range(advisor.cfg.max_reprompts):
        messages = make_messages(reason)
        try:
            text = advisor.complete(messages, mode)
        except AdvisorTransportError as exc:
            transcripts.append({"messages": messages, "error": str(exc)})
            return None, True
        transcripts.append({"messages": messages, "response": text})
        try:
            candidate = parse_response(text, net.oltc, len(net.scs), carried_tap)
        except ScheduleParseError as exc:
            reason = exc.reason
            continue
        violations = validate_schedule(candidate, net.oltc, net.scs, carried_tap)
        if violations:
            reason = "; ".join(violations)
            continue
        return candidate, False
    return None, False


def propose_schedule(
    advisor: Advisor,
    kb: KnowledgeBase,
    forecast: RegionForecast,
    net: Network,
    mode: str,
    carried_tap: int = 0,
) -> ProposalResult:
    """One day-ahead decision: retrieve, prompt, parse, validate.

    After exhausting re-prompts (or on transport failure) the retrieved
    entry's schedule is used if it is valid here, else the neutral
    schedule; either way the pipeline never stalls.
    """
    entry, eps_hat, idx = kb.retrieve(forecast.system_mw)
    transcripts: list[dict] = []

    def make_messages(reason: str | None) -> list[dict]:
        return build_prompt(
            net,
            forecast,
            carried_tap=carried_tap,
            few_shot=entry,
            few_shot_similarity=eps_hat,
            correction=reason,
        )

    schedule, transport_failed = _attempt_schedule(
        advisor, net, mode, carried_tap, make_messages, transcripts
    )
    fallback_used = schedule is None
    if schedule is None:
        retrieved_ok = entry is not None and (
            validate_schedule(entry.schedule, net.oltc, net.scs, carried_tap) == []
        )
        schedule = entry.schedule if retrieved_ok else neutral_schedule(len(net.scs))
    return ProposalResult(
        schedule=schedule,
        fallback_used=fallback_used,
        transport_failed=transport_failed,
        attempts=len(transcripts),
        eps_hat=eps_hat,
        matched_index=idx,
        matched_entry=entry,
        transcripts=transcripts,
    )


@dataclass
class ReflectionResult:
    schedule: DaySchedule
    reward: float
    candidates: list[tuple[DaySchedule, EpisodeLog]]
    eps_hat: float
    matched_index: int
    fallback_used: bool
    transcripts: list[dict]


def reflect_and_improve(
    env: VoltageControlEnv,
    advisor: Advisor,
    kb: KnowledgeBase,
    day: DayProfile,
    forecast: RegionForecast,
    n_rounds: int,
    mode: str = "train",
    carried_tap: int = 0,
) -> ReflectionResult:
    """Offline self-improvement for one day: evaluate the initial proposal
    (with inverters idle - the day-ahead stage is improved before the
    intra-day agent enters), then n_rounds of feedback-driven refinement.
    Returns the best of the n_rounds + 1 candidates.
    """
    net = env.net
    proposal = propose_schedule(advisor, kb, forecast, net, mode, carried_tap)
    transcripts = list(proposal.transcripts)
    schedule = proposal.schedule
    log = env.run_day(zero_policy, day, schedule, carried_tap)
    candidates: list[tuple[DaySchedule, EpisodeLog]] = [(schedule, log)]

    prev_schedule, prev_log = schedule, log
    for _ in range(n_rounds):

        def make_messages(reason: str | None) -> list[dict]:
            return build_prompt(
                net,
                forecast,
                carried_tap=carried_tap,
                few_shot=proposal.matched_entry,
                few_shot_similarity=proposal.eps_hat,
                feedback=(prev_schedule, prev_log),
                correction=reason,
            )

        refined, _ = _attempt_schedule(
            advisor, net, mode, carried_tap, make_messages, transcripts
        )
        if refined is None:
            candidates.append((prev_schedule, prev_log))
            continue
        refined_log = env.run_day(zero_policy, day, refined, carried_tap)
        candidates.append((refined, refined_log))
        prev_schedule, prev_log = refined, refined_log

    best_idx = int(np.argmax([c[1].total_reward for c in candidates]))
    best_schedule, best_log = candidates[best_idx]
    return ReflectionResult(
        schedule=best_schedule,
        reward=best_log.total_reward,
        candidates=candidates,
        eps_hat=proposal.eps_hat,
        matched_index=proposal.matched_index,
        fallback_used=proposal.fallback_used,
        transcripts=transcripts,
    )


def entry_from_result(forecast: RegionForecast, result: ReflectionResult) -> KnowledgeEntry:
    best_log = result.candidates[int(np.argmax([c[1].total_reward for c in result.candidates]))][1]
    return KnowledgeEntry(
        system_mw=np.array(forecast.system_mw, dtype=float),
        region_mw=np.array(forecast.region_mw, dtype=float),
        schedule=result.schedule,
        reward=result.reward,
        hourly_v_system=best_log.hourly_system_v.copy(),
        hourly_v_region=best_log.hourly_region_v.copy(),
    )


def improve(
    net: Network,
    scenario,
    advisor: Advisor,
    episodes: int,
    n_rounds: int,
    seed: int,
    day_pool: list[int] | None = None,
    kb: KnowledgeBase | None = None,
    transcript_dir: str | Path | None = None,
) -> tuple[KnowledgeBase, list[float]]:
    """Offline self-improvement phase: one sampled day per episode, the best
    candidate reward goes on the curve, and the knowledge base evolves under
    the threshold rule. Transcripts are written per episode when a directory
    is given."""
    from .scenario import generate_day, make_forecast

    rng = np.random.default_rng([seed, 303])
    env = VoltageControlEnv(net)
    kb = kb if kb is not None else KnowledgeBase()
    pool = list(range(scenario.days)) if day_pool is None else list(day_pool)
    curve: list[float] = []
    out = Path(transcript_dir) if transcript_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    for ep in range(episodes):
        day = generate_day(net, scenario, int(rng.choice(pool)))
        forecast = make_forecast(net, day, rng, scenario.forecast_noise_sigma)
        result = reflect_and_improve(env, advisor, kb, day, forecast, n_rounds, mode="train")
        update_kb(kb, entry_from_result(forecast, result), result.eps_hat, result.matched_index)
        curve.append(result.reward)
        if out:
            (out / f"episode_{ep:04d}.json").write_text(
                json.dumps(
                    {
                        "episode": ep,
                        "day": day.day_index,
                        "reward": result.reward,
                        "fallback_used": result.fallback_used,
                        "transcripts": result.transcripts,
                    }
                )
            )
    return kb, curve


# --- scripted advisor ----------------------------------------------------------


def _split_sections(text: str) -> dict[str, str]:
    sections: dict[str, str] = {}
    current: str | None = None
    lines: list[str] = []
    for line in text.splitlines():
        if line.startswith("== ") and line.rstrip().endswith(" =="):
            if current is not None:
                sections[current] = "\n".join(lines)
            current = line.strip()
            lines = []
        else:
            lines.append(line)
    if current is not None:
        sections[current] = "\n".join(lines)
    return sections


def merge_to_budget(desired: list[int], carried_tap: int, budget: int) -> tuple[int, ...]:
    """Reduce a per-hour tap wishlist to at most `budget` changes by folding
    the shortest runs into their neighbors (earliest shortest run first)."""
    runs: list[list[int]] = []  # [tap, length]
    for tap in desired:
        if runs and runs[-1][0] == tap:
            runs[-1][1] += 1
        else:
            runs.append([tap, 1])

    def change_count() -> int:
        changes = 0
        prev = carried_tap
        for tap, _ in runs:
            if tap != prev:
                changes += 1
            prev = tap
        return changes

    while change_count() > budget:
        if len(runs) == 1:
            runs[0][0] = carried_tap
            break
        shortest = min(range(len(runs)), key=lambda i: (runs[i][1], i))
        target = shortest - 1 if shortest > 0 else 1
        runs[target][1] += runs[shortest][1]
        del runs[shortest]
        # re-fuse identical neighbors
        fused: list[list[int]] = []
        for tap, length in runs:
            if fused and fused[-1][0] == tap:
                fused[-1][1] += length
            else:
                fused.append([tap, length])
        runs = fused
    out: list[int] = []
    for tap, length in runs:
        out.extend([tap] * length)
    return tuple(out)


class ScriptedAdvisor:
    """Deterministic rule-table backend emulating the chat advisor.

    Initial proposal: adopt the reference day's schedule when its stated
    similarity clears `adopt_similarity`; otherwise one tap step down per
    half of the peak solar surplus at hours below -threshold, one step up
    per half of the peak net load at hours above +threshold (threshold =
    rel_threshold * max |net load|), folded into the change budget, and
    each capacitor committed over its region's best two consecutive
    peak-load hours inside its window. Refinement: shift the prior tap +-1
    over hours whose fed-back system mean voltage deviates from the target
    by more than the deadband, budget permitting.
    """

    def __init__(
        self,
        net: Network,
        rel_threshold: float = 0.3,
        adopt_similarity: float = 0.7,
        deadband: float = 0.01,
    ):
        self.net = net
        self.rel_threshold = rel_threshold
        self.adopt_similarity = adopt_similarity
        self.deadband = deadband

    # chat-backend interface; sampling parameters are accepted and ignored
    def complete(self, messages: list[dict], temperature: float, top_p: float) -> str:
        prompt = messages[-1]["content"]
        sections = _split_sections(prompt)
        carried = 0
        m = re.search(r"Carried-in tap position: (-?\d+)", prompt)
        if m:
            carried = int(m.group(1))
        corrected = SECTION_CORRECTION in sections
        if SECTION_FEEDBACK in sections:
            return self._refine(sections, carried)
        return self._initial(sections, carried, allow_adoption=not corrected)

    def _parse_line(self, body: str, label: str) -> np.ndarray:
        m = re.search(rf"^{re.escape(label)}: (.+)$", body, re.M)
        if not m:
            raise ValueError(f"prompt lacks line {label!r}")
        return parse_hourly(m.group(1))

    def _initial(self, sections: dict[str, str], carried: int, allow_adoption: bool) -> str:
        reference = sections.get(SECTION_REFERENCE)
        if reference and allow_adoption:
            m = re.search(r"similarity (\d+\.\d+)", reference)
            sched_line = re.search(r"^Schedule: (.+)$", reference, re.M)
            if m and sched_line and float(m.group(1)) >= self.adopt_similarity:
                try:
                    sched = parse_response(
                        "```\n" + sched_line.group(1).replace(" / ", "\n") + "\n```",
                        self.net.oltc,
                        len(self.net.scs),
                        carried,
                    )
                except ScheduleParseError:
                    sched = None
                if sched is not None:
                    return self._render(
                        sched.oltc_taps,
                        sched.sc_intervals,
                        "The stored reference day matches this forecast closely; "
                        "its schedule already handled the same pattern well, so I reuse it.",
                    )

        body = sections[SECTION_FORECAST]
        system = self._parse_line(body, "System net load")
        regions = [
            self._parse_line(body, f"Region {r} net load")
            for r in range(1, self.net.region_count + 1)
        ]
        scale = float(np.max(np.abs(system)))
        desired = [0] * HOURS
        if scale > 0:
            threshold = self.rel_threshold * scale
            peak_pos = max(float(system.max()), 0.0)
            peak_neg = max(float(-system.min()), 0.0)
            for h in range(HOURS):
                value = float(system[h])
                if value < -threshold and peak_neg > 0:
                    steps = int(np.ceil(-value / (0.5 * peak_neg)))
                    desired[h] = -min(steps, self.net.oltc.max_tap)
                elif value > threshold and peak_pos > 0:
                    steps = int(np.ceil(value / (0.5 * peak_pos)))
                    desired[h] = min(steps, self.net.oltc.max_tap)
        taps = merge_to_budget(desired, carried, self.net.oltc.daily_change_limit)

        intervals: list[tuple[int, int] | None] = []
        for sc in self.net.scs:
            region = self.net.region_of(sc.bus)
            profile = regions[region - 1]
            w0, w1 = sc.window
            if w1 - w0 >= 2:
                hours = range(w0, w1 - 1)
                best = max(hours, key=lambda h: (profile[h] + profile[h + 1], -h))
                intervals.append((best, best + 2))
            else:
                intervals.append((w0, w1))
        comment = (
            f"System net load peaks at {system.max():.2f} MW (hour {int(system.argmax()):02d}) "
            f"and bottoms at {system.min():.2f} MW (hour {int(system.argmin()):02d}). "
            "Capacitors cover their regional peaks; taps track the net-load sign."
        )
        return self._render(taps, tuple(intervals), comment)

    def _refine(self, sections: dict[str, str], carried: int) -> str:
        body = sections[SECTION_FEEDBACK]
        sched_line = re.search(r"^Schedule: (.+)$", body, re.M)
        prior = parse_response(
            "```\n" + sched_line.group(1).replace(" / ", "\n") + "\n```",
            self.net.oltc,
            len(self.net.scs),
            carried,
        )
        voltages = self._parse_line(body, "System hourly mean voltage")
        desired = list(prior.oltc_taps)
        for h in range(HOURS):
            if voltages[h] < self.net.v_ref - self.deadband:
                desired[h] = min(desired[h] + 1, self.net.oltc.max_tap)
            elif voltages[h] > self.net.v_ref + self.deadband:
                desired[h] = max(desired[h] - 1, -self.net.oltc.max_tap)
        taps = merge_to_budget(desired, carried, self.net.oltc.daily_change_limit)
        low = int(np.sum(voltages < self.net.v_ref - self.deadband))
        high = int(np.sum(voltages > self.net.v_ref + self.deadband))
        comment = (
            f"Feedback shows {low} hours below and {high} hours above the deadband; "
            "taps are nudged one step against the deviation where the budget allows."
        )
        return self._render(taps, prior.sc_intervals, comment)

    def _render(
        self,
        taps: tuple[int, ...],
        intervals: tuple[tuple[int, int] | None, ...],
        comment: str,
    ) -> str:
        events = [f"0={taps[0]}"]
        for h in range(1, HOURS):
            if taps[h] != taps[h - 1]:
                events.append(f"{h}={taps[h]}")
        lines = ["OLTC: " + ", ".join(events)]
        for k, iv in enumerate(intervals):
            lines.append(f"SC{k + 1}: OFF" if iv is None else f"SC{k + 1}: ON {iv[0]}-{iv[1]}")
        return comment + "\n```\n" + "\n".join(lines) + "\n```\n"


def make_advisor(cfg: AdvisorConfig, net: Network) -> Advisor:
    if cfg.backend == "scripted":
        return Advisor(cfg, ScriptedAdvisor(net))
    return Advisor(cfg, HttpChatBackend(cfg))
