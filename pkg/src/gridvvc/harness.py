"""Experiment orchestration: train each method over seeds, evaluate on
held-out days, aggregate the comparison table, and post-process curves.

Methods:
  proposed      advisor improvement -> freeze knowledge base -> pretrained
                RL finetuned under the frozen day-ahead policy
  original      neutral schedule, inverters idle (no training at all)
  no-llm        neutral schedule, RL trained in the exploration regime
  no-rl         advisor schedules, inverters idle
  pure-rl       both stages learned by RL (masking + penalties)
  no-pt         proposed without RL pretraining
  no-reflexion  proposed with zero refinement rounds (base still updates)

Every number in the results table is recomputable from the per-episode
JSON logs written next to it.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .advisor import Advisor, AdvisorConfig
from .dayahead import KnowledgeBase, improve, make_advisor, propose_schedule
from .dayahead_rl import DayAheadPolicy, rollout_day_ahead, train_pure_rl
from .env import VoltageControlEnv, observation_dim, zero_policy
from .network import Network, load_case
from .ppo import ActorCritic, PpoConfig, finetune, pretrain
from .scenario import ScenarioConfig, generate_day, make_forecast
from .schedule import neutral_schedule

METHODS = ("proposed", "original", "no-llm", "no-rl", "pure-rl", "no-pt", "no-reflexion")

DAY_SPLIT_SEED = 9621
EVAL_NOISE_SEED = 777
TEST_DAYS_PER_SEED = 25


@dataclass(frozen=True)
class ExperimentConfig:
    case_path: str
    scenario: ScenarioConfig
    method: str
    out_dir: str
    seeds: tuple[int, ...] = (0, 1, 2)
    llm_episodes: int = 200
    pretrain_episodes: int = 1500
    finetune_episodes: int = 150
    test_episodes: int = TEST_DAYS_PER_SEED
    reflexion_rounds: int = 3
    advisor: AdvisorConfig = field(default_factory=AdvisorConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; pick one of {METHODS}")
        if not self.seeds:
            raise ValueError("at least one seed required")
        for budget in (self.llm_episodes, self.pretrain_episodes, self.finetune_episodes):
            if budget < 0:
                raise ValueError("episode budgets must be >= 0")


@dataclass
class MethodResult:
    method: str
    deviation_mean: float
    deviation_std: float
    violation_mean: float
    violation_std: float
    episodes: int


def split_days(total_days: int, n_seeds: int) -> tuple[list[int], dict[int, list[int]]]:
    """Deterministic train/test day split shared by every method.

    The first n_seeds * 25 days of a seeded shuffle are held out for
    evaluation (25 per seed, disjoint between seeds); the rest train.
    """
    perm = np.random.default_rng(DAY_SPLIT_SEED).permutation(total_days)
    held_out = n_seeds * TEST_DAYS_PER_SEED
    if held_out >= total_days:
        raise ValueError(f"{total_days} days cannot hold out {held_out} test days")
    test_by_seed = {
        k: sorted(int(d) for d in perm[k * TEST_DAYS_PER_SEED : (k + 1) * TEST_DAYS_PER_SEED])
        for k in range(n_seeds)
    }
    train_pool = sorted(int(d) for d in perm[held_out:])
    for days in test_by_seed.values():
        assert not set(days) & set(train_pool)
    return train_pool, test_by_seed


def _write_curve(path: Path, curve: list[float]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "reward"])
        for i, r in enumerate(curve):
            writer.writerow([i, repr(float(r))])


def _seed_dir(cfg: ExperimentConfig, seed: int) -> Path:
    return Path(cfg.out_dir) / cfg.method / f"seed{seed}"


def _make_schedule_source(advisor: Advisor, kb: KnowledgeBase, net: Network, scenario):
    """Frozen day-ahead policy as a finetune schedule source."""

    def source(day, rng):
        forecast = make_forecast(net, day, rng, scenario.forecast_noise_sigma)
        return propose_schedule(advisor, kb, forecast, net, mode="test").schedule

    return source


def run_method(cfg: ExperimentConfig) -> dict:
    """Train one method for every seed; artifacts land under
    out_dir/<method>/seed<k>/. Returns the manifest (also written to disk)."""
    net = load_case(cfg.case_path)
    train_pool, test_by_seed = split_days(cfg.scenario.days, len(cfg.seeds))
    manifest: dict = {"method": cfg.method, "seeds": list(cfg.seeds), "stages": {}}

    for idx, seed in enumerate(cfg.seeds):
        out = _seed_dir(cfg, seed)
        out.mkdir(parents=True, exist_ok=True)
        stages: dict[str, str] = {}

        if cfg.method in ("proposed", "no-rl", "no-pt", "no-reflexion"):
            rounds = 0 if cfg.method == "no-reflexion" else cfg.reflexion_rounds
            advisor = make_advisor(cfg.advisor, net)
            kb, curve = improve(
                net,
                cfg.scenario,
                advisor,
                episodes=cfg.llm_episodes,
                n_rounds=rounds,
                seed=seed,
                day_pool=train_pool,
                transcript_dir=out / "transcripts",
            )
            kb.save(out / "kb.json")
            _write_curve(out / "curve_improve.csv", curve)
            stages["improve"] = f"{cfg.llm_episodes} episodes, {len(kb)} entries"

        if cfg.method in ("proposed", "no-reflexion"):
            ac, curve = pretrain(
                net, cfg.scenario, cfg.pretrain_episodes, cfg.ppo, seed, train_pool
            )
            ac.save(out / "params_pretrained.npz")
            _write_curve(out / "curve_pretrain.csv", curve)
            stages["pretrain"] = f"{cfg.pretrain_episodes} episodes"
            kb = KnowledgeBase.load(out / "kb.json")
            advisor = make_advisor(cfg.advisor, net)
            source = _make_schedule_source(advisor, kb, net, cfg.scenario)
            ac, curve = finetune(
                ac, net, cfg.scenario, source, cfg.finetune_episodes, cfg.ppo, seed, train_pool
            )
            ac.save(out / "params.npz")
            _write_curve(out / "curve_finetune.csv", curve)
            stages["finetune"] = f"{cfg.finetune_episodes} episodes"

        elif cfg.method == "no-pt":
            kb = KnowledgeBase.load(out / "kb.json")
            advisor = make_advisor(cfg.advisor, net)
            source = _make_schedule_source(advisor, kb, net, cfg.scenario)
            env = VoltageControlEnv(net)
            fresh = ActorCritic(
                observation_dim(net),
                env.action_bounds,
                cfg.ppo,
                np.random.default_rng([seed, 101]),
            )
            ac, curve = finetune(
                fresh, net, cfg.scenario, source, cfg.finetune_episodes, cfg.ppo, seed, train_pool
            )
            ac.save(out / "params.npz")
            _write_curve(out / "curve_finetune.csv", curve)
            stages["finetune"] = f"{cfg.finetune_episodes} episodes (no pretraining)"

        elif cfg.method == "no-llm":
            neutral = neutral_schedule(len(net.scs))
            ac, curve = pretrain(
                net,
                cfg.scenario,
                cfg.pretrain_episodes,
                cfg.ppo,
                seed,
                train_pool,
                schedule_source=lambda rng: neutral,
            )
            ac.save(out / "params.npz")
            _write_curve(out / "curve_pretrain.csv", curve)
            stages["pretrain"] = f"{cfg.pretrain_episodes} episodes (neutral schedules)"

        elif cfg.method == "pure-rl":
            da, intra, curve = train_pure_rl(
                net, cfg.scenario, cfg.pretrain_episodes, cfg.ppo, seed, train_pool
            )
            da.save(out / "dayahead.npz")
            intra.save(out / "params.npz")
            _write_curve(out / "curve_train.csv", curve)
            stages["train"] = f"{cfg.pretrain_episodes} joint episodes"

        elif cfg.method == "original":
            stages["none"] = "evaluation-only baseline"

        (out / "manifest.json").write_text(
            json.dumps({"method": cfg.method, "seed": seed, "stages": stages})
        )
        manifest["stages"][str(seed)] = stages
        manifest["test_days"] = {str(s): test_by_seed[i] for i, s in enumerate(cfg.seeds)}

    Path(cfg.out_dir, cfg.method, "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest


def _eval_policies(cfg: ExperimentConfig, net: Network, seed_dir: Path):
    """(schedule_fn(forecast), policy_fn(observation)) for one trained seed."""
    method = cfg.method
    n_sc = len(net.scs)

    if method in ("original", "no-llm"):
        schedule_fn = lambda forecast: neutral_schedule(n_sc)
    elif method in ("no-rl", "proposed", "no-pt", "no-reflexion"):
        kb = KnowledgeBase.load(seed_dir / "kb.json")
        advisor = make_advisor(cfg.advisor, net)
        schedule_fn = lambda forecast: propose_schedule(
            advisor, kb, forecast, net, mode="test"
        ).schedule
    elif method == "pure-rl":
        da = DayAheadPolicy.load(seed_dir / "dayahead.npz", net, cfg.ppo)
        schedule_fn = lambda forecast: rollout_day_ahead(da, forecast, None, stochastic=False)[0]
    else:
        raise AssertionError(method)

    if method in ("original", "no-rl"):
        policy = zero_policy
    else:
        ac = ActorCritic.load(seed_dir / "params.npz", cfg.ppo)
        policy = ac.policy(deterministic=True)
    return schedule_fn, policy


def evaluate(cfg: ExperimentConfig) -> MethodResult:
    """Deterministic held-out evaluation of a trained method.

    25 test days per seed, disjoint from training days; per-episode logs are
    written as JSON and the aggregate row as CSV.
    """
    net = load_case(cfg.case_path)
    _, test_by_seed = split_days(cfg.scenario.days, len(cfg.seeds))
    deviations: list[float] = []
    violations: list[float] = []
    episode_rows: list[dict] = []
    for idx, seed in enumerate(cfg.seeds):
        seed_dir = _seed_dir(cfg, seed)
        if cfg.method != "original" and not seed_dir.exists():
            raise FileNotFoundError(f"missing artifacts for seed {seed}: {seed_dir}")
        seed_dir.mkdir(parents=True, exist_ok=True)
        schedule_fn, policy = _eval_policies(cfg, net, seed_dir)
        env = VoltageControlEnv(net)
        for day_index in test_by_seed[idx][: cfg.test_episodes]:
            day = generate_day(net, cfg.scenario, day_index)
            noise_rng = np.random.default_rng([EVAL_NOISE_SEED, seed, day_index])
            forecast = make_forecast(net, day, noise_rng, cfg.scenario.forecast_noise_sigma)
            schedule = schedule_fn(forecast)
            log = env.run_day(policy, day, schedule)
            deviations.append(log.deviation)
            violations.append(log.violation_rate)
            episode_rows.append(
                {
                    "seed": seed,
                    "day": day_index,
                    "total_reward": log.total_reward,
                    "deviation": log.deviation,
                    "violation_rate": log.violation_rate,
                    "schedule": schedule.to_dict(),
                }
            )

    result = MethodResult(
        method=cfg.method,
        deviation_mean=float(np.mean(deviations)),
        deviation_std=float(np.std(deviations)),
        violation_mean=float(np.mean(violations)),
        violation_std=float(np.std(violations)),
        episodes=len(deviations),
    )
    out = Path(cfg.out_dir) / cfg.method
    out.mkdir(parents=True, exist_ok=True)
    (out / "episodes.json").write_text(json.dumps(episode_rows))
    write_result_table([result], out / "result.csv")
    return result


def write_result_table(results: list[MethodResult], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["method", "deviation_mean", "deviation_std", "violation_mean", "violation_std", "episodes"]
        )
        for r in results:
            writer.writerow(
                [r.method, repr(r.deviation_mean), repr(r.deviation_std),
                 repr(r.violation_mean), repr(r.violation_std), r.episodes]
            )


def recompute_from_episode_logs(path: str | Path) -> tuple[float, float]:
    """Re-derive (deviation mean, violation mean) from persisted episode logs."""
    rows = json.loads(Path(path).read_text())
    return (
        float(np.mean([r["deviation"] for r in rows])),
        float(np.mean([r["violation_rate"] for r in rows])),
    )


def moving_average(values: np.ndarray, window: int = 25) -> np.ndarray:
    """Valid-mode moving average: length max(0, n - window + 1)."""
    values = np.asarray(values, dtype=float)
    if len(values) < window:
        return values.copy()
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")


def report(out_dir: str | Path, window: int = 25) -> list[Path]:
    """Post-process every training curve under out_dir: per-seed moving
    averages plus their pointwise mean/std band, one CSV per stage."""
    out_dir = Path(out_dir)
    written: list[Path] = []
    for method_dir in sorted(p for p in out_dir.iterdir() if p.is_dir()):
        stage_names = sorted(
            {p.name for p in method_dir.glob("seed*/curve_*.csv")}
        )
        for stage_file in stage_names:
            per_seed = []
            seed_names = []
            for seed_dir in sorted(method_dir.glob("seed*")):
                curve_path = seed_dir / stage_file
                if not curve_path.exists():
                    continue
                with curve_path.open() as fh:
                    rows = list(csv.DictReader(fh))
                per_seed.append(moving_average([float(r["reward"]) for r in rows], window))
                seed_names.append(seed_dir.name)
            if not per_seed:
                continue
            length = min(len(c) for c in per_seed)
            stacked = np.stack([c[:length] for c in per_seed])
            target = method_dir / stage_file.replace("curve_", "report_")
            with target.open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["episode"] + seed_names + ["mean", "std"])
                for i in range(length):
                    row = [i] + [repr(float(v)) for v in stacked[:, i]]
                    row += [repr(float(stacked[:, i].mean())), repr(float(stacked[:, i].std()))]
                    writer.writerow(row)
            written.append(target)
    return written
