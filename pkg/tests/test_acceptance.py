"""Acceptance suite: one test per release criterion, cheap checks first.

Criterion 7 trains the full 33-bus experiment matrix at the release budgets
(200 advisor episodes, 1500 exploration episodes, 150 adaptation episodes,
3 seeds) and takes the bulk of the runtime; everything else is minutes or
less. Each test prints a PASS line with the measured numbers so the run
doubles as the release report.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from gridvvc.advisor import Advisor, AdvisorConfig
from gridvvc.dayahead import (
    KnowledgeBase,
    ScriptedAdvisor,
    entry_from_result,
    make_advisor,
    propose_schedule,
    reflect_and_improve,
    similarity,
    update_kb,
)
from gridvvc.dayahead_rl import DayAheadPolicy, rollout_day_ahead
from gridvvc.env import VoltageControlEnv
from gridvvc.harness import (
    ExperimentConfig,
    evaluate,
    run_method,
    split_days,
)
from gridvvc.network import builtin_case_path, load_builtin_case
from gridvvc.ppo import ActorCritic, PpoConfig, compute_gae, gradient_check, pretrain
from gridvvc.powerflow import residual, solve_powerflow
from gridvvc.scenario import builtin_scenario, generate_day, make_forecast
from gridvvc.schedule import DaySchedule, random_schedule, validate_schedule

from oracles import brute_force_schedule_check, newton_powerflow, random_radial_case


def report(criterion: int, detail: str) -> None:
    print(f"ACCEPTANCE {criterion}: PASS - {detail}")


# -- 1. power-flow correctness -------------------------------------------------


def test_criterion_1_powerflow_against_newton_oracle():
    rng = np.random.default_rng(2026)
    t0 = time.time()
    worst_gap = 0.0
    worst_residual = 0.0
    for _ in range(200):
        net, inj = random_radial_case(rng, max_buses=12)
        sol = solve_powerflow(net, inj, 1.0)
        vm, _ = newton_powerflow(net, inj, 1.0)
        worst_gap = max(worst_gap, float(np.max(np.abs(sol.v_mag - vm))))
        worst_residual = max(worst_residual, residual(net, sol, inj))
    elapsed = time.time() - t0
    assert worst_gap < 1e-7
    assert worst_residual <= 1e-8
    assert elapsed < 30.0
    report(1, f"200 cases, max |sweep-newton| {worst_gap:.2e}, "
              f"max residual {worst_residual:.2e}, {elapsed:.1f}s")


# -- 2. gradient audit ----------------------------------------------------------


def test_criterion_2_gradient_check():
    t0 = time.time()
    worst = max(gradient_check(seed=s) for s in range(5))
    elapsed = time.time() - t0
    assert worst < 1e-4
    assert elapsed < 10.0
    report(2, f"max relative error {worst:.2e} over 5 seeds, {elapsed:.1f}s")


# -- 3. advantage estimator oracle ----------------------------------------------


def test_criterion_3_gae_oracle():
    rng = np.random.default_rng(33)
    worst = 0.0
    for _ in range(100):
        T = int(rng.integers(1, 17))
        rewards = rng.standard_normal(T)
        values = rng.standard_normal(T)
        terminal = float(rng.standard_normal())
        gamma = float(rng.uniform(0.0, 0.999))
        lam = float(rng.uniform(0.0, 1.0))
        adv, ret = compute_gae(rewards, values, terminal, gamma, lam)
        next_values = np.append(values[1:], terminal)
        deltas = rewards + gamma * next_values - values
        direct = np.array(
            [sum((gamma * lam) ** k * deltas[t + k] for k in range(T - t)) for t in range(T)]
        )
        worst = max(worst, float(np.max(np.abs(adv - direct))))
        worst = max(worst, float(np.max(np.abs(ret - (direct + values)))))
    assert worst < 1e-10
    report(3, f"100 trajectories, max |gae - direct sum| {worst:.2e}")


# -- 4. constraint guarantees ----------------------------------------------------


def test_criterion_4_constraint_guarantees():
    net = load_builtin_case("ieee33")
    oltc = net.oltc
    scs = net.scs
    rng = np.random.default_rng(44)

    # 4a: fuzzing the validator against the literal rule checker; half of the
    # draws are segment-structured so both accept and reject paths are hit
    disagreements = 0
    accepted = 0
    for trial in range(100_000):
        if trial % 2 == 0:
            taps = tuple(int(t) for t in rng.integers(-7, 8, size=24))
        else:
            taps_list = []
            tap = int(rng.integers(-6, 7))
            while len(taps_list) < 24:
                run = int(rng.integers(1, 12))
                taps_list.extend([tap] * run)
                tap = int(rng.integers(-6, 7))
            taps = tuple(taps_list[:24])
        intervals = []
        for sc in scs:
            roll = rng.random()
            if roll < 0.35:
                intervals.append(None)
            elif roll < 0.7:
                h0 = int(rng.integers(sc.window[0], sc.window[1]))
                intervals.append((h0, int(rng.integers(h0 + 1, sc.window[1] + 1))))
            else:
                intervals.append((int(rng.integers(0, 24)), int(rng.integers(0, 25))))
        sched = DaySchedule(oltc_taps=taps, sc_intervals=tuple(intervals))
        carried = int(rng.integers(-5, 6))
        ours = validate_schedule(sched, oltc, scs, carried) == []
        accepted += ours
        disagreements += ours != brute_force_schedule_check(sched, oltc, scs, carried)
    assert disagreements == 0
    assert 0 < accepted < 100_000  # fuzz covers both classes

    # 4b: the reactive bound holds exactly for sampled actions
    scen = builtin_scenario("ieee33")
    env = VoltageControlEnv(net)
    day = generate_day(net, scen, 100)
    env.reset(day, random_schedule(rng, oltc, scs))
    lam = env.action_bounds
    s_mva = np.array([pv.s_mva for pv in net.pvs])
    bound_violations = 0
    for _ in range(100_000 // 50):
        t = int(rng.integers(0, 96))
        actions = rng.uniform(-lam, lam, size=(50, len(lam)))
        headroom = np.sqrt(np.maximum(s_mva**2 - day.pv_p[:, t] ** 2, 0.0))
        for a in actions:
            q = env.reactive_setpoints(a, t)
            if np.any(np.abs(q) > lam * headroom + 1e-12):
                bound_violations += 1
    assert bound_violations == 0

    # 4c: proposal paths never emit an invalid schedule
    class NoiseBackend:
        def __init__(self, rng):
            self.rng = rng
            self.junk = [
                "no block at all",
                "```\nOLTC: 0=9\n```",
                "```\nOLTC: 0=0, 2=1, 4=0, 6=1, 8=0, 10=1\n```",
                "```\nOLTC: 0=1\nSC1: ON 1-3\nSC2: OFF\nSC3: OFF\n```",
                "```\nOLTC: 0=-2, 11=0\nSC1: ON 7-9\nSC2: OFF\nSC3: OFF\n```",
                "```\nOLTC: garbage\n```",
                "```\nSC1: ON 8-10\n```",
            ]

        def complete(self, messages, temperature, top_p):
            return self.junk[int(self.rng.integers(len(self.junk)))]

    day_pool = list(range(0, 300, 3))
    invalid = 0
    forecasts = []
    for d in day_pool[:40]:
        day = generate_day(net, scen, d)
        forecasts.append(make_forecast(net, day, rng, scen.forecast_noise_sigma))
    for backend in (NoiseBackend(rng), ScriptedAdvisor(net)):
        advisor = Advisor(AdvisorConfig(), backend)
        for fc in forecasts:
            proposal = propose_schedule(advisor, KnowledgeBase(), fc, net, "train")
            invalid += validate_schedule(proposal.schedule, oltc, scs) != []
    policy = DayAheadPolicy(net, PpoConfig(hidden=(8, 8)), rng)
    for k in range(10_000):
        sched, _, _ = rollout_day_ahead(policy, forecasts[k % len(forecasts)], rng, stochastic=True)
        invalid += validate_schedule(sched, oltc, scs) != []
    assert invalid == 0
    report(4, f"validator fuzz 100000 schedules ({accepted} legal) zero disagreements; "
              "100000 actions inside the reactive bound; no invalid proposals "
              "(80 advisor days, 10000 learned-baseline rollouts)")


# -- 5. similarity and knowledge-base suite ---------------------------------------


def test_criterion_5_similarity_and_kb():
    fa = np.linspace(1.0, 3.0, 24)
    assert abs(similarity(fa, fa) - 1.0) < 1e-9
    assert abs(similarity(fa, 2.0 * fa) - 0.5) < 1e-9
    step = np.concatenate([np.ones(12), np.zeros(12)])
    expected = 12.0 / np.sqrt(288.0) * 0.5
    assert abs(similarity(np.ones(24), step) - expected) < 1e-9

    def entry(profile, reward):
        profile = np.asarray(profile, dtype=float)
        from gridvvc.dayahead import KnowledgeEntry
        from gridvvc.schedule import neutral_schedule

        return KnowledgeEntry(
            system_mw=profile,
            region_mw=np.tile(profile / 3, (3, 1)),
            schedule=neutral_schedule(3),
            reward=reward,
            hourly_v_system=np.full(24, 0.99),
            hourly_v_region=np.full((3, 24), 0.99),
        )

    kb = KnowledgeBase(threshold=0.7)
    assert update_kb(kb, entry(np.ones(24), -4.0), 0.5, -1) == "appended"
    assert update_kb(kb, entry(np.ones(24), -3.0), 0.8, 0) == "replaced"
    assert update_kb(kb, entry(np.ones(24), -5.0), 0.8, 0) == "discarded"
    assert kb.entries[0].reward == -3.0

    rng = np.random.default_rng(55)
    kb = KnowledgeBase(threshold=0.7)
    slot_rewards: dict[int, float] = {}
    monotone = True
    for _ in range(1000):
        profile = rng.uniform(0.3, 3.0) * np.abs(rng.normal(1.0, 0.4, 24))
        cand = entry(profile, float(-rng.uniform(0.1, 9.0)))
        _, eps, idx = kb.retrieve(cand.system_mw)
        action = update_kb(kb, cand, eps, idx)
        if action == "appended":
            slot_rewards[len(kb) - 1] = cand.reward
        elif action == "replaced":
            monotone &= cand.reward > slot_rewards[idx]
            slot_rewards[idx] = cand.reward
        for slot, e in enumerate(kb.entries):
            monotone &= e.reward >= slot_rewards[slot] - 1e-12
    assert monotone
    report(5, f"similarity examples to 1e-9; update branches exact; "
              f"per-slot rewards non-decreasing over 1000 updates ({len(kb)} slots)")


# -- 6. learning sanity on the toy feeder ------------------------------------------

TOY_PPO = PpoConfig(hidden=(64, 64), days_per_update=4, lr_explore_start=5e-4,
                    entropy_coef=0.005)


def test_criterion_6_toy_learning_sanity():
    net = load_builtin_case("toy5")
    scen = builtin_scenario("toy5")
    train_pool, _ = split_days(scen.days, 3)
    t0 = time.time()
    improvements = []
    for seed in (0, 1, 2):
        _, curve = pretrain(net, scen, 200, TOY_PPO, seed=seed, day_pool=train_pool)
        c = np.asarray(curve)
        first = c[:10].mean()
        last = c[-20:].mean()
        improvements.append((last - first) / abs(first))
    elapsed = time.time() - t0
    assert elapsed < 600.0
    assert all(imp >= 0.5 for imp in improvements), improvements
    report(6, "toy improvement per seed: "
              + ", ".join(f"{imp:.0%}" for imp in improvements) + f"; {elapsed:.0f}s")


# -- 7. calibrated end-to-end ordering ----------------------------------------------


@pytest.fixture(scope="module")
def matrix_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("matrix")
    base = dict(
        case_path=str(builtin_case_path("ieee33")),
        scenario=builtin_scenario("ieee33"),
        out_dir=str(out),
        seeds=(0, 1, 2),
    )
    results = {}
    for method in ("original", "no-rl", "no-llm", "proposed"):
        cfg = ExperimentConfig(method=method, **base)
        run_method(cfg)
        results[method] = evaluate(cfg)
    return out, results


def test_criterion_7_end_to_end_ordering(matrix_run):
    _, results = matrix_run
    original = results["original"]
    proposed = results["proposed"]
    no_rl = results["no-rl"]
    no_llm = results["no-llm"]
    for r in results.values():
        assert r.episodes == 75
    assert 1.5e-2 <= original.deviation_mean <= 3.5e-2
    assert original.violation_mean >= 3.0
    assert proposed.deviation_mean < no_rl.deviation_mean
    assert proposed.deviation_mean < no_llm.deviation_mean
    assert proposed.deviation_mean <= 0.5 * original.deviation_mean
    assert proposed.violation_mean < 0.5
    report(7, f"original {original.deviation_mean:.3e}/{original.violation_mean:.2f}%, "
              f"no-rl {no_rl.deviation_mean:.3e}, no-llm {no_llm.deviation_mean:.3e}, "
              f"proposed {proposed.deviation_mean:.3e}/{proposed.violation_mean:.3f}% "
              f"(ratio {proposed.deviation_mean / original.deviation_mean:.2f})")


def test_criterion_7b_finetune_paired_improvement(matrix_run):
    # adaptation never loses to the pretrained params under the same frozen
    # day-ahead schedules, paired over each seed's held-out days
    out, _ = matrix_run
    net = load_builtin_case("ieee33")
    scen = builtin_scenario("ieee33")
    _, test_by_seed = split_days(scen.days, 3)
    advisor = make_advisor(AdvisorConfig(), net)
    env = VoltageControlEnv(net)
    tuned_mean, raw_mean = [], []
    for idx, seed in enumerate((0, 1, 2)):
        seed_dir = Path(out) / "proposed" / f"seed{seed}"
        kb = KnowledgeBase.load(seed_dir / "kb.json")
        tuned = ActorCritic.load(seed_dir / "params.npz")
        raw = ActorCritic.load(seed_dir / "params_pretrained.npz")
        for day_index in test_by_seed[idx]:
            day = generate_day(net, scen, day_index)
            fc = make_forecast(
                net, day, np.random.default_rng([777, seed, day_index]),
                scen.forecast_noise_sigma,
            )
            sched = propose_schedule(advisor, kb, fc, net, "test").schedule
            tuned_mean.append(env.run_day(tuned.policy(), day, sched).total_reward)
            raw_mean.append(env.run_day(raw.policy(), day, sched).total_reward)
    assert np.mean(tuned_mean) >= np.mean(raw_mean)
    report(7, f"finetuned mean reward {np.mean(tuned_mean):.3f} >= "
              f"pretrained {np.mean(raw_mean):.3f} on 75 paired days")


# -- 8. refinement efficacy -----------------------------------------------------


def test_criterion_8_reflexion_efficacy():
    net = load_builtin_case("ieee33")
    scen = builtin_scenario("ieee33")
    train_pool, _ = split_days(scen.days, 3)
    advisor = make_advisor(AdvisorConfig(), net)
    env = VoltageControlEnv(net)
    rewards = {}
    for n_rounds in (3, 0):
        rng = np.random.default_rng([11, 303])
        kb = KnowledgeBase()
        per_day = []
        for _ in range(50):
            day = generate_day(net, scen, int(rng.choice(train_pool)))
            fc = make_forecast(net, day, rng, scen.forecast_noise_sigma)
            res = reflect_and_improve(env, advisor, kb, day, fc, n_rounds, mode="train")
            update_kb(kb, entry_from_result(fc, res), res.eps_hat, res.matched_index)
            per_day.append(res.reward)
        rewards[n_rounds] = np.asarray(per_day)
    strict = int(np.sum(rewards[3] > rewards[0] + 1e-12))
    assert rewards[3].mean() >= rewards[0].mean()
    assert strict >= 15  # 30% of 50 days
    report(8, f"best-of-4 mean {rewards[3].mean():.3f} vs single-shot {rewards[0].mean():.3f}; "
              f"strictly better on {strict}/50 days")


# -- 9. determinism ---------------------------------------------------------------


def test_criterion_9_pipeline_bitwise_determinism(tmp_path):
    base = dict(
        case_path=str(builtin_case_path("ieee33")),
        scenario=builtin_scenario("ieee33"),
        seeds=(0, 1),
        llm_episodes=25,
        test_episodes=10,
    )
    tables = []
    episode_logs = []
    for run_dir in ("a", "b"):
        cfg = ExperimentConfig(method="no-rl", out_dir=str(tmp_path / run_dir), **base)
        run_method(cfg)
        evaluate(cfg)
        tables.append((tmp_path / run_dir / "no-rl" / "result.csv").read_bytes())
        episode_logs.append((tmp_path / run_dir / "no-rl" / "episodes.json").read_bytes())
    assert tables[0] == tables[1]
    assert episode_logs[0] == episode_logs[1]
    report(9, f"two full advisor pipeline runs byte-identical "
              f"({len(tables[0])}-byte table, {len(episode_logs[0])}-byte logs)")
