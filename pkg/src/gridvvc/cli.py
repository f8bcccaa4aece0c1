"""Command-line entry points.

    gridvvc case validate CASE
    gridvvc pf --case CASE --injections INJ.json [--v-root 1.0]
    gridvvc scenario gen --case CASE --config SCEN.json --out DIR [--days N]
    gridvvc pretrain --case CASE --scenario SCEN --episodes N --seed S --out DIR
    gridvvc llm-improve --case CASE --scenario SCEN --episodes N --seed S --out DIR
    gridvvc finetune --case CASE --scenario SCEN --params P.npz --kb KB.json ...
    gridvvc run --config EXP.json [--method M] [--seeds ...]
    gridvvc eval --config EXP.json [--method M] [--seeds ...]
    gridvvc report --results DIR

CASE is a file path or a built-in name (ieee33, toy5). Advisor credentials
come from GRIDVVC_ADVISOR_URL / GRIDVVC_ADVISOR_KEY when the http backend
is selected.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .advisor import AdvisorConfig
from .dayahead import KnowledgeBase, improve, make_advisor, propose_schedule
from .harness import ExperimentConfig, evaluate, report, run_method, split_days
from .network import CaseError, builtin_case_path, load_case, validate_network, network_from_dict
from .powerflow import Injections, residual, solve_powerflow
from .ppo import ActorCritic, PpoConfig, finetune, pretrain
from .scenario import ScenarioConfig, builtin_scenario, dump_year, make_forecast


def resolve_case(name_or_path: str) -> Path:
    path = Path(name_or_path)
    if path.exists():
        return path
    try:
        return builtin_case_path(name_or_path)
    except (FileNotFoundError, ModuleNotFoundError):
        raise CaseError(f"no such case file or built-in case: {name_or_path}")


def resolve_scenario(name_or_path: str) -> ScenarioConfig:
    path = Path(name_or_path)
    if path.exists():
        return ScenarioConfig.from_json(path)
    return builtin_scenario(name_or_path)


def _cmd_case_validate(args) -> int:
    path = resolve_case(args.case)
    data = json.loads(path.read_text())
    net = network_from_dict(data)
    violations = validate_network(net)
    if violations:
        for v in violations:
            print(f"VIOLATION: {v}")
        return 1
    print(
        f"ok: {net.n_buses} buses, {len(net.branches)} branches, "
        f"{net.region_count} regions, {len(net.scs)} capacitors, {len(net.pvs)} pv units"
    )
    return 0


def _cmd_pf(args) -> int:
    net = load_case(resolve_case(args.case))
    data = json.loads(Path(args.injections).read_text())
    inj = Injections(p=np.array(data["p"], dtype=float), q=np.array(data["q"], dtype=float))
    sol = solve_powerflow(net, inj, args.v_root)
    payload = {
        "v_mag": sol.v_mag.tolist(),
        "v_ang": sol.v_ang.tolist(),
        "iterations": sol.iterations,
        "max_mismatch": sol.max_mismatch,
        "residual": residual(net, sol, inj),
        "converged": sol.converged,
    }
    text = json.dumps(payload, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def _cmd_scenario_gen(args) -> int:
    net = load_case(resolve_case(args.case))
    cfg = resolve_scenario(args.config)
    if args.days is not None:
        cfg = dataclasses.replace(cfg, days=args.days)
    if len(cfg.load_peaks_mw) != net.n_buses:
        raise SystemExit(
            f"scenario has {len(cfg.load_peaks_mw)} peaks, case has {net.n_buses} buses"
        )
    dump_year(net, cfg, args.out)
    print(f"wrote {cfg.days} day files to {args.out}")
    return 0


def _cmd_pretrain(args) -> int:
    net = load_case(resolve_case(args.case))
    scenario = resolve_scenario(args.scenario)
    train_pool, _ = split_days(scenario.days, args.holdout_seeds)
    ac, curve = pretrain(net, scenario, args.episodes, PpoConfig(), args.seed, train_pool)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ac.save(out / "params.npz")
    _write_curve_csv(out / "curve_pretrain.csv", curve)
    print(f"pretrained {args.episodes} episodes; params at {out / 'params.npz'}")
    return 0


def _cmd_llm_improve(args) -> int:
    net = load_case(resolve_case(args.case))
    scenario = resolve_scenario(args.scenario)
    advisor_cfg = _load_advisor_config(args.advisor)
    advisor = make_advisor(advisor_cfg, net)
    train_pool, _ = split_days(scenario.days, args.holdout_seeds)
    kb, curve = improve(
        net,
        scenario,
        advisor,
        episodes=args.episodes,
        n_rounds=args.rounds,
        seed=args.seed,
        day_pool=train_pool,
        transcript_dir=Path(args.out) / "transcripts",
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kb.save(out / "kb.json")
    _write_curve_csv(out / "curve_improve.csv", curve)
    print(f"improvement done: {len(kb)} stored days; kb at {out / 'kb.json'}")
    return 0


def _cmd_finetune(args) -> int:
    net = load_case(resolve_case(args.case))
    scenario = resolve_scenario(args.scenario)
    advisor_cfg = _load_advisor_config(args.advisor)
    advisor = make_advisor(advisor_cfg, net)
    kb = KnowledgeBase.load(args.kb)
    ac = ActorCritic.load(args.params)
    train_pool, _ = split_days(scenario.days, args.holdout_seeds)

    def source(day, rng):
        forecast = make_forecast(net, day, rng, scenario.forecast_noise_sigma)
        return propose_schedule(advisor, kb, forecast, net, mode="test").schedule

    ac, curve = finetune(ac, net, scenario, source, args.episodes, PpoConfig(), args.seed, train_pool)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ac.save(out / "params.npz")
    _write_curve_csv(out / "curve_finetune.csv", curve)
    print(f"finetuned {args.episodes} episodes; params at {out / 'params.npz'}")
    return 0


def _write_curve_csv(path: Path, curve: list[float]) -> None:
    import csv

    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "reward"])
        for i, r in enumerate(curve):
            writer.writerow([i, repr(float(r))])


def _load_advisor_config(path: str | None) -> AdvisorConfig:
    if path is None:
        return AdvisorConfig()
    return AdvisorConfig.from_dict(json.loads(Path(path).read_text()))


def load_experiment_config(path: str, overrides: argparse.Namespace) -> ExperimentConfig:
    data = json.loads(Path(path).read_text())
    case = resolve_case(data["case"])
    scenario_spec = data["scenario"]
    if isinstance(scenario_spec, str):
        scenario = resolve_scenario(scenario_spec)
    else:
        scenario = ScenarioConfig(
            seed=int(scenario_spec["seed"]),
            load_peaks_mw=tuple(scenario_spec["load_peaks_mw"]),
            **{
                k: v
                for k, v in scenario_spec.items()
                if k not in ("seed", "load_peaks_mw")
            },
        )
    method = overrides.method or data["method"]
    seeds = tuple(overrides.seeds) if overrides.seeds else tuple(data.get("seeds", (0, 1, 2)))
    out_dir = overrides.out or data["out_dir"]
    advisor = AdvisorConfig.from_dict(data.get("advisor", {}))
    ppo = PpoConfig(**{k: tuple(v) if k == "hidden" else v for k, v in data.get("ppo", {}).items()})
    return ExperimentConfig(
        case_path=str(case),
        scenario=scenario,
        method=method,
        out_dir=out_dir,
        seeds=seeds,
        llm_episodes=int(data.get("llm_episodes", 200)),
        pretrain_episodes=int(data.get("pretrain_episodes", 1500)),
        finetune_episodes=int(data.get("finetune_episodes", 150)),
        test_episodes=int(data.get("test_episodes", 25)),
        reflexion_rounds=int(data.get("reflexion_rounds", 3)),
        advisor=advisor,
        ppo=ppo,
    )


def _cmd_run(args) -> int:
    cfg = load_experiment_config(args.config, args)
    run_method(cfg)
    result = evaluate(cfg)
    print(
        f"{result.method}: deviation {result.deviation_mean:.4e} "
        f"(+-{result.deviation_std:.2e}), violation {result.violation_mean:.3f}% "
        f"over {result.episodes} episodes"
    )
    return 0


def _cmd_eval(args) -> int:
    cfg = load_experiment_config(args.config, args)
    result = evaluate(cfg)
    print(
        f"{result.method}: deviation {result.deviation_mean:.4e} "
        f"(+-{result.deviation_std:.2e}), violation {result.violation_mean:.3f}% "
        f"over {result.episodes} episodes"
    )
    return 0


def _cmd_report(args) -> int:
    written = report(args.results, window=args.window)
    for path in written:
        print(f"wrote {path}")
    if not written:
        print("no training curves found")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridvvc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_case = sub.add_parser("case", help="case-file utilities")
    case_sub = p_case.add_subparsers(dest="case_command", required=True)
    p_validate = case_sub.add_parser("validate", help="check a case file")
    p_validate.add_argument("case")
    p_validate.set_defaults(func=_cmd_case_validate)

    p_pf = sub.add_parser("pf", help="solve one power flow")
    p_pf.add_argument("--case", required=True)
    p_pf.add_argument("--injections", required=True, help="JSON with per-bus p/q in p.u.")
    p_pf.add_argument("--v-root", type=float, default=1.0)
    p_pf.add_argument("--out")
    p_pf.set_defaults(func=_cmd_pf)

    p_scen = sub.add_parser("scenario", help="scenario utilities")
    scen_sub = p_scen.add_subparsers(dest="scenario_command", required=True)
    p_gen = scen_sub.add_parser("gen", help="dump a generated year to JSON files")
    p_gen.add_argument("--case", required=True)
    p_gen.add_argument("--config", required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--days", type=int)
    p_gen.set_defaults(func=_cmd_scenario_gen)

    p_pre = sub.add_parser("pretrain", help="exploration-stage RL training")
    p_pre.add_argument("--case", required=True)
    p_pre.add_argument("--scenario", required=True)
    p_pre.add_argument("--episodes", type=int, required=True)
    p_pre.add_argument("--seed", type=int, default=0)
    p_pre.add_argument("--out", required=True)
    p_pre.add_argument("--holdout-seeds", type=int, default=3, help="test blocks kept out of training")
    p_pre.set_defaults(func=_cmd_pretrain)

    p_imp = sub.add_parser("llm-improve", help="day-ahead advisor self-improvement")
    p_imp.add_argument("--case", required=True)
    p_imp.add_argument("--scenario", required=True)
    p_imp.add_argument("--episodes", type=int, required=True)
    p_imp.add_argument("--rounds", type=int, default=3)
    p_imp.add_argument("--seed", type=int, default=0)
    p_imp.add_argument("--advisor", help="advisor config JSON (default: scripted stub)")
    p_imp.add_argument("--out", required=True)
    p_imp.add_argument("--holdout-seeds", type=int, default=3)
    p_imp.set_defaults(func=_cmd_llm_improve)

    p_fin = sub.add_parser("finetune", help="adapt pretrained RL under a frozen day-ahead policy")
    p_fin.add_argument("--case", required=True)
    p_fin.add_argument("--scenario", required=True)
    p_fin.add_argument("--params", required=True)
    p_fin.add_argument("--kb", required=True)
    p_fin.add_argument("--episodes", type=int, required=True)
    p_fin.add_argument("--seed", type=int, default=0)
    p_fin.add_argument("--advisor")
    p_fin.add_argument("--out", required=True)
    p_fin.add_argument("--holdout-seeds", type=int, default=3)
    p_fin.set_defaults(func=_cmd_finetune)

    for name, fn, help_text in (
        ("run", _cmd_run, "train one method end to end, then evaluate"),
        ("eval", _cmd_eval, "evaluate trained artifacts on held-out days"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--method")
        p.add_argument("--seeds", type=int, nargs="+")
        p.add_argument("--out")
        p.set_defaults(func=fn)

    p_rep = sub.add_parser("report", help="moving-average curve summaries")
    p_rep.add_argument("--results", required=True)
    p_rep.add_argument("--window", type=int, default=25)
    p_rep.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CaseError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
