"""Command-line entry point.

Exit codes: 0 on success, 1 on invalid input or configuration, 2 when a
run aborts at runtime.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import dataprep, runner
from .agents.common import ChainMDP
from .casestudy import generate_case_study
from .domain import fit_agent_normalization
from .envmodel import FixedFleetSampler, MaintenanceEnv, train_surrogate
from .exceptions import ConfigurationError, TrainingAborted
from .rewardlca import INDICATORS

log = logging.getLogger("pavrl")


def run_dir(root, command, seed) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = Path(root) / f"{command}-{stamp}-seed{seed}"
    path, n = base, 1
    while True:
        try:
            path.mkdir(parents=True, exist_ok=False)
            return path
        except FileExistsError:
            n += 1
            path = base.with_name(f"{base.name}-{n}")


def _read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def cmd_calibrate(args):
    policy = {ind: args.impute for ind in INDICATORS}
    result = dataprep.prepare(args.input, policy, args.method)
    summary = dataprep.write_outputs(result, args.output)
    log.info("calibrated %d segments, %d row errors, %d changes", summary["segments"], summary["row_errors"],
             summary["changes"])
    return 0


def cmd_train_env(args):
    src = Path(args.pairs)
    pairs = {ind: dataprep.read_pairs_csv(src / f"pairs_{ind}.csv") for ind in INDICATORS}
    params = _read_json(args.params) if args.params else {}
    params.setdefault("seed", args.seed)
    sp, report = train_surrogate(pairs, params)
    sp.save(args.model)
    Path(str(args.model) + ".report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    for ind, r in report.items():
        log.info("%s: %s", ind, json.dumps(r["holdout"] or r["train"], sort_keys=True))
    return 0


def cmd_train_agent(args):
    raw = _read_json(args.config) if args.config else {}
    raw["algo"] = args.algo
    cfg = runner.TrainingConfig.from_dict(raw)
    out = Path(args.resume) if args.resume else run_dir(args.out_root, f"train-{args.algo}", args.seed)

    def progress(agent, row):
        col = runner.reward_column(cfg.algo)
        step = row.get("iteration", row.get("episode"))
        if step % args.log_every == 0:
            log.info("%s %d: reward %.4g", args.algo, step, row[col])

    res = runner.run_training(cfg, args.seed, out, resume=bool(args.resume), callback=progress)
    log.info("run directory %s; final checkpoint %s", out, res.final_checkpoint)
    print(out)
    return 0


def _fleet_for(checkpoint, config_path):
    cfg_path = Path(config_path) if config_path else Path(checkpoint).parent / "config.json"
    if cfg_path.exists():
        raw = _read_json(cfg_path)
        raw.pop("seed", None)
        cfg = runner.TrainingConfig.from_dict(raw)
    else:
        cfg = runner.TrainingConfig()
    return cfg, generate_case_study(cfg.case_study, cfg.fleet_seed)


def cmd_plan(args):
    agent = runner.load_agent(args.checkpoint)
    _, fleet = _fleet_for(args.checkpoint, args.config)
    report = runner.plan_report(agent, runner.agent_env(agent), fleet, args.horizon)
    report.write(args.out)
    log.info("mean cost-effectiveness %.6g over %d segments", report.mean_effcost, len(fleet))
    return 0


def cmd_sensitivity(args):
    raw = _read_json(args.spec)
    checkpoint = raw.pop("checkpoint", None)
    config_path = raw.pop("config", None)
    spec = runner.SensitivitySpec.from_dict(raw)
    if not spec.retrain and not checkpoint:
        raise ConfigurationError("the sensitivity spec needs a 'checkpoint' unless retrain is true")
    if spec.retrain:
        cfg = runner.TrainingConfig.from_dict(_read_json(config_path)) if config_path else runner.TrainingConfig()

        def train_fn(fleet):
            norm = fit_agent_normalization(fleet)
            agent = cfg.make_agent(spec.seed)
            factory = runner.env_factory(cfg.environment, fleet, norm, spec.seed)
            agent.fit(factory if cfg.algo == "ppo" else factory(0))
            return agent, norm

        rows = runner.sensitivity(spec, env_cfg=cfg.environment, case_cfg=cfg.case_study, train_fn=train_fn)
    else:
        agent = runner.load_agent(checkpoint)
        cfg, _ = _fleet_for(checkpoint, config_path)
        env = runner.agent_env(agent)
        rows = runner.sensitivity(spec, agent, cfg.environment, cfg.case_study, env.norm)
    out = run_dir(args.out_root, "sensitivity", spec.seed)
    (out / "sensitivity.csv").write_text(runner.rows_to_csv(rows, runner.SENSITIVITY_COLUMNS))
    (out / "inversions.json").write_text(json.dumps(runner.count_inversions(rows), indent=2) + "\n")
    print(out)
    return 0


def cmd_compare(args):
    raw = _read_json(args.config)
    kind = raw.get("env", "case_study")
    seeds = raw.get("seeds", [0])
    out = run_dir(args.out_root, "compare", seeds[0])
    if kind == "chain":
        length = raw.get("episode_length", 50)

        def make_env(i, seed):
            return ChainMDP(episode_length=length, seed=seed * 1009 + i)
    elif kind == "case_study":
        cfg = runner.TrainingConfig.from_dict(raw.get("training", {}))
        fleet, norm = runner.training_setup(cfg)

        def make_env(i, seed):
            return MaintenanceEnv(cfg.environment, FixedFleetSampler(fleet), norm, seed=seed * 1009 + i)
    else:
        raise ConfigurationError(f"unknown comparison environment {kind!r}")
    curves, summary = runner.compare_agents(make_env, raw["budget_steps"], seeds, raw.get("ppo"), raw.get("dqn"),
                                            raw.get("threshold"), raw.get("window", 20))
    (out / "curves.csv").write_text(runner.rows_to_csv(curves, runner.COMPARE_COLUMNS))
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pavrl", description="Pavement maintenance planning experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="clean a condition-history CSV and build training pairs")
    c.add_argument("input")
    c.add_argument("output")
    c.add_argument("--impute", choices=["interpolate", "fill_forward", "delete"], default="interpolate")
    c.add_argument("--method", choices=["running_max", "isotonic"], default="running_max")
    c.set_defaults(func=cmd_calibrate)

    c = sub.add_parser("train-env", help="fit the surrogate deterioration model")
    c.add_argument("pairs", help="directory with pairs_IRI.csv and pairs_RD.csv")
    c.add_argument("model", help="output model file")
    c.add_argument("--params", help="JSON file with regressor parameters")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_train_env)

    c = sub.add_parser("train-agent", help="train a PPO or DQN agent on the case study")
    c.add_argument("--algo", choices=sorted(runner.AGENTS), default="ppo")
    c.add_argument("--config", help="training config JSON")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out-root", default="runs")
    c.add_argument("--resume", help="existing run directory to continue")
    c.add_argument("--log-every", type=int, default=50)
    c.set_defaults(func=cmd_train_agent)

    c = sub.add_parser("plan", help="roll out a trained policy over the fleet")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--config", help="training config (default: config.json next to the checkpoint)")
    c.add_argument("--horizon", type=int)
    c.set_defaults(func=cmd_plan)

    c = sub.add_parser("sensitivity", help="traffic-multiplier sensitivity of a policy")
    c.add_argument("--spec", required=True)
    c.add_argument("--out-root", default="runs")
    c.set_defaults(func=cmd_sensitivity)

    c = sub.add_parser("compare", help="PPO vs DQN at equal environment-step budgets")
    c.add_argument("--config", required=True)
    c.add_argument("--out-root", default="runs")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except TrainingAborted as exc:
        log.error("%s (last checkpoint: %s)", exc, exc.checkpoint)
        return 2
    except (ValueError, KeyError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return 1
    except (RuntimeError, FloatingPointError) as exc:
        log.error("runtime failure: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
