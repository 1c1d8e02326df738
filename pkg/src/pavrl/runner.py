"""Experiment orchestration: training runs, plan reports, sensitivity and agent comparison.

Every report here is a pure function of its inputs (agent, configs, seeds):
floats are written with ``repr`` and nothing time-dependent goes into the
files, so identical runs give byte-identical CSVs.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import DQNAgent, PPOAgent, greedy_plan
from .agents.checkpoint import checkpoint_algo
from .casestudy import CaseStudyConfig, generate_case_study
from .domain import KIND_ORDER, SegmentState, fit_agent_normalization, get_action
from .envmodel import EnvironmentConfig, FixedFleetSampler, MaintenanceEnv
from .exceptions import ConfigurationError, TrainingAborted
from .rewardlca import discounted_step_cost
from .scaling import NormalizationParams

AGENTS = {"ppo": PPOAgent, "dqn": DQNAgent}

# Case-study defaults layered under user-supplied agent parameters. Episode
# rewards are of order 1e-5 per USD, so learning uses a scaled reward.
CASE_STUDY_AGENT_DEFAULTS = {
    "ppo": {"n_iterations": 400, "reward_scale": 2.0e4},
    "dqn": {"n_episodes": 2000, "reward_scale": 2.0e4},
}


# ---------------------------------------------------------------------------
# small io helpers


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(row.get(k, "")) for k in columns})
    return buf.getvalue()


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# configuration


@dataclass
class TrainingConfig:
    """Everything a training run needs apart from the seed."""

    algo: str = "ppo"
    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    case_study: CaseStudyConfig = field(default_factory=CaseStudyConfig)
    agent: dict = field(default_factory=dict)
    fleet_seed: int = 0
    checkpoint_every: int = 50
    window: int = 50

    def __post_init__(self):
        if self.algo not in AGENTS:
            raise ConfigurationError(f"unknown algorithm {self.algo!r}; expected one of {sorted(AGENTS)}")
        if isinstance(self.environment, dict):
            self.environment = EnvironmentConfig.from_dict(self.environment)
        if isinstance(self.case_study, dict):
            self.case_study = CaseStudyConfig.from_dict(self.case_study)
        valid = AGENTS[self.algo]().get_params()
        unknown = set(self.agent) - set(valid)
        if unknown:
            raise ConfigurationError(f"unknown {self.algo} parameters: {sorted(unknown)}")
        if self.checkpoint_every < 0 or self.window < 1:
            raise ConfigurationError("checkpoint_every must be >= 0 and window >= 1")

    def agent_params(self) -> dict:
        return {**CASE_STUDY_AGENT_DEFAULTS[self.algo], **self.agent}

    def make_agent(self, seed: int):
        params = self.agent_params()
        if "hidden" in params:
            params["hidden"] = tuple(params["hidden"])
        params["seed"] = seed
        return AGENTS[self.algo](**params)

    def to_dict(self) -> dict:
        return {
            "algo": self.algo,
            "environment": self.environment.to_dict(),
            "case_study": self.case_study.to_dict(),
            "agent": json.loads(json.dumps(self.agent_params())),
            "fleet_seed": self.fleet_seed,
            "checkpoint_every": self.checkpoint_every,
            "window": self.window,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainingConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class SensitivitySpec:
    multipliers: tuple = (1.5, 2.0, 2.5, 3.0, 3.5)
    replications: int = 5
    seed: int = 0
    retrain: bool = False

    def __post_init__(self):
        self.multipliers = tuple(float(m) for m in self.multipliers)
        if not self.multipliers or min(self.multipliers) <= 0:
            raise ConfigurationError("traffic multipliers must be > 0")
        if self.replications < 1:
            raise ConfigurationError("replications must be >= 1")

    def all_multipliers(self) -> tuple:
        """Requested multipliers with the 1.0 reference row first."""
        rest = sorted(m for m in set(self.multipliers) if m != 1.0)
        return (1.0, *rest)

    @classmethod
    def from_dict(cls, d: dict) -> "SensitivitySpec":
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown sensitivity keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# environments


def env_factory(env_cfg: EnvironmentConfig, fleet, norm: NormalizationParams, seed: int):
    """``factory(i)`` giving executor ``i`` its own seeded environment over ``fleet``."""

    def make(i):
        return MaintenanceEnv(env_cfg, FixedFleetSampler(fleet), norm, seed=seed * 1009 + i)

    return make


def training_setup(cfg: TrainingConfig):
    fleet = generate_case_study(cfg.case_study, cfg.fleet_seed)
    return fleet, fit_agent_normalization(fleet)


def agent_env(agent) -> MaintenanceEnv:
    """The environment an agent was trained on (restored from its checkpoint)."""
    env = agent.envs_[0] if hasattr(agent, "envs_") else getattr(agent, "env_", None)
    if env is None:
        raise ConfigurationError("agent carries no environment; was it trained or loaded from a checkpoint?")
    return env


def load_agent(path):
    return AGENTS[checkpoint_algo(path)].load_checkpoint(path)


# ---------------------------------------------------------------------------
# training


def trailing_mean(values, window):
    """Mean of the last ``window`` finite values at every position (NaN until one exists)."""
    out = np.full(len(values), math.nan)
    buf = []
    for i, v in enumerate(values):
        if v is not None and math.isfinite(v):
            buf.append(v)
            if len(buf) > window:
                buf.pop(0)
        if buf:
            out[i] = float(np.mean(buf))
    return out


def reward_column(algo):
    return "mean_episode_reward" if algo == "ppo" else "episode_reward"


def curve_summary(rewards, window=50, reference=100) -> dict:
    """Improvement and plateau measures of a reward curve.

    ``reference_level`` is the moving average at position ``reference``;
    ``final_quartile_change`` is the relative change of the moving average
    across the last quarter of the curve.
    """
    ma = trailing_mean(list(rewards), window)
    n = len(ma)
    if n == 0:
        raise ConfigurationError("empty reward curve")
    ref = ma[min(reference, n) - 1]
    start = ma[(3 * n) // 4]
    end = ma[-1]
    change = (end - start) / abs(start) if start else math.inf
    return {"n": n, "reference_level": float(ref), "final_level": float(end),
            "quartile_start": float(start), "final_quartile_change": float(change),
            "improved": bool(end > ref), "plateaued": bool(abs(change) < 0.05)}


def curve_rows(log, algo, window):
    col = reward_column(algo)
    ma = trailing_mean([row[col] for row in log], window)
    return [{**row, "moving_average": float(m)} for row, m in zip(log, ma)]


@dataclass
class TrainingResult:
    agent: object
    out_dir: Path
    curve_path: Path
    checkpoint_path: Path
    final_checkpoint: Path
    summary: dict


def _write_curve(agent, cfg, out_dir):
    rows = curve_rows(agent.log_, cfg.algo, cfg.window)
    columns = list(rows[0]) if rows else [reward_column(cfg.algo), "moving_average"]
    return _write(out_dir / "reward_curve.csv", rows_to_csv(rows, columns))


def run_training(cfg: TrainingConfig, seed: int, out_dir, resume=False, callback=None) -> TrainingResult:
    """Train one agent, writing ``reward_curve.csv``, ``checkpoint.pkl`` and ``final.pkl`` into ``out_dir``.

    With ``resume=True`` an existing ``checkpoint.pkl`` is picked up and the
    run continues from it; seeds and RNG streams are restored, so the result
    equals an uninterrupted run.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "checkpoint.pkl"
    fleet, norm = training_setup(cfg)
    _write(out_dir / "config.json", _dump_json({**cfg.to_dict(), "seed": seed}))
    _write(out_dir / "agent_normalization.json", _dump_json(norm.to_dict()))
    factory = env_factory(cfg.environment, fleet, norm, seed)
    fresh = cfg.make_agent(seed)
    try:
        if resume and ckpt.exists():
            agent = AGENTS[cfg.algo].load_checkpoint(ckpt)
            for k in ("n_iterations", "n_episodes", "max_steps"):
                if k in fresh.get_params():
                    setattr(agent, k, getattr(fresh, k))
            agent.resume(callback, ckpt, cfg.checkpoint_every)
        elif cfg.algo == "ppo":
            agent = fresh.fit(factory, callback, ckpt, cfg.checkpoint_every)
        else:
            agent = fresh.fit(factory(0), callback, ckpt, cfg.checkpoint_every)
    except TrainingAborted as exc:
        raise TrainingAborted(str(exc), checkpoint=str(ckpt) if ckpt.exists() else None) from exc
    curve = _write_curve(agent, cfg, out_dir)
    agent.save_checkpoint(ckpt)
    final = out_dir / "final.pkl"
    agent.save_checkpoint(final)
    summary = curve_summary([row[reward_column(cfg.algo)] for row in agent.log_], cfg.window)
    _write(out_dir / "training_summary.json", _dump_json(summary))
    return TrainingResult(agent, out_dir, curve, ckpt, final, summary)


# ---------------------------------------------------------------------------
# plan reports

KIND_LABELS = tuple(k.value for k in KIND_ORDER)


@dataclass
class PlanReport:
    start_year: int
    distribution: list          # one row per plan year: year + percent per action kind
    costs: list                 # one row per plan year: total discounted cost over the fleet
    segments: list              # one row per (segment, year)
    effcost: dict               # segment id -> final cost-effectiveness

    def segment(self, segment_id):
        rows = [r for r in self.segments if r["segment_id"] == segment_id]
        if not rows:
            raise KeyError(segment_id)
        return rows

    @property
    def mean_effcost(self) -> float:
        return float(np.mean(list(self.effcost.values())))

    def write(self, out_dir) -> dict:
        out_dir = Path(out_dir)
        seg_cols = ["segment_id", "year", "action_id", "action", "kind", "discounted_cost",
                    "iri", "rd", "next_iri", "next_rd", "baseline_next_iri", "baseline_next_rd", "reward"]
        paths = {
            "distribution": _write(out_dir / "plan_distribution.csv",
                                   rows_to_csv(self.distribution, ["year", *KIND_LABELS])),
            "costs": _write(out_dir / "plan_costs.csv", rows_to_csv(self.costs, ["year", "discounted_cost"])),
            "segments": _write(out_dir / "plan_segments.csv", rows_to_csv(self.segments, seg_cols)),
            "summary": _write(out_dir / "plan_summary.json", _dump_json({
                "segments": len(self.effcost),
                "mean_effcost": self.mean_effcost,
                "effcost": {k: self.effcost[k] for k in sorted(self.effcost)},
            })),
        }
        return paths


def plan_report(policy, env: MaintenanceEnv, fleet, horizon=None) -> PlanReport:
    """Greedy plans for every segment, summarized per calendar year.

    Plan year ``t`` (0-based) is labelled ``start_year + 1 + t``.
    """
    horizon = env.horizon if horizon is None else horizon
    start = env.config.start_year
    counts = np.zeros((horizon, len(KIND_ORDER)))
    costs = np.zeros(horizon)
    segments, effcost = [], {}
    for s in fleet:
        plan = greedy_plan(policy, env, s, horizon)
        effcost[s.segment_id] = plan.total_reward
        for t, (a_id, rec) in enumerate(zip(plan.actions, plan.records)):
            a = get_action(a_id)
            cost = discounted_step_cost(a, env.catalog, env.config.zeta, t)
            counts[t, KIND_ORDER.index(a.kind)] += 1
            costs[t] += cost
            segments.append({
                "segment_id": s.segment_id, "year": start + 1 + t, "action_id": a.id, "action": a.label,
                "kind": a.kind.value, "discounted_cost": cost,
                "iri": rec["pre_IRI"], "rd": rec["pre_RD"],
                "next_iri": rec["actual_IRI"][1], "next_rd": rec["actual_RD"][1],
                "baseline_next_iri": rec["baseline_IRI"][1], "baseline_next_rd": rec["baseline_RD"][1],
                "reward": rec["reward"],
            })
    n = max(len(fleet), 1)
    distribution = [{"year": start + 1 + t, **{k: float(100.0 * counts[t, j] / n) for j, k in enumerate(KIND_LABELS)}}
                    for t in range(horizon)]
    cost_rows = [{"year": start + 1 + t, "discounted_cost": float(costs[t])} for t in range(horizon)]
    return PlanReport(start, distribution, cost_rows, segments, effcost)


# ---------------------------------------------------------------------------
# traffic sensitivity


def scale_traffic(s: SegmentState, multiplier: float) -> SegmentState:
    """Copy of ``s`` with AADT and ESAL multiplied; nothing else changes."""
    tr = s.traffic
    traffic = tr.__class__(tr.truck_ratio, tr.annual_esal * multiplier, tr.annual_aadt * multiplier)
    return s.with_(traffic=traffic)


def sensitivity(spec: SensitivitySpec, policy=None, env_cfg: EnvironmentConfig | None = None,
                case_cfg: CaseStudyConfig | None = None, norm: NormalizationParams | None = None,
                train_fn=None) -> list[dict]:
    """Mean and standard deviation of fleet-mean final cost-effectiveness per traffic multiplier.

    Replication ``r`` regenerates the fleet with seed ``spec.seed + r`` and
    scales its traffic. By default the given ``policy`` is reused; with
    ``spec.retrain`` a new policy is obtained from ``train_fn(fleet)`` for
    each multiplier (on the replication-0 fleet).
    """
    env_cfg = env_cfg or EnvironmentConfig()
    case_cfg = case_cfg or CaseStudyConfig()
    if spec.retrain and train_fn is None:
        raise ConfigurationError("retraining needs a train_fn")
    if not spec.retrain and (policy is None or norm is None):
        raise ConfigurationError("reusing a policy needs the policy and its agent normalization")
    fleets = [generate_case_study(case_cfg, spec.seed + r) for r in range(spec.replications)]
    rows = []
    for m in spec.all_multipliers():
        scaled = [[scale_traffic(s, m) for s in fleet] for fleet in fleets]
        pol, pnorm = (policy, norm) if not spec.retrain else train_fn(scaled[0])
        per_rep = []
        for fleet in scaled:
            env = MaintenanceEnv(env_cfg, FixedFleetSampler(fleet), pnorm, seed=spec.seed)
            per_rep.append(float(np.mean([greedy_plan(pol, env, s).total_reward for s in fleet])))
        rows.append({"multiplier": m, "mean_effcost": float(np.mean(per_rep)),
                     "std_effcost": float(np.std(per_rep, ddof=1)) if len(per_rep) > 1 else 0.0,
                     "replications": len(per_rep)})
    return rows


def count_inversions(rows) -> list[dict]:
    """Adjacent multiplier pairs where the mean rises, with whether the rise is within one std."""
    out = []
    for a, b in zip(rows, rows[1:]):
        if b["mean_effcost"] > a["mean_effcost"]:
            tol = max(a["std_effcost"], b["std_effcost"])
            out.append({"from": a["multiplier"], "to": b["multiplier"],
                        "rise": b["mean_effcost"] - a["mean_effcost"],
                        "within_std": b["mean_effcost"] - a["mean_effcost"] <= tol})
    return out


def sensitivity_ok(rows) -> bool:
    inv = count_inversions(rows)
    return len(inv) == 0 or (len(inv) == 1 and inv[0]["within_std"])


SENSITIVITY_COLUMNS = ("multiplier", "mean_effcost", "std_effcost", "replications")


# ---------------------------------------------------------------------------
# PPO vs DQN


def _steps_to_threshold(env_steps, ma, threshold):
    for s, v in zip(env_steps, ma):
        if math.isfinite(v) and v >= threshold:
            return int(s)
    return None


def compare_agents(make_env, budget_steps: int, seeds=(0,), ppo_params=None, dqn_params=None,
                   threshold=None, window=20):
    """Train PPO and DQN with the same number of environment steps.

    ``make_env(i, seed)`` returns a fresh environment. The PPO iteration
    count is ``ceil(budget / (executors * steps))`` and DQN gets exactly the
    steps PPO used. Returns ``(curve_rows, summary)``; the curve rows carry
    an ``agent`` column.
    """
    ppo_params = dict(ppo_params or {})
    dqn_params = dict(dqn_params or {})
    if budget_steps < 1:
        raise ConfigurationError("budget_steps must be >= 1")
    curves, per_agent = [], {"ppo": [], "dqn": []}
    for seed in seeds:
        ppo = PPOAgent(**{**ppo_params, "seed": seed})
        per_iter = ppo.n_executors * ppo.n_steps
        ppo.n_iterations = max(1, math.ceil(budget_steps / per_iter))
        ppo.fit(lambda i, seed=seed: make_env(i, seed))
        used = ppo.n_iterations * per_iter
        dqn = DQNAgent(**{**dqn_params, "seed": seed, "n_episodes": None, "max_steps": used})
        dqn.fit(make_env(0, seed))
        for name, agent in (("ppo", ppo), ("dqn", dqn)):
            col = reward_column(name)
            rewards = [row[col] for row in agent.log_]
            ma = trailing_mean(rewards, window)
            steps = [row["env_steps"] for row in agent.log_]
            for i, (row, m) in enumerate(zip(agent.log_, ma)):
                curves.append({"agent": name, "seed": seed, "index": i + 1, "env_steps": row["env_steps"],
                               "reward": row[col], "moving_average": float(m)})
            finite = [r for r in rewards if math.isfinite(r)]
            tail = finite[-max(1, len(finite) // 10):] if finite else [math.nan]
            half = finite[len(finite) // 2:] if finite else [math.nan]
            per_agent[name].append({"env_steps": int(steps[-1]) if steps else 0, "ma": ma, "steps": steps,
                                    "final_mean_reward": float(np.mean(tail)),
                                    "curve_variance": float(np.var(half))})
    if threshold is None:
        best = max(r["final_mean_reward"] for rs in per_agent.values() for r in rs)
        threshold = 0.9 * best if best > 0 else best
    summary = {"budget_steps": budget_steps, "threshold": float(threshold), "seeds": list(seeds), "agents": {}}
    for name, results in per_agent.items():
        reach = [_steps_to_threshold(r["steps"], r["ma"], threshold) for r in results]
        summary["agents"][name] = {
            "env_steps": [r["env_steps"] for r in results],
            "final_mean_reward": float(np.mean([r["final_mean_reward"] for r in results])),
            "curve_variance": float(np.mean([r["curve_variance"] for r in results])),
            "steps_to_threshold": reach,
        }
    summary["equal_budgets"] = summary["agents"]["ppo"]["env_steps"] == summary["agents"]["dqn"]["env_steps"]

    def first(name):
        r = summary["agents"][name]["steps_to_threshold"]
        return math.inf if any(x is None for x in r) else float(np.mean(r))

    fp, fd = first("ppo"), first("dqn")
    summary["fewer_steps"] = None if fp == fd else ("ppo" if fp < fd else "dqn")
    return curves, summary


COMPARE_COLUMNS = ("agent", "seed", "index", "env_steps", "reward", "moving_average")
