"""Greedy roll-outs of a trained policy into a multi-year plan."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..domain import SegmentState, get_action
from ..exceptions import ValidationError
from ..rewardlca import RewardLedger


@dataclass
class Plan:
    segment_id: str
    actions: list = field(default_factory=list)
    states: list = field(default_factory=list)      # state at the start of each year, plus the final one
    records: list = field(default_factory=list)     # per-year environment records
    ledger: RewardLedger | None = None
    total_reward: float = 0.0

    @property
    def labels(self):
        return [get_action(a).label for a in self.actions]


def greedy_plan(policy, env, s0: SegmentState, horizon: int | None = None) -> Plan:
    """Run ``policy.predict`` from ``s0`` for ``horizon`` years (default: the env horizon)."""
    horizon = env.horizon if horizon is None else horizon
    if horizon < 0 or horizon > env.horizon:
        raise ValidationError(f"horizon must lie in [0, {env.horizon}]")
    obs = env.reset(state=s0)
    plan = Plan(s0.segment_id, states=[env.state], ledger=env.ledger)
    for _ in range(horizon):
        a = int(policy.predict(obs))
        obs, r, _done, info = env.step(a)
        plan.actions.append(a)
        plan.states.append(info["state"])
        plan.records.append(info["record"])
        plan.total_reward += r
    return plan


def evaluate_policy(policy, env, states) -> list[float]:
    """Episode reward (the final cost-effectiveness) of ``policy`` on each start state."""
    return [greedy_plan(policy, env, s).total_reward for s in states]
