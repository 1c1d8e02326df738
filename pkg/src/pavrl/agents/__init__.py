"""Reinforcement-learning agents for maintenance planning."""
from .common import ChainMDP, ConstantPolicy, RandomPolicy, ReplayMemory, epsilon_greedy, linear_epsilon, value_iteration
from .dqn import DQNAgent, td_targets, train_dqn
from .plan import Plan, evaluate_policy, greedy_plan
from .ppo import PPOAgent, clipped_loss, compute_advantages, train_ppo

__all__ = [
    "ChainMDP", "ConstantPolicy", "DQNAgent", "PPOAgent", "Plan", "RandomPolicy", "ReplayMemory",
    "clipped_loss", "compute_advantages", "epsilon_greedy", "evaluate_policy", "greedy_plan",
    "linear_epsilon", "td_targets", "train_dqn", "train_ppo", "value_iteration",
]
