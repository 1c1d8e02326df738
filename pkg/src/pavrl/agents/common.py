"""Shared agent pieces: exploration, replay memory, a toy MDP and policies."""
from __future__ import annotations

import numpy as np

from ..exceptions import ValidationError


def epsilon_greedy(q_values, epsilon, rng) -> int:
    """Uniform random action with probability ``epsilon``, else argmax (lowest id on ties)."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValidationError("epsilon must lie in [0, 1]")
    q = np.asarray(q_values)
    if rng.random() < epsilon:
        return int(rng.integers(len(q)))
    return int(np.argmax(q))


def linear_epsilon(step, start, end, decay_steps) -> float:
    if decay_steps <= 0:
        return end
    if step >= decay_steps:
        return end
    return start + (step / decay_steps) * (end - start)


class ReplayMemory:
    """Fixed-capacity ring buffer of ``(s, a, r, s', terminal)`` transitions."""

    def __init__(self, capacity, obs_size):
        if capacity < 1:
            raise ValidationError("replay capacity must be >= 1")
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_size))
        self.next_obs = np.zeros((capacity, obs_size))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.terminal = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.pos = 0
        self.inserted = 0

    def __len__(self):
        return self.size

    def add(self, s, a, r, s_next, terminal):
        i = self.pos
        self.obs[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_obs[i] = s_next
        self.terminal[i] = terminal
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.inserted += 1

    def order(self):
        """Slot indices from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.pos) % self.capacity

    def sample(self, batch_size, rng):
        idx = rng.choice(self.size, size=min(batch_size, self.size), replace=False)
        return (self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.terminal[idx])


class ChainMDP:
    """Two states that alternate every step; action 0 pays ``reward_a``, action 1 pays ``reward_b``.

    Episodes are cut after ``episode_length`` steps and flagged as truncated,
    so the discounted value of always taking action 0 is ``reward_a / (1 - gamma)``.
    """

    def __init__(self, episode_length=50, reward_a=1.0, reward_b=0.0, n_actions=2, seed=None):
        self.episode_length = episode_length
        self.rewards = np.zeros(n_actions)
        self.rewards[0] = reward_a
        self.rewards[1:] = reward_b
        self.n_actions = n_actions
        self.observation_size = 2
        self.rng = np.random.default_rng(seed)
        self.s = 0
        self.t = 0

    def observe(self):
        x = np.zeros(2)
        x[self.s] = 1.0
        return x

    def reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.s = int(self.rng.integers(2))
        self.t = 0
        return self.observe()

    def step(self, action):
        a = int(action)
        if not 0 <= a < self.n_actions:
            raise ValidationError(f"invalid action {a}")
        r = float(self.rewards[a])
        self.s = 1 - self.s
        self.t += 1
        done = self.t >= self.episode_length
        return self.observe(), r, done, {"truncated": done}

    def transition_table(self):
        """``(P[s, a] -> s', R[s, a])`` for value iteration."""
        P = np.array([[1] * self.n_actions, [0] * self.n_actions])
        R = np.tile(self.rewards, (2, 1))
        return P, R


def value_iteration(P, R, gamma, tol=1e-12, max_iter=100_000):
    """Optimal Q table of a deterministic finite MDP."""
    n_s, n_a = R.shape
    V = np.zeros(n_s)
    for _ in range(max_iter):
        Q = R + gamma * V[P]
        V_new = Q.max(axis=1)
        if np.max(np.abs(V_new - V)) < tol:
            V = V_new
            break
        V = V_new
    return R + gamma * V[P]


class RandomPolicy:
    """Uniform random actions from a seeded generator."""

    def __init__(self, n_actions, seed=0):
        self.n_actions = n_actions
        self.rng = np.random.default_rng(seed)

    def predict(self, obs):
        return int(self.rng.integers(self.n_actions))


class ConstantPolicy:
    def __init__(self, action=0):
        self.action = action

    def predict(self, obs):
        return self.action
