"""Deep Q-network with experience replay and a periodically synced target network."""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator

from .. import neural
from ..exceptions import ConfigurationError, TrainingAborted, ValidationError
from .checkpoint import load_checkpoint, save_checkpoint
from .common import ReplayMemory, epsilon_greedy, linear_epsilon


def td_targets(rewards, next_q_target, terminal, gamma, next_q_online=None):
    """One-step targets ``r + gamma * max_a' Q'(s', a')`` (zero bootstrap at terminals).

    With ``next_q_online`` the action is chosen by the online network and
    evaluated by the target network (double Q-learning).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    next_q_target = np.asarray(next_q_target, dtype=np.float64)
    terminal = np.asarray(terminal, dtype=bool)
    if next_q_target.ndim != 2 or len(next_q_target) != len(rewards) or terminal.shape != rewards.shape:
        raise ValidationError("td_targets: rewards, terminal flags and next-state Q rows must align")
    if next_q_online is not None and np.shape(next_q_online) != next_q_target.shape:
        raise ValidationError("td_targets: online and target Q arrays differ in shape")
    if next_q_online is None:
        boot = next_q_target.max(axis=1)
    else:
        best = np.argmax(next_q_online, axis=1)
        boot = next_q_target[np.arange(len(best)), best]
    return rewards + gamma * np.where(terminal, 0.0, boot)


def q_loss(net, obs, actions, targets):
    """Mean squared TD error on the taken actions and its parameter gradients."""
    q, cache = neural.forward(net, obs)
    rows = np.arange(len(actions))
    err = q[rows, actions] - targets
    g = np.zeros_like(q)
    g[rows, actions] = 2.0 * err / len(actions)
    return float((err ** 2).mean()), neural.backward(net, cache, g)


class DQNAgent(BaseEstimator):
    """Epsilon-greedy Q-learning on a single environment.

    Training stops after ``n_episodes`` episodes or ``max_steps`` environment
    steps, whichever comes first. ``single_network=True`` bootstraps from
    the online network itself (no target copy).
    """

    def __init__(self, gamma=0.99, epsilon_start=1.0, epsilon_end=0.05, epsilon_decay_steps=20_000,
                 replay_capacity=50_000, batch_size=64, target_sync=500, learning_rate=0.001, hidden=(64, 64),
                 n_episodes=500, max_steps=None, warmup=None, train_every=1, double=False, single_network=False,
                 reward_scale=1.0, max_grad_norm=10.0, seed=0):
        self.gamma = gamma
        self.epsilon_start = epsilon_start
        self.epsilon_end = epsilon_end
        self.epsilon_decay_steps = epsilon_decay_steps
        self.replay_capacity = replay_capacity
        self.batch_size = batch_size
        self.target_sync = target_sync
        self.learning_rate = learning_rate
        self.hidden = hidden
        self.n_episodes = n_episodes
        self.max_steps = max_steps
        self.warmup = warmup
        self.train_every = train_every
        self.double = double
        self.single_network = single_network
        self.reward_scale = reward_scale
        self.max_grad_norm = max_grad_norm
        self.seed = seed

    def _validate(self):
        if not 0 < self.gamma <= 1:
            raise ConfigurationError("gamma must lie in (0, 1]")
        for name in ("epsilon_start", "epsilon_end"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if min(self.batch_size, self.replay_capacity, self.target_sync, self.train_every) < 1:
            raise ConfigurationError("batch_size, replay_capacity, target_sync and train_every must be >= 1")

    def _setup(self, env):
        self._validate()
        self.env_ = env
        self.obs_size_ = env.observation_size
        self.n_actions_ = env.n_actions
        self.online_ = neural.mlp_new([self.obs_size_, *self.hidden, self.n_actions_], "linear", self.seed)
        self.target_ = self.online_.copy()
        self.opt_ = neural.Optimizer(self.online_.params, "adam", self.learning_rate)
        self.memory_ = ReplayMemory(self.replay_capacity, self.obs_size_)
        self.rng_ = np.random.default_rng(self.seed)
        self.steps_ = 0
        self.episode_ = 0
        self.log_ = []

    def fit(self, env, callback=None, checkpoint_path=None, checkpoint_every=0):
        self._setup(env)
        return self.resume(callback, checkpoint_path, checkpoint_every)

    def _budget_left(self):
        if self.max_steps is not None and self.steps_ >= self.max_steps:
            return False
        return self.n_episodes is None or self.episode_ < self.n_episodes

    def resume(self, callback=None, checkpoint_path=None, checkpoint_every=0):
        while self._budget_left():
            try:
                row = self._run_episode()
            except (TrainingAborted, ValidationError, FloatingPointError) as exc:
                raise TrainingAborted(f"DQN aborted in episode {self.episode_ + 1}: {exc}",
                                      checkpoint=checkpoint_path) from exc
            self.episode_ += 1
            self.log_.append(row)
            if checkpoint_path and checkpoint_every and self.episode_ % checkpoint_every == 0:
                self.save_checkpoint(checkpoint_path)
            if callback is not None:
                callback(self, row)
        return self

    def _learn(self):
        s, a, r, s2, term = self.memory_.sample(self.batch_size, self.rng_)
        boot_net = self.online_ if self.single_network else self.target_
        q_next = neural.forward(boot_net, s2)[0]
        q_online = neural.forward(self.online_, s2)[0] if self.double else None
        y = td_targets(r, q_next, term, self.gamma, q_online)
        loss, grads = q_loss(self.online_, s, a, y)
        if not math.isfinite(loss):
            raise TrainingAborted("non-finite TD loss")
        grads, _ = neural.clip_by_global_norm(grads, self.max_grad_norm)
        neural.optimizer_step(self.online_, grads, self.opt_)
        return loss

    def _run_episode(self):
        env = self.env_
        obs = env.reset(seed=int(self.rng_.integers(2 ** 31)))
        total, losses, done = 0.0, [], False
        warmup = self.batch_size if self.warmup is None else self.warmup
        while not done:
            eps = linear_epsilon(self.steps_, self.epsilon_start, self.epsilon_end, self.epsilon_decay_steps)
            a = epsilon_greedy(neural.forward(self.online_, obs)[0], eps, self.rng_)
            nxt, r, done, info = env.step(a)
            if not math.isfinite(r):
                raise TrainingAborted("non-finite reward")
            terminal = done and not info.get("truncated", False)
            self.memory_.add(obs, a, r * self.reward_scale, nxt, terminal)
            total += r
            obs = nxt
            self.steps_ += 1
            if len(self.memory_) >= max(warmup, 1) and self.steps_ % self.train_every == 0:
                losses.append(self._learn())
            if not self.single_network and self.steps_ % self.target_sync == 0:
                self.target_.load_state(self.online_)
            if self.max_steps is not None and self.steps_ >= self.max_steps:
                break
        return {
            "episode": self.episode_ + 1,
            "env_steps": self.steps_,
            "episode_reward": total,
            "epsilon": linear_epsilon(self.steps_, self.epsilon_start, self.epsilon_end, self.epsilon_decay_steps),
            "mean_loss": float(np.mean(losses)) if losses else math.nan,
        }

    def q_values(self, obs):
        return neural.forward(self.online_, obs)[0]

    def predict(self, obs):
        q = self.q_values(obs)
        return int(np.argmax(q)) if q.ndim == 1 else np.argmax(q, axis=1)

    def save_checkpoint(self, path):
        save_checkpoint(path, "dqn", self.get_params(), self.episode_, self.log_,
                        {"online": self.online_, "target": self.target_}, self.opt_,
                        runtime={"env": self.env_, "rng": self.rng_, "memory": self.memory_, "steps": self.steps_})

    @classmethod
    def load_checkpoint(cls, path) -> "DQNAgent":
        ck = load_checkpoint(path, "dqn")
        agent = cls(**ck["params"])
        agent.online_, agent.target_ = ck["models"]["online"], ck["models"]["target"]
        agent.obs_size_, agent.n_actions_ = agent.online_.n_inputs, agent.online_.n_outputs
        agent.opt_ = neural.Optimizer.from_state(agent.online_.params, ck["optimizer"])
        agent.episode_ = ck["iteration"]
        agent.log_ = ck["log"]
        rt = ck.get("runtime")
        if rt is not None:
            agent.env_, agent.rng_, agent.memory_, agent.steps_ = rt["env"], rt["rng"], rt["memory"], rt["steps"]
        return agent


def train_dqn(env, cfg=None, seed=0, **fit_kwargs):
    """Fit a :class:`DQNAgent` with parameters ``cfg`` (a dict); returns ``(agent, log)``."""
    agent = DQNAgent(**{**(cfg or {}), "seed": seed}).fit(env, **fit_kwargs)
    return agent, agent.log_
