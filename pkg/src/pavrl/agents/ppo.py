"""Proximal policy optimization with a clipped surrogate objective."""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator

from .. import neural
from ..exceptions import ConfigurationError, TrainingAborted, ValidationError
from .checkpoint import load_checkpoint, save_checkpoint


def compute_advantages(rewards, values, next_values, terminal, gamma, lam):
    """Generalized advantage estimates for one executor's sequence.

    ``next_values[t]`` is V(s_{t+1}); it is ignored where ``terminal[t]``,
    and the recursion restarts there. Returns ``(advantages, returns)`` with
    ``returns = advantages + values``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    next_values = np.asarray(next_values, dtype=np.float64)
    terminal = np.asarray(terminal, dtype=bool)
    boundary = np.zeros(len(rewards), dtype=bool)
    return _gae(rewards, values, next_values, terminal, boundary, gamma, lam)


def _gae(rewards, values, next_values, terminal, boundary, gamma, lam):
    n = len(rewards)
    adv = np.zeros(n)
    running = 0.0
    for t in reversed(range(n)):
        nv = 0.0 if terminal[t] else next_values[t]
        delta = rewards[t] + gamma * nv - values[t]
        cut = terminal[t] or boundary[t]
        running = delta + (0.0 if cut else gamma * lam * running)
        adv[t] = running
    return adv, adv + values


def normalize_advantages(adv):
    std = adv.std()
    return (adv - adv.mean()) / (std + 1e-8)


def clipped_loss(policy, value, obs, actions, old_logp, advantages, returns,
                 clip_range=0.2, vf_coef=0.5, ent_coef=0.04):
    """Clipped surrogate + value error - entropy bonus, with exact gradients.

    Returns ``(loss, policy_grads, value_grads, stats)``.
    """
    probs, pcache = neural.forward(policy, obs)
    logp_all = neural.log_softmax(pcache.logits)
    n = len(actions)
    rows = np.arange(n)
    logp = logp_all[rows, actions]
    with np.errstate(over="ignore"):
        ratio = np.exp(logp - old_logp)
    if not np.all(np.isfinite(ratio)):
        raise TrainingAborted("non-finite probability ratio")
    A = advantages
    clipped = np.clip(ratio, 1.0 - clip_range, 1.0 + clip_range)
    unclipped_obj = ratio * A
    clipped_obj = clipped * A
    surrogate = np.minimum(unclipped_obj, clipped_obj)
    # derivative of min(.) w.r.t. ratio: A where the unclipped branch is active, else 0
    active = unclipped_obj <= clipped_obj
    entropy = -(probs * logp_all).sum(axis=1)

    v, vcache = neural.forward(value, obs)
    v = v[:, 0]
    verr = v - returns

    loss = -surrogate.mean() + vf_coef * (verr ** 2).mean() - ent_coef * entropy.mean()

    onehot = np.zeros_like(probs)
    onehot[rows, actions] = 1.0
    d_ratio = np.where(active, A, 0.0)
    g_logits = -(d_ratio * ratio)[:, None] * (onehot - probs) / n
    g_logits += ent_coef * probs * (logp_all + entropy[:, None]) / n
    pgrads = neural.backward(policy, pcache, g_logits, wrt_logits=True)
    vgrads = neural.backward(value, vcache, (vf_coef * 2.0 * verr / n)[:, None])
    stats = {
        "policy_loss": float(-surrogate.mean()),
        "value_loss": float((verr ** 2).mean()),
        "entropy": float(entropy.mean()),
        "approx_kl": float((old_logp - logp).mean()),
        "clip_fraction": float((np.abs(ratio - 1.0) > clip_range).mean()),
    }
    return float(loss), pgrads, vgrads, stats


class PPOAgent(BaseEstimator):
    """PPO over discrete actions with separate policy and value networks.

    ``fit(env_factory)`` builds ``n_executors`` environments with
    ``env_factory(i)`` and runs ``n_iterations`` rounds of collection
    (``n_steps`` per executor) followed by ``n_epochs`` passes of minibatch
    updates. Rewards are multiplied by ``reward_scale`` for learning only;
    logged episode rewards are raw.
    """

    def __init__(self, n_steps=128, n_executors=4, learning_rate=0.00025, gamma=0.99, clip_range=0.2,
                 ent_coef=0.04, vf_coef=0.5, n_epochs=4, batch_size=128, gae_lambda=0.95, hidden=(64, 64),
                 max_grad_norm=0.5, reward_scale=1.0, n_iterations=100, seed=0):
        self.n_steps = n_steps
        self.n_executors = n_executors
        self.learning_rate = learning_rate
        self.gamma = gamma
        self.clip_range = clip_range
        self.ent_coef = ent_coef
        self.vf_coef = vf_coef
        self.n_epochs = n_epochs
        self.batch_size = batch_size
        self.gae_lambda = gae_lambda
        self.hidden = hidden
        self.max_grad_norm = max_grad_norm
        self.reward_scale = reward_scale
        self.n_iterations = n_iterations
        self.seed = seed

    def _validate(self):
        if not 0 < self.clip_range < 1:
            raise ConfigurationError("clip_range must lie in (0, 1)")
        if min(self.ent_coef, self.vf_coef) < 0:
            raise ConfigurationError("loss coefficients must be >= 0")
        if self.n_executors < 1 or self.n_steps < 1 or self.n_epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("n_executors, n_steps, n_epochs and batch_size must be >= 1")
        if not 0 < self.gamma <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ConfigurationError("gamma must lie in (0, 1] and gae_lambda in [0, 1]")

    # -- setup -------------------------------------------------------------
    def _setup(self, env_factory):
        self._validate()
        self.envs_ = [env_factory(i) for i in range(self.n_executors)]
        env0 = self.envs_[0]
        self.obs_size_ = env0.observation_size
        self.n_actions_ = env0.n_actions
        self.policy_ = neural.mlp_new([self.obs_size_, *self.hidden, self.n_actions_], "softmax", self.seed,
                                      out_scale=0.01)
        self.value_ = neural.mlp_new([self.obs_size_, *self.hidden, 1], "linear", self.seed + 1)
        self.opt_ = neural.Optimizer(self.policy_.params + self.value_.params, "adam", self.learning_rate)
        self.rng_ = np.random.default_rng(self.seed)
        self.obs_ = np.stack([env.reset(seed=self.seed * 1000 + 17 + i) for i, env in enumerate(self.envs_)])
        self.ep_return_ = np.zeros(self.n_executors)
        self.iteration_ = 0
        self.log_ = []

    def fit(self, env_factory, callback=None, checkpoint_path=None, checkpoint_every=0):
        self._setup(env_factory)
        return self.resume(callback, checkpoint_path, checkpoint_every)

    def resume(self, callback=None, checkpoint_path=None, checkpoint_every=0):
        """Continue training until ``n_iterations`` (also used after :meth:`load_checkpoint`)."""
        while self.iteration_ < self.n_iterations:
            try:
                row = self._iterate()
            except (TrainingAborted, ValidationError, FloatingPointError) as exc:
                raise TrainingAborted(f"PPO aborted at iteration {self.iteration_ + 1}: {exc}",
                                      checkpoint=checkpoint_path) from exc
            self.log_.append(row)
            self.iteration_ += 1
            if checkpoint_path and checkpoint_every and self.iteration_ % checkpoint_every == 0:
                self.save_checkpoint(checkpoint_path)
            if callback is not None:
                callback(self, row)
        return self

    # -- one iteration -------------------------------------------------------
    def _act(self, obs):
        probs, cache = neural.forward(self.policy_, obs)
        u = self.rng_.random(len(obs))
        cdf = np.cumsum(probs, axis=1)
        actions = np.minimum((cdf < u[:, None]).sum(axis=1), self.n_actions_ - 1)
        logp = neural.log_softmax(cache.logits)[np.arange(len(obs)), actions]
        return actions, logp

    def _collect(self):
        N, M = self.n_executors, self.n_steps
        obs = np.zeros((N, M, self.obs_size_))
        actions = np.zeros((N, M), dtype=np.int64)
        logp = np.zeros((N, M))
        values = np.zeros((N, M))
        rewards = np.zeros((N, M))
        terminal = np.zeros((N, M), dtype=bool)
        boundary = np.zeros((N, M), dtype=bool)
        next_values = np.zeros((N, M))
        finished = []
        for t in range(M):
            cur = self.obs_
            a, lp = self._act(cur)
            v = neural.forward(self.value_, cur)[0][:, 0]
            obs[:, t], actions[:, t], logp[:, t], values[:, t] = cur, a, lp, v
            new_obs = np.empty_like(cur)
            for i, env in enumerate(self.envs_):
                o, r, done, info = env.step(int(a[i]))
                if not np.isfinite(r):
                    raise TrainingAborted(f"non-finite reward from executor {i}")
                rewards[i, t] = r * self.reward_scale
                self.ep_return_[i] += r
                if done:
                    finished.append(self.ep_return_[i])
                    self.ep_return_[i] = 0.0
                    boundary[i, t] = True
                    if info.get("truncated"):
                        next_values[i, t] = neural.forward(self.value_, o)[0][0]
                    else:
                        terminal[i, t] = True
                    o = env.reset()
                new_obs[i] = o
            self.obs_ = new_obs
        last_v = neural.forward(self.value_, self.obs_)[0][:, 0]
        for i in range(N):
            nv = np.append(values[i, 1:], last_v[i])
            next_values[i] = np.where(boundary[i], next_values[i], nv)
        adv = np.zeros((N, M))
        ret = np.zeros((N, M))
        for i in range(N):
            adv[i], ret[i] = _gae(rewards[i], values[i], next_values[i], terminal[i], boundary[i],
                                  self.gamma, self.gae_lambda)
        flat = lambda x: x.reshape(N * M, *x.shape[2:])  # noqa: E731
        return flat(obs), flat(actions), flat(logp), flat(adv), flat(ret), finished

    def _iterate(self):
        obs, actions, old_logp, adv, ret, finished = self._collect()
        if not np.all(np.isfinite(adv)):
            raise TrainingAborted("non-finite advantages")
        adv = normalize_advantages(adv)
        n = len(actions)
        params = self.policy_.params + self.value_.params
        sums = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "approx_kl": 0.0, "clip_fraction": 0.0}
        updates = 0
        for _ in range(self.n_epochs):
            order = self.rng_.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                _, pg, vg, stats = clipped_loss(self.policy_, self.value_, obs[idx], actions[idx], old_logp[idx],
                                                adv[idx], ret[idx], self.clip_range, self.vf_coef, self.ent_coef)
                grads, _ = neural.clip_by_global_norm(pg + vg, self.max_grad_norm)
                self.opt_.step(params, grads)
                self.policy_.version += 1
                self.value_.version += 1
                for k in sums:
                    sums[k] += stats[k]
                updates += 1
        if not all(np.all(np.isfinite(p)) for p in params):
            raise TrainingAborted("non-finite network parameters")
        row = {
            "iteration": self.iteration_ + 1,
            "env_steps": (self.iteration_ + 1) * n,
            "episodes": len(finished),
            "mean_episode_reward": float(np.mean(finished)) if finished else math.nan,
        }
        row.update({k: v / updates for k, v in sums.items()})
        return row

    # -- inference -----------------------------------------------------------
    def action_probabilities(self, obs):
        return neural.forward(self.policy_, obs)[0]

    def predict(self, obs):
        """Greedy (argmax) action for one observation, or an array for a batch."""
        p = self.action_probabilities(obs)
        return int(np.argmax(p)) if p.ndim == 1 else np.argmax(p, axis=1)

    # -- persistence ---------------------------------------------------------
    def save_checkpoint(self, path):
        save_checkpoint(path, "ppo", self.get_params(), self.iteration_, self.log_,
                        {"policy": self.policy_, "value": self.value_}, self.opt_,
                        runtime={"envs": self.envs_, "rng": self.rng_, "obs": self.obs_, "ep_return": self.ep_return_})

    @classmethod
    def load_checkpoint(cls, path) -> "PPOAgent":
        ck = load_checkpoint(path, "ppo")
        agent = cls(**ck["params"])
        agent.policy_, agent.value_ = ck["models"]["policy"], ck["models"]["value"]
        agent.obs_size_, agent.n_actions_ = agent.policy_.n_inputs, agent.policy_.n_outputs
        agent.opt_ = neural.Optimizer.from_state(agent.policy_.params + agent.value_.params, ck["optimizer"])
        agent.iteration_ = ck["iteration"]
        agent.log_ = ck["log"]
        rt = ck.get("runtime")
        if rt is not None:
            agent.envs_, agent.rng_, agent.obs_, agent.ep_return_ = rt["envs"], rt["rng"], rt["obs"], rt["ep_return"]
        return agent


def train_ppo(env_factory, cfg=None, seed=0, **fit_kwargs):
    """Fit a :class:`PPOAgent` with parameters ``cfg`` (a dict); returns ``(agent, log)``."""
    agent = PPOAgent(**{**(cfg or {}), "seed": seed}).fit(env_factory, **fit_kwargs)
    return agent, agent.log_
