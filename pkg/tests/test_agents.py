import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, chain_q_optimum, gae_by_sum, max_rel_error
from pavrl import neural
from pavrl.agents import (
    ChainMDP, ConstantPolicy, DQNAgent, PPOAgent, RandomPolicy, ReplayMemory, clipped_loss, compute_advantages,
    epsilon_greedy, evaluate_policy, greedy_plan, linear_epsilon, td_targets, train_dqn, train_ppo,
    value_iteration,
)
from pavrl.agents.checkpoint import checkpoint_algo, load_checkpoint
from pavrl.agents.dqn import q_loss
from pavrl.agents.ppo import normalize_advantages
from pavrl.exceptions import ConfigurationError, TrainingAborted, ValidationError

CHAIN_DQN = {"gamma": 0.9, "n_episodes": 300, "epsilon_decay_steps": 3000, "target_sync": 100, "hidden": (32,),
             "batch_size": 32}
CHAIN_PPO = {"gamma": 0.9, "n_iterations": 60, "n_steps": 64, "n_executors": 2, "batch_size": 64,
             "learning_rate": 1e-3, "hidden": (16,)}


def chain_factory(i):
    return ChainMDP(seed=i)


# -- exploration -------------------------------------------------------------


def test_epsilon_greedy_examples(rng):
    q = np.arange(32.0)
    assert all(epsilon_greedy(q, 0.0, rng) == 31 for _ in range(100))
    assert epsilon_greedy(np.zeros(32), 0.0, rng) == 0
    with pytest.raises(ValidationError):
        epsilon_greedy(q, 1.5, rng)


def test_epsilon_one_is_uniform(rng):
    n = 100_000
    counts = np.bincount([epsilon_greedy(np.arange(32.0), 1.0, rng) for _ in range(n)], minlength=32)
    p = 1 / 32
    sigma = math.sqrt(n * p * (1 - p))
    # 32 bins at 3 sigma: allow a single chance excursion
    assert np.sum(np.abs(counts - n * p) >= 3 * sigma) <= 1


def test_linear_epsilon_schedule():
    eps = [linear_epsilon(t, 1.0, 0.05, 100) for t in range(0, 200, 10)]
    assert eps[0] == 1.0 and eps[-1] == 0.05
    assert all(b <= a for a, b in zip(eps, eps[1:]))


# -- replay -------------------------------------------------------------------


def test_replay_ring_keeps_last_n(rng):
    mem = ReplayMemory(5, 1)
    for i in range(12):
        mem.add([i], i % 2, float(i), [i + 1], False)
    assert len(mem) == 5
    assert mem.rewards[mem.order()].tolist() == [7.0, 8.0, 9.0, 10.0, 11.0]
    s, a, r, s2, term = mem.sample(5, rng)
    assert sorted(r.tolist()) == [7.0, 8.0, 9.0, 10.0, 11.0]
    with pytest.raises(ValidationError):
        ReplayMemory(0, 1)


# -- DQN targets and loss ---------------------------------------------------------


def test_td_target_examples():
    assert td_targets([1.0], [[5.0, 3.0]], [True], 0.9).tolist() == [1.0]
    assert td_targets([0.0], [[10.0, 2.0]], [False], 0.9).tolist() == [9.0]
    with pytest.raises(ValidationError):
        td_targets([0.0, 1.0], [[1.0, 2.0]], [False, False], 0.9)


def test_single_network_targets_match_online_targets(rng):
    net = neural.mlp_new([3, 8, 4], seed=0)
    s2 = rng.normal(size=(5, 3))
    q = neural.forward(net, s2)[0]
    r = rng.normal(size=5)
    term = np.array([False, True, False, False, True])
    assert np.array_equal(td_targets(r, q, term, 0.9), td_targets(r, q, term, 0.9, next_q_online=q))


def test_double_q_selects_with_online_net():
    y = td_targets([0.0], [[1.0, 5.0]], [False], 1.0, next_q_online=[[3.0, 2.0]])
    assert y.tolist() == [1.0]


def test_q_loss_gradient(rng):
    net = neural.mlp_new([4, 10, 6], seed=1)
    obs, acts, y = rng.normal(size=(9, 4)), rng.integers(0, 6, 9), rng.normal(size=9)
    _, grads = q_loss(net, obs, acts, y)
    numeric = central_difference(lambda: q_loss(net, obs, acts, y)[0], net.params)
    assert max_rel_error(grads, numeric) < 1e-4


# -- advantages -------------------------------------------------------------------


def test_gae_limits():
    r = np.array([1.0, 0.5, -0.2, 2.0])
    v = np.array([0.3, -0.1, 0.7, 0.2])
    nv = np.array([-0.1, 0.7, 0.2, 0.4])
    term = np.zeros(4, dtype=bool)
    adv, ret = compute_advantages(r, v, nv, term, 0.9, 0.0)
    assert np.allclose(adv, r + 0.9 * nv - v, atol=1e-15)
    assert np.array_equal(ret, adv + v)
    term[-1] = True
    adv, _ = compute_advantages(r, np.zeros(4), np.zeros(4), term, 0.9, 1.0)
    togo = [sum(0.9 ** (k - t) * r[k] for k in range(t, 4)) for t in range(4)]
    assert np.allclose(adv, togo, atol=1e-12)


def test_perfect_values_give_zero_advantage():
    gamma, n = 0.9, 30
    v = np.full(n, 1.0 / (1 - gamma))
    adv, _ = compute_advantages(np.ones(n), v, v, np.zeros(n, dtype=bool), gamma, 0.95)
    assert np.max(np.abs(adv)) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 12), st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(0, 10_000))
def test_gae_matches_explicit_sum(n, gamma, lam, seed):
    rng = np.random.default_rng(seed)
    r, v, nv = rng.normal(size=n), rng.normal(size=n), rng.normal(size=n)
    term = rng.random(n) < 0.3
    adv, _ = compute_advantages(r, v, nv, term, gamma, lam)
    assert np.allclose(adv, gae_by_sum(r, v, nv, term, gamma, lam), atol=1e-10)


def test_normalize_advantages(rng):
    a = normalize_advantages(rng.normal(3.0, 2.0, size=100))
    assert abs(a.mean()) < 1e-12 and abs(a.std() - 1.0) < 1e-6


# -- clipped surrogate ----------------------------------------------------------------


def _nets(obs_size=3, n_actions=4, seed=0):
    return (neural.mlp_new([obs_size, 8, n_actions], "softmax", seed),
            neural.mlp_new([obs_size, 8, 1], "linear", seed + 1))


def _logp(policy, obs, actions):
    logits = neural.forward(policy, obs)[1].logits
    return neural.log_softmax(logits)[np.arange(len(actions)), actions]


def test_clipped_term_values():
    policy, value = _nets()
    obs, acts = np.zeros((1, 3)), np.array([2])
    cur = _logp(policy, obs, acts)
    for ratio, expected in ((1.5, -1.2), (1.0, -1.0)):
        _, _, _, stats = clipped_loss(policy, value, obs, acts, cur - math.log(ratio), np.array([1.0]),
                                      np.zeros(1), 0.2, 0.0, 0.0)
        assert stats["policy_loss"] == pytest.approx(expected, abs=1e-12)


def test_ratio_is_one_at_collection(rng):
    policy, value = _nets()
    obs, acts = rng.normal(size=(6, 3)), rng.integers(0, 4, 6)
    _, _, _, stats = clipped_loss(policy, value, obs, acts, _logp(policy, obs, acts), rng.normal(size=6),
                                  np.zeros(6))
    assert stats["approx_kl"] == 0.0 and stats["clip_fraction"] == 0.0


def test_trust_region_center_gives_vanilla_policy_gradient(rng):
    policy, value = _nets()
    obs, acts, adv = rng.normal(size=(6, 3)), rng.integers(0, 4, 6), rng.normal(size=6)
    _, pg, _, _ = clipped_loss(policy, value, obs, acts, _logp(policy, obs, acts), adv, np.zeros(6), 0.2, 0.0, 0.0)
    vanilla = central_difference(lambda: -float((adv * _logp(policy, obs, acts)).mean()), policy.params)
    assert max_rel_error(pg, vanilla) < 1e-4


def test_flat_region_has_zero_gradient():
    policy, value = _nets()
    obs, acts = np.zeros((2, 3)), np.array([1, 3])
    cur = _logp(policy, obs, acts)
    ratios = np.array([1.5, 0.5])
    adv = np.array([1.0, -1.0])  # clip active on the upper side for A > 0 and the lower side for A < 0
    _, pg, _, stats = clipped_loss(policy, value, obs, acts, cur - np.log(ratios), adv, np.zeros(2), 0.2, 0.0, 0.0)
    assert all(not g.any() for g in pg) and stats["clip_fraction"] == 1.0


def test_composite_loss_gradient(rng):
    policy, value = _nets(5, 6, seed=3)
    obs, acts = rng.normal(size=(10, 5)), rng.integers(0, 6, 10)
    old = _logp(policy, obs, acts) + rng.normal(0, 0.1, 10)
    adv, ret = rng.normal(size=10), rng.normal(size=10)

    def loss():
        return clipped_loss(policy, value, obs, acts, old, adv, ret, 0.2, 0.5, 0.04)[0]

    _, pg, vg, _ = clipped_loss(policy, value, obs, acts, old, adv, ret, 0.2, 0.5, 0.04)
    numeric = central_difference(loss, policy.params + value.params)
    assert max_rel_error(pg + vg, numeric) < 1e-4


def test_non_finite_ratio_aborts():
    policy, value = _nets()
    with pytest.raises(TrainingAborted):
        clipped_loss(policy, value, np.zeros((1, 3)), np.array([0]), np.array([-1e6]), np.ones(1), np.zeros(1))


# -- training on the chain -----------------------------------------------------------------


def test_value_iteration_on_chain():
    P, R = ChainMDP().transition_table()
    Q = value_iteration(P, R, 0.9)
    assert np.allclose(Q[:, 0], chain_q_optimum(0.9), atol=1e-9) and np.all(Q.argmax(axis=1) == 0)


def test_dqn_learns_chain():
    agent, log = train_dqn(ChainMDP(episode_length=50, seed=0), CHAIN_DQN, seed=0)
    q = agent.q_values(np.eye(2))
    assert np.all(np.abs(q[:, 0] - chain_q_optimum(0.9)) < 0.5)
    assert agent.predict(np.eye(2)).tolist() == [0, 0]
    eps = [row["epsilon"] for row in log]
    assert all(b <= a for a, b in zip(eps, eps[1:])) and len(log) == 300


def test_ppo_learns_chain():
    agent, log = train_ppo(chain_factory, CHAIN_PPO, seed=0)
    assert agent.predict(np.eye(2)).tolist() == [0, 0]
    assert len(log) == 60 and log[-1]["mean_episode_reward"] > 45


def test_ppo_entropy_without_reward_signal():
    factory = lambda i: ChainMDP(reward_a=0.0, n_actions=32, seed=i)  # noqa: E731
    agent, log = train_ppo(factory, {"n_iterations": 20, "n_steps": 64, "n_executors": 2, "batch_size": 64}, seed=0)
    assert all(row["entropy"] > 0.98 * math.log(32) for row in log)
    p = agent.action_probabilities(np.eye(2))
    assert np.all(-(p * np.log(p)).sum(axis=1) > 0.98 * math.log(32))


def test_invalid_hyperparameters():
    with pytest.raises(ConfigurationError):
        PPOAgent(clip_range=1.2).fit(chain_factory)
    with pytest.raises(ConfigurationError):
        DQNAgent(gamma=0.0).fit(ChainMDP())


def test_estimator_params_roundtrip():
    agent = PPOAgent(n_iterations=7)
    assert agent.get_params()["n_iterations"] == 7 and agent.get_params()["ent_coef"] == 0.04
    assert agent.set_params(n_iterations=9).n_iterations == 9


# -- checkpoints ----------------------------------------------------------------------------


def test_ppo_resume_equals_uninterrupted_run(tmp_path):
    params = {**CHAIN_PPO, "n_iterations": 6}
    full = PPOAgent(**params).fit(chain_factory)
    path = tmp_path / "ppo.pkl"
    PPOAgent(**{**params, "n_iterations": 3}).fit(chain_factory, checkpoint_path=path, checkpoint_every=3)
    assert checkpoint_algo(path) == "ppo" and load_checkpoint(path)["iteration"] == 3
    resumed = PPOAgent.load_checkpoint(path).set_params(n_iterations=6).resume()
    assert resumed.log_ == full.log_
    assert resumed.policy_.checksum() == full.policy_.checksum()


def test_dqn_resume_equals_uninterrupted_run(tmp_path):
    params = {**CHAIN_DQN, "n_episodes": 6}
    full = DQNAgent(**params).fit(ChainMDP(seed=0))
    path = tmp_path / "dqn.pkl"
    DQNAgent(**{**params, "n_episodes": 3}).fit(ChainMDP(seed=0), checkpoint_path=path, checkpoint_every=3)
    resumed = DQNAgent.load_checkpoint(path).set_params(n_episodes=6).resume()
    assert resumed.log_[3:] == full.log_[3:] and resumed.online_.checksum() == full.online_.checksum()


def test_bad_checkpoint_file(tmp_path):
    path = tmp_path / "junk.pkl"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValidationError):
        load_checkpoint(path)


def test_nan_reward_aborts_with_checkpoint_path(tmp_path):
    class Broken(ChainMDP):
        def step(self, action):
            obs, _, done, info = super().step(action)
            return obs, float("nan"), done, info

    with pytest.raises(TrainingAborted) as err:
        PPOAgent(**CHAIN_PPO).fit(lambda i: Broken(seed=i), checkpoint_path=tmp_path / "c.pkl", checkpoint_every=1)
    assert err.value.checkpoint == tmp_path / "c.pkl"


# -- plans ---------------------------------------------------------------------------------------


def test_greedy_plan_horizons(env, fleet):
    plan = greedy_plan(ConstantPolicy(0), env, fleet[0], horizon=0)
    assert plan.actions == [] and plan.total_reward == 0.0 and plan.ledger.effcost_history == []
    full = greedy_plan(ConstantPolicy(30), env, fleet[0])
    assert len(full.actions) == 20 and len(full.states) == 21
    assert full.labels[0] == "Fog Seal Coat" or "Fog" in full.labels[0]
    with pytest.raises(ValidationError):
        greedy_plan(ConstantPolicy(0), env, fleet[0], horizon=21)


def test_random_policy_plans_are_reproducible(env, fleet):
    a = greedy_plan(RandomPolicy(32, seed=5), env, fleet[3]).actions
    b = greedy_plan(RandomPolicy(32, seed=5), env, fleet[3]).actions
    assert a == b and len(set(a)) > 1


def test_evaluate_policy_returns_final_effcost(env, fleet):
    scores = evaluate_policy(RandomPolicy(32, seed=1), env, fleet[:3])
    assert len(scores) == 3
    assert scores[-1] == pytest.approx(env.ledger.effcost_history[-1], abs=1e-12)
