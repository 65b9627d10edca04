import math

import numpy as np
import pytest

from la3p.envs import (
    ENV_KINDS, AnalyticBandit, ChainedBandit, EpisodeFinished, PendulumSwingUp, PointMass,
    make_env, optimal_q, optimal_q_grad_a,
)


def rollout(env, actions, seed):
    states, rewards = [env.reset(seed)], []
    for a in actions:
        res = env.step(a)
        states.append(res.next_state)
        rewards.append(res.reward)
        if res.done:
            break
    return np.array(states), np.array(rewards)


@pytest.mark.parametrize("kind", ENV_KINDS)
def test_reset_deterministic(kind):
    a, b = make_env(kind), make_env(kind)
    np.testing.assert_array_equal(a.reset(7), b.reset(7))


@pytest.mark.parametrize("kind", ENV_KINDS)
def test_trajectory_deterministic_and_bounded(kind):
    env = make_env(kind)
    acts = np.random.default_rng(0).uniform(env.spec.action_low, env.spec.action_high, (300, env.spec.action_dim))
    s1, r1 = rollout(env, acts, 3)
    s2, r2 = rollout(make_env(kind), acts, 3)
    np.testing.assert_array_equal(s1, s2)
    np.testing.assert_array_equal(r1, r2)
    assert np.all(r1 >= env.reward_lower_bound)


def test_pointmass_reset_range():
    env = PointMass(1)
    for seed in range(50):
        pos, vel = env.reset(seed)
        assert -1.0 <= pos <= 1.0 and vel == 0.0


def test_pointmass_at_goal():
    env = PointMass(1)
    env.reset(0)
    env.pos[:] = 0.0
    res = env.step([0.0])
    assert res.reward == 0.0
    assert res.next_state[0] == 0.0


def test_pointmass_matches_reference_dynamics():
    env = PointMass(2)
    x, v = env.reset(5)[:2].copy(), np.zeros(2)
    rng = np.random.default_rng(1)
    for _ in range(40):
        a = rng.uniform(-1, 1, 2)
        res = env.step(a)
        v = np.clip(v + 0.1 * a, -2.0, 2.0)
        x = x + 0.1 * v
        assert res.reward == pytest.approx(-(x @ x + 0.01 * a @ a), rel=1e-15)
        np.testing.assert_allclose(res.next_state, np.concatenate([x, v]), rtol=1e-15)


def test_pointmass_leaving_box_is_terminal():
    env = PointMass(1)
    env.reset(0)
    env.pos[:] = 4.95
    env.vel[:] = 2.0
    res = env.step([1.0])
    assert res.done and res.terminal


def test_time_limit_is_not_terminal():
    env = PointMass(1, max_episode_steps=3)
    env.reset(0)
    results = [env.step([0.0]) for _ in range(3)]
    assert results[-1].done and not results[-1].terminal
    with pytest.raises(EpisodeFinished):
        env.step([0.0])


def test_pendulum_matches_reference_dynamics():
    env = PendulumSwingUp()
    obs = env.reset(2)
    th, w = math.atan2(obs[1], obs[0]), obs[2]
    for u in np.linspace(-2, 2, 30):
        res = env.step([u])
        norm = ((th + math.pi) % (2 * math.pi)) - math.pi
        assert res.reward == pytest.approx(-(norm ** 2 + 0.1 * w * w + 0.001 * u * u), rel=1e-12)
        w = min(max(w + (15.0 * math.sin(th) + 3.0 * u) * 0.05, -8.0), 8.0)
        th = th + w * 0.05
        np.testing.assert_allclose(res.next_state, [math.cos(th), math.sin(th), w], rtol=1e-12, atol=1e-15)


def test_out_of_range_action_clipped_with_warning():
    env = PointMass(1)
    env.reset(0)
    with pytest.warns(UserWarning):
        env.step([5.0])
    assert env.vel[0] == pytest.approx(0.1)


def test_bandit_reset_and_reward():
    env = AnalyticBandit(state_dim=3)
    for seed in range(20):
        s = env.reset(seed)
        assert s.shape == (3,) and np.all(np.abs(s) <= 1.0)
    s = env.reset(4)
    res = AnalyticBandit(3).reset(4)
    np.testing.assert_array_equal(s, res)
    g = env.target(s)
    step = env.step([g])
    assert step.reward == 0.0 and step.done and step.terminal


def test_optimal_q_examples(rng):
    env = AnalyticBandit()
    assert optimal_q(env, [[0.0]], [[1.0]])[0] == -1.0
    s = env.sample_states(200, rng)
    assert np.all(optimal_q(env, s, env.target(s)[:, None]) == 0.0)
    a = rng.uniform(-1, 1, (200, 1))
    for i in range(20):
        env.reset(i)
        env.context = s[i]
        assert env.step(a[i]).reward == optimal_q(env, s[i:i + 1], a[i:i + 1])[0]


def test_optimal_q_wrong_env():
    for fn in (optimal_q, optimal_q_grad_a):
        with pytest.raises(TypeError):
            fn(PointMass(1), [[0, 0]], [[0]])


def test_optimal_q_grad_matches_finite_difference(rng):
    env = AnalyticBandit()
    s, a = env.sample_states(50, rng), rng.uniform(-1, 1, (50, 1))
    num = (optimal_q(env, s, a + 1e-6) - optimal_q(env, s, a - 1e-6)) / 2e-6
    np.testing.assert_allclose(optimal_q_grad_a(env, s, a)[:, 0], num, rtol=1e-6)


def test_chained_bandit(rng):
    env = ChainedBandit(gamma=0.9)
    s0 = env.reset(3)
    assert s0[-1] == 0.0
    r0 = env.step([0.2])
    assert not r0.done
    np.testing.assert_allclose(r0.next_state, [-0.9 * s0[0], 1.0])
    r1 = env.step([0.1])
    assert r1.done and r1.terminal

    def policy(states):
        return np.full((len(states), 1), 0.3)

    s = env.sample_states(10, rng)
    a = rng.uniform(-1, 1, (10, 1))
    s1 = env.next_states(s)
    expected = env.rewards(s, a) + 0.9 * env.rewards(s1, policy(s1))
    np.testing.assert_allclose(optimal_q(env, s, a, policy), expected, rtol=1e-15)
    with pytest.raises(ValueError):
        optimal_q(env, s, a)


def test_make_env_unknown():
    with pytest.raises(ValueError):
        make_env("HalfCheetah")
