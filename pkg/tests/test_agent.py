import numpy as np
import pytest

from la3p.agent import Agent, AgentConfig, Scheme
from la3p.envs import ENV_KINDS, make_env
from la3p.losses import LossKind, huber, mse, pal, pal_xi
from la3p.replay import StaleInverseTree

SD, AD = 3, 1


def make_agent(seed=0, **kw):
    kw.setdefault("hidden", (16, 16))
    kw.setdefault("batch_size", 8)
    cfg = AgentConfig(**kw)
    return Agent(SD, AD, 1.0, cfg, np.random.default_rng(seed))


def fill(agent, n=64, seed=1, done_rate=0.2):
    rng = np.random.default_rng(seed)
    buf = agent.config.make_buffer(n, SD, AD)
    buf.extend(rng.normal(size=(n, SD)), rng.uniform(-1, 1, (n, AD)), rng.normal(size=n),
               rng.normal(size=(n, SD)), rng.random(n) < done_rate)
    return buf


class QuadraticCritic:
    """Stand-in for ``critic1``: ``Q(s, a) = -(a - a_star)^2``."""

    def __init__(self, a_star):
        self.a_star = a_star

    def forward(self, sa):
        return -(sa[:, -1:] - self.a_star) ** 2, sa

    def backward(self, sa, g, param_grads=True, input_grad=True):
        gin = np.zeros_like(sa)
        gin[:, -1:] = g * -2.0 * (sa[:, -1:] - self.a_star)
        return None, gin


def test_config_defaults():
    assert AgentConfig(scheme="per").alpha == 0.6
    assert AgentConfig(scheme="lap").alpha == 0.4
    with pytest.raises(ValueError):
        AgentConfig(lam=1.5)
    with pytest.raises(ValueError):
        AgentConfig(scheme="rank")


def test_targets_start_as_copies():
    agent = make_agent()
    nets = agent.networks()
    for name in ("actor", "critic1", "critic2"):
        np.testing.assert_array_equal(nets[name].params, nets[name + "_target"].params)


def test_td_targets(rng):
    agent = make_agent()
    buf = fill(agent, done_rate=1.0)
    batch = buf.sample_uniform(8, rng)
    np.testing.assert_array_equal(agent.td_targets(batch, rng), batch.rewards)
    buf = fill(agent, done_rate=0.0)
    batch = buf.sample_uniform(8, rng)
    zero = make_agent(gamma=0.0)
    np.testing.assert_array_equal(zero.td_targets(batch, rng), batch.rewards)
    for net in (agent.critic1_target, agent.critic2_target):
        net.params[:] = 0.0
    np.testing.assert_array_equal(agent.td_targets(batch, rng), batch.rewards)


def test_td_targets_use_twin_minimum(rng):
    agent = make_agent(policy_noise=0.0)
    batch = fill(agent, done_rate=0.0).sample_uniform(8, rng)
    a2 = agent.actor_target(batch.next_states)
    sa2 = np.concatenate((batch.next_states, a2), axis=1)
    q = np.minimum(agent.critic1_target(sa2), agent.critic2_target(sa2)).reshape(-1)
    np.testing.assert_allclose(agent.td_targets(batch, rng), batch.rewards + 0.99 * q, rtol=1e-14)


def test_zero_error_gives_zero_step(rng):
    agent = make_agent(gamma=0.0)
    for net in (agent.critic1, agent.critic2):
        net.params[:] = 0.0
    buf = fill(agent)
    buf.rewards[:] = 0.0
    batch = buf.sample_uniform(8, rng)
    g1, g2, d1, d2, loss = agent.critic_gradients(batch, LossKind.HUBER, rng)
    assert not g1.any() and not g2.any() and not d1.any() and loss == 0.0


@pytest.mark.parametrize("loss", list(LossKind))
def test_critic_gradient_matches_finite_difference(loss, rng):
    agent = make_agent(policy_noise=0.0, scheme="per")
    buf = fill(agent, n=16)
    buf.update_priorities(np.arange(16), rng.exponential(2.0, 16))
    batch = buf.sample_prioritized(5, rng)
    batch.rewards = batch.rewards * 4.0  # spread deltas over both Huber/PAL branches
    y = agent.td_targets(batch, rng)
    sa = np.concatenate((batch.states, batch.actions), axis=1)
    g1, _, d1, d2, _ = agent.critic_gradients(batch, loss, rng)
    xi = pal_xi(np.maximum(np.abs(d1), np.abs(d2)), agent.config.alpha)
    fn = {LossKind.MSE: mse, LossKind.HUBER: huber, LossKind.PAL: lambda d: pal(d, xi, agent.config.alpha)}[loss]

    def objective(params):
        agent.critic1.params[:] = params
        return float(np.mean(batch.weights * fn(y - agent.critic1(sa).reshape(-1))[0]))

    base = agent.critic1.params.copy()
    num = np.empty_like(base)
    for i in range(base.size):
        e = np.zeros_like(base)
        e[i] = 1e-6
        num[i] = (objective(base + e) - objective(base - e)) / 2e-6
    agent.critic1.params[:] = base
    np.testing.assert_allclose(g1, num, rtol=1e-4, atol=1e-8)


def test_pal_small_errors_equal_mse(rng):
    agent = make_agent(policy_noise=0.0)
    buf = fill(agent)
    buf.rewards *= 1e-3
    for net in agent.networks().values():
        net.params *= 1e-3
    batch = buf.sample_uniform(8, rng)
    seed = int(rng.integers(1 << 30))
    gp = agent.critic_gradients(batch, LossKind.PAL, np.random.default_rng(seed))
    gm = agent.critic_gradients(batch, LossKind.MSE, np.random.default_rng(seed))
    assert np.max(np.abs(gp[2])) <= 1.0
    np.testing.assert_allclose(gp[0], gm[0], rtol=1e-14, atol=1e-18)
    np.testing.assert_allclose(gp[1], gm[1], rtol=1e-14, atol=1e-18)


def test_critic_update_rejects_nan(rng):
    agent = make_agent()
    buf = fill(agent)
    buf.rewards[:] = np.nan
    with pytest.raises((FloatingPointError, ValueError)):
        agent.critic_update(buf.sample_uniform(8, rng), LossKind.MSE, rng)


def test_actor_zero_gradient_for_constant_critic():
    agent = make_agent()
    agent.critic1.params[:] = 0.0
    agent.critic1.biases[-1][:] = 3.0
    assert not agent.actor_gradient(np.random.default_rng(0).normal(size=(8, SD))).any()


def test_actor_gradient_matches_finite_difference():
    agent = make_agent()
    s = np.random.default_rng(4).normal(size=(6, SD))

    def objective(params):
        agent.actor.params[:] = params
        a = agent.actor(s)
        return -float(np.mean(agent.critic1(np.concatenate((s, a), axis=1))))

    grad = agent.actor_gradient(s)
    base = agent.actor.params.copy()
    num = np.empty_like(base)
    for i in range(base.size):
        e = np.zeros_like(base)
        e[i] = 1e-6
        num[i] = (objective(base + e) - objective(base - e)) / 2e-6
    agent.actor.params[:] = base
    np.testing.assert_allclose(grad, num, rtol=1e-4, atol=1e-8)


def test_actor_reaches_quadratic_optimum(rng):
    agent = make_agent(policy_delay=1, actor_lr=1e-2)
    agent.critic1 = QuadraticCritic(0.37)
    buf = fill(agent)
    for _ in range(1000):
        agent.actor_update(buf.sample_uniform(8, rng))
    assert np.max(np.abs(agent.act(buf.states) - 0.37)) < 1e-2


def test_policy_delay(rng):
    agent = make_agent(policy_delay=3)
    batch = fill(agent).sample_uniform(8, rng)
    done = []
    for _ in range(9):
        agent.update_count += 1
        done.append(agent.actor_update(batch))
    assert done == [False, False, True] * 3


def test_select_action(rng):
    agent = make_agent(start_steps=5)
    s = np.zeros(SD)
    a1 = agent.select_action(s, False, None)
    np.testing.assert_array_equal(a1, agent.select_action(s, False, None))
    randoms = [agent.select_action(s, True, rng) for _ in range(5)]
    assert len({float(x[0]) for x in randoms}) == 5
    noisy = np.array([agent.select_action(s, True, rng) for _ in range(500)])
    assert np.all(np.abs(noisy) <= 1.0)
    assert abs(noisy.mean() - a1[0]) < 0.02


def test_initial_actions_uniform(rng):
    agent = make_agent(start_steps=20000)
    acts = np.array([agent.select_action(np.zeros(SD), True, rng)[0] for _ in range(20000)])
    hist, _ = np.histogram(acts, bins=10, range=(-1, 1))
    assert np.all(np.abs(hist / 2000 - 1) < 0.1)


def test_la3p_trace_order(rng):
    agent = make_agent(lam=0.5, batch_size=8)
    agent.update_count = 1  # the next step is on the delay cycle
    agent.trace = []
    buf = fill(agent)
    agent.update(buf, rng)
    ops = [e[:2] if e[0] == "sample" else e[:1] for e in agent.trace]
    assert ops == [
        ("sample", "uniform"), ("critic",), ("actor",), ("priority",), ("target",),
        ("sample", "prioritized"), ("critic",), ("priority",), ("rebuild",),
        ("sample", "inverse"), ("actor",), ("target",),
    ]
    prio = [e for e in agent.trace if e[0] == "priority"][-1]
    rebuild = [e for e in agent.trace if e[0] == "rebuild"][0]
    assert rebuild[1] == prio[2] == buf.version


def test_la3p_budget_per_step(rng):
    for lam in (0.0, 0.1, 0.5, 0.9, 1.0):
        agent = make_agent(lam=lam, batch_size=10)
        agent.update_count = 1
        agent.trace = []
        agent.update(fill(agent), rng)
        critic = sum(e[2] for e in agent.trace if e[0] == "critic")
        actor = sum(e[1] for e in agent.trace if e[0] == "actor")
        assert critic == 10 and actor == 10


def test_no_priority_write_after_inverse_actor(rng):
    agent = make_agent(lam=0.5)
    buf = fill(agent)
    agent.update(buf, rng)
    assert buf.inverse_fresh


def test_single_target_update_flag(rng):
    agent = make_agent(double_target_update=False)
    agent.update_count = 1
    agent.trace = []
    agent.update(fill(agent), rng)
    assert [e[0] for e in agent.trace].count("target") == 1
    assert agent.trace[-1] == ("target",)


def test_ordering_neutral_gradient(rng):
    """With networks frozen, block order does not change the summed critic gradient."""
    agent = make_agent(lam=0.5)
    buf = fill(agent)
    buf.update_priorities(np.arange(64), rng.exponential(2.0, 64))
    uni = buf.sample_uniform(4, rng)
    pri = buf.sample_prioritized(4, rng)

    def grad(batch, loss):
        g1, g2, *_ = agent.critic_gradients(batch, loss, np.random.default_rng(7))
        return np.concatenate((g1, g2))

    forward = grad(uni, LossKind.PAL) + grad(pri, LossKind.HUBER)
    swapped = grad(pri, LossKind.HUBER) + grad(uni, LossKind.PAL)
    np.testing.assert_array_equal(forward, swapped)


def test_uniform_never_touches_trees(rng):
    agent = make_agent(scheme="uniform")
    buf = fill(agent)
    before = (buf.version, buf.priorities.nodes.copy())
    for _ in range(5):
        agent.update(buf, rng)
    assert buf.version == before[0]
    np.testing.assert_array_equal(buf.priorities.nodes, before[1])


def test_per_flat_equals_uniform_in_expectation(rng):
    agent = make_agent(scheme="per", alpha=0.0)
    buf = agent.config.make_buffer(8, SD, AD)
    buf.alpha = 0.0
    for i in range(8):
        buf.push(np.zeros(SD), np.zeros(AD), 0.0, np.zeros(SD), False)
    buf.update_priorities(np.arange(8), rng.exponential(3.0, 8))
    buf.beta = 1.0
    batch = buf.sample_prioritized(8, rng)
    np.testing.assert_allclose(batch.weights, 1.0)
    np.testing.assert_allclose(buf.per_probabilities(), 1 / 8)


def test_scheme_buffer_mismatch(rng):
    agent = make_agent(scheme="per")
    with pytest.raises(ValueError):
        agent.baseline_update_step(fill(make_agent(scheme="lap")), rng)
    with pytest.raises(ValueError):
        make_agent(scheme="la3p").baseline_update_step(fill(agent), rng)


def test_underfull_buffer(rng):
    agent = make_agent(batch_size=32)
    with pytest.raises(ValueError):
        agent.update(fill(agent, n=16), rng)


def test_inverse_sample_requires_rebuild(rng):
    agent = make_agent()
    buf = fill(agent)
    with pytest.raises(StaleInverseTree):
        buf.sample_inverse(4, rng)


@pytest.mark.slow
@pytest.mark.parametrize("kind", ENV_KINDS)
@pytest.mark.parametrize("scheme", [s.value for s in Scheme])
def test_no_nan_over_long_training(kind, scheme):
    env = make_env(kind, 0)
    spec = env.spec
    rng = np.random.default_rng(0)
    cfg = AgentConfig(scheme=scheme, hidden=(16, 16), batch_size=16, start_steps=0)
    agent = Agent(spec.state_dim, spec.action_dim, spec.action_high, cfg, rng)
    buf = cfg.make_buffer(2000, spec.state_dim, spec.action_dim)
    state = env.reset(0)
    for _ in range(2000):
        action = agent.select_action(state, True, rng)
        res = env.step(action)
        buf.push(state, action, res.reward, res.next_state, res.terminal)
        state = env.reset() if res.done else res.next_state
    for _ in range(10_000):
        agent.update(buf, rng)
    for net in agent.networks().values():
        assert np.all(np.isfinite(net.params))
