import json

import numpy as np
import pytest

from la3p.approx import Mlp
from la3p.diagnostics import (
    COLUMNS, ExactCritic, IdentityViolation, InjectedErrorCritic, MlpCritic, ProbeReport,
    SoftmaxPolicy, build_report, estimation_error_probe, fit_critic, gradient_divergence_probe,
    run_probe,
)
from la3p.envs import AnalyticBandit, ChainedBandit, PointMass


@pytest.fixture
def bandit():
    return AnalyticBandit(seed=0)


def sample(env, rng, n=300):
    return env.sample_states(n, rng), rng.uniform(-1, 1, (n, 1))


def test_one_step_identity_with_random_critic(bandit, rng):
    critic = MlpCritic(Mlp([2, 32, 1], rng=rng))
    s, a = sample(bandit, rng)
    out = estimation_error_probe(critic, bandit, s, a)
    np.testing.assert_array_equal(out["abs_td"], out["abs_est_err_t"])
    assert not out["abs_est_err_t1"].any()


def test_perfect_critic_has_no_td_error(bandit, rng):
    s, a = sample(bandit, rng)
    out = estimation_error_probe(ExactCritic(bandit), bandit, s, a)
    assert not out["abs_td"].any()


def test_identity_violation_is_raised(bandit, rng, monkeypatch):
    import la3p.diagnostics as diag
    exact = diag.optimal_q
    # a Q^pi that disagrees with the reward breaks the one-step identity
    monkeypatch.setattr(diag, "optimal_q", lambda env, s, a, policy=None: exact(env, s, a) + 1e-6)
    s, a = sample(bandit, rng, 10)
    with pytest.raises(IdentityViolation):
        estimation_error_probe(ExactCritic(bandit), bandit, s, a)


def test_wrong_env_rejected(rng):
    env = PointMass(1)
    with pytest.raises(TypeError):
        estimation_error_probe(ExactCritic(AnalyticBandit()), env, np.zeros((3, 2)), np.zeros((3, 1)))
    with pytest.raises(TypeError):
        gradient_divergence_probe(Mlp([2, 1]), None, env, np.zeros((3, 2)))


def test_chained_probe_decomposition(rng):
    env = ChainedBandit(seed=0)
    actor = Mlp([2, 16, 1], "tanh", 1.0, rng)
    critic = fit_critic(env, rng, steps=50, policy=actor)
    s, a = sample(env, rng)
    out = estimation_error_probe(critic, env, s, a, actor)
    assert out["abs_est_err_t1"].any()
    with pytest.raises(ValueError):
        estimation_error_probe(critic, env, s, a)
    with pytest.raises(ValueError):
        estimation_error_probe(critic, env, env.next_states(s), a, actor)


def test_zero_divergence_controls(bandit, rng):
    actor = Mlp([1, 32, 1], "tanh", 1.0, rng)
    s = bandit.sample_states(200, rng)
    assert not gradient_divergence_probe(actor, ExactCritic(bandit), bandit, s).any()
    biased = InjectedErrorCritic(bandit, bias=0.7, rng=rng)
    assert not gradient_divergence_probe(actor, biased, bandit, s).any()
    soft = SoftmaxPolicy(1, rng=rng)
    assert not gradient_divergence_probe(soft, ExactCritic(bandit), bandit, s).any()


def test_softmax_divergence_ignores_constant_bias(bandit, rng):
    soft = SoftmaxPolicy(1, rng=rng)
    s = bandit.sample_states(50, rng)
    div = gradient_divergence_probe(soft, InjectedErrorCritic(bandit, bias=2.0, rng=rng), bandit, s)
    assert np.max(div) < 1e-13


def test_action_error_correlates(bandit, rng):
    actor = Mlp([1, 32, 1], "tanh", 1.0, rng)
    s, a = sample(bandit, rng, 1000)
    critic = InjectedErrorCritic(bandit, slope=1.0, rng=rng)
    report = build_report(critic, actor, bandit, s, a)
    corr = report.correlations()["grad_div_t"]
    assert corr["spearman"] > 0 and corr["spearman_p"] < 0.01


def test_report_validation_and_io(tmp_path, rng):
    cols = {c: rng.random(150) for c in COLUMNS}
    report = ProbeReport(**cols)
    assert len(report) == 150
    path = tmp_path / "r.csv"
    report.write_csv(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(COLUMNS)
    assert len(lines) == 151
    assert ProbeReport(**{c: v[:50] for c, v in cols.items()}).correlations()["grad_div_t"]["spearman"] is None
    bad = dict(cols, grad_div_t=np.full(150, np.nan))
    with pytest.raises(ValueError):
        ProbeReport(**bad)
    with pytest.raises(ValueError):
        ProbeReport(**dict(cols, grad_div_t=np.zeros(3)))


@pytest.mark.parametrize("kind", ["lemma1", "theorem1"])
def test_run_probe_deterministic(kind, tmp_path):
    a = run_probe(kind, seed=3, pairs=200, out_dir=tmp_path / "a")
    b = run_probe(kind, seed=3, pairs=200, out_dir=tmp_path / "b")
    assert a == b
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    assert json.loads((tmp_path / "a" / f"{kind}_summary.json").read_text())["probe"] == kind


def test_run_probe_unknown():
    with pytest.raises(ValueError):
        run_probe("corollary9")
