"""Probes relating |TD error| to critic error and to policy-gradient error.

Both probes run on the bandit environments, where the true action value
and its action gradient have closed forms:

* :func:`estimation_error_probe` compares ``|delta|`` with ``|Q_theta - Q^pi|``
  at the transition and at its successor;
* :func:`gradient_divergence_probe` measures, per state, how far the policy
  gradient taken through the critic lands from the one taken through
  ``Q^pi``.

A critic is anything with ``q(states, actions) -> (n,)`` and
``grad_a(states, actions) -> (n, action_dim)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .approx import AdamState, Mlp, adam_step
from .envs import AnalyticBandit, ChainedBandit, Env, optimal_q, optimal_q_grad_a

COLUMNS = ("abs_td", "abs_est_err_t", "abs_est_err_t1", "grad_div_t", "grad_div_t1")
MIN_PAIRS = 100
ONE_STEP_TOL = 1e-12


class IdentityViolation(AssertionError):
    """An algebraic identity the probe relies on did not hold numerically."""


def _require_bandit(env: Env) -> None:
    if not isinstance(env, (AnalyticBandit, ChainedBandit)):
        raise TypeError(f"probes need a bandit with closed-form Q^pi, not {env.spec.kind}")


def _sa(states, actions) -> np.ndarray:
    s = np.asarray(states, dtype=np.float64)
    a = np.asarray(actions, dtype=np.float64).reshape(len(s), -1)
    return np.concatenate((s, a), axis=1)


# -- critics -------------------------------------------------------------


class MlpCritic:
    def __init__(self, net: Mlp) -> None:
        self.net = net

    def q(self, states, actions) -> np.ndarray:
        return self.net(_sa(states, actions)).reshape(-1)

    def grad_a(self, states, actions) -> np.ndarray:
        sa = _sa(states, actions)
        out, cache = self.net.forward(sa)
        _, g_in = self.net.backward(cache, np.ones_like(out), param_grads=False)
        return g_in[:, np.shape(states)[-1]:]


class ExactCritic:
    """``Q^pi`` itself; the chained bandit also needs the policy."""

    def __init__(self, env: Env, policy=None) -> None:
        _require_bandit(env)
        self.env = env
        self.policy = policy

    def q(self, states, actions) -> np.ndarray:
        return optimal_q(self.env, states, actions, self.policy)

    def grad_a(self, states, actions) -> np.ndarray:
        return optimal_q_grad_a(self.env, states, actions)


class InjectedErrorCritic(ExactCritic):
    """``Q^pi + bias + k(s) * a`` with ``k(s) = slope * sin(w . s + phase)``.

    A constant ``bias`` leaves every action gradient untouched; ``slope``
    adds an action-dependent error whose size varies from state to state.
    """

    def __init__(self, env: Env, bias: float = 0.0, slope: float = 0.0,
                 rng: np.random.Generator | None = None, policy=None) -> None:
        super().__init__(env, policy)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.bias = float(bias)
        self.slope = float(slope)
        self.w = rng.normal(0.0, 3.0, env.spec.state_dim)
        self.phase = float(rng.uniform(0.0, 2.0 * math.pi))

    def k(self, states) -> np.ndarray:
        s = np.asarray(states, dtype=np.float64).reshape(-1, self.env.spec.state_dim)
        return self.slope * np.sin(s @ self.w + self.phase)

    def q(self, states, actions) -> np.ndarray:
        a = np.asarray(actions, dtype=np.float64).reshape(-1)
        return super().q(states, actions) + self.bias + self.k(states) * a

    def grad_a(self, states, actions) -> np.ndarray:
        return super().grad_a(states, actions) + self.k(states)[:, None]


# -- policies ------------------------------------------------------------


class SoftmaxPolicy:
    """Categorical policy over an evenly spaced action grid.

    Only used to exercise the log-likelihood form of the policy gradient;
    the expectation over the grid is computed exactly, nothing is sampled.
    """

    def __init__(self, state_dim: int, grid_size: int = 11, hidden=(32,),
                 low: float = -1.0, high: float = 1.0, rng: np.random.Generator | None = None) -> None:
        if grid_size < 2:
            raise ValueError("grid_size must be >= 2")
        self.grid = np.linspace(low, high, grid_size)
        self.net = Mlp([state_dim, *hidden, grid_size], rng=rng if rng is not None else np.random.default_rng(0))

    @staticmethod
    def softmax(logits: np.ndarray) -> np.ndarray:
        z = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def probs(self, states) -> np.ndarray:
        return self.softmax(self.net(states))


# -- probes --------------------------------------------------------------


def estimation_error_probe(critic, env: Env, states, actions, policy=None) -> dict[str, np.ndarray]:
    """``|delta|`` next to ``|Q_theta - Q^pi|`` at the transition and its successor.

    On the one-step bandit ``delta = r - Q_theta`` and the two columns are
    equal; that is checked to ``1e-12`` and violations raise
    :class:`IdentityViolation`.  On the chained bandit (stage-0 ``states``,
    ``policy`` required) ``delta = -eps_t + gamma * eps_t1`` with
    ``eps = Q_theta - Q^pi``, which is checked instead; only a correlation
    between ``|delta|`` and ``|eps_t|`` is expected there.
    """
    _require_bandit(env)
    s = np.asarray(states, dtype=np.float64)
    a = np.asarray(actions, dtype=np.float64).reshape(len(s), -1)
    q = critic.q(s, a)
    if isinstance(env, AnalyticBandit):
        rewards = env.rewards(s, a)
        delta = rewards - q
        err_t = np.abs(q - optimal_q(env, s, a))
        gap = float(np.max(np.abs(np.abs(delta) - err_t), initial=0.0))
        if gap > ONE_STEP_TOL:
            raise IdentityViolation(f"one-step |delta| and |Q - Q^pi| differ by {gap:.3e}")
        return {"abs_td": np.abs(delta), "abs_est_err_t": err_t, "abs_est_err_t1": np.zeros(len(s))}

    if policy is None:
        raise ValueError("the chained bandit probe needs the policy that picks successor actions")
    if np.any(s[:, -1] != 0.0):
        raise ValueError("chained bandit probe expects stage-0 states")
    s1 = env.next_states(s)
    a1 = policy(s1)
    q1 = critic.q(s1, a1)
    rewards = env.rewards(s, a)
    delta = rewards + env.gamma * q1 - q
    eps_t = q - optimal_q(env, s, a, policy)
    eps_t1 = q1 - optimal_q(env, s1, a1)
    scale = 1.0 + np.abs(q) + np.abs(q1) + np.abs(rewards)
    gap = float(np.max(np.abs(delta - (-eps_t + env.gamma * eps_t1)) / scale, initial=0.0))
    if gap > 1e-9:
        raise IdentityViolation(f"chained delta deviates from -eps_t + gamma eps_t1 by {gap:.3e}")
    return {"abs_td": np.abs(delta), "abs_est_err_t": np.abs(eps_t), "abs_est_err_t1": np.abs(eps_t1)}


def gradient_divergence_probe(policy, critic, env: Env, states) -> np.ndarray:
    """Per-state norm of the policy-gradient difference (critic vs ``Q^pi``).

    ``policy`` is either a deterministic actor :class:`Mlp`, for which the
    gradient is ``J_phi^T grad_a Q`` at ``a = pi(s)``, or a
    :class:`SoftmaxPolicy`, for which it is the exact expectation of
    ``Q(s, a) grad log pi(a|s)`` over the action grid.
    """
    _require_bandit(env)
    s = np.asarray(states, dtype=np.float64)
    out = np.empty(len(s))
    if isinstance(policy, SoftmaxPolicy):
        if not isinstance(env, AnalyticBandit):
            raise TypeError("the softmax probe is defined on the one-step bandit only")
        grid = policy.grid
        for i in range(len(s)):
            logits, cache = policy.net.forward(s[i:i + 1])
            p = policy.softmax(logits)[0]
            rep = np.repeat(s[i:i + 1], grid.size, axis=0)
            dq = critic.q(rep, grid[:, None]) - optimal_q(env, rep, grid[:, None])
            # d/dz_j sum_k pi_k dq_k = pi_j (dq_j - E_pi[dq])
            g_logits = p * (dq - p @ dq)
            grad, _ = policy.net.backward(cache, g_logits[None, :], input_grad=False)
            out[i] = np.linalg.norm(grad)
        return out
    if not isinstance(policy, Mlp):
        raise TypeError(f"unsupported policy type {type(policy).__name__}")
    for i in range(len(s)):
        a, cache = policy.forward(s[i:i + 1])
        diff = critic.grad_a(s[i:i + 1], a) - optimal_q_grad_a(env, s[i:i + 1], a)
        grad, _ = policy.backward(cache, diff, input_grad=False)
        out[i] = np.linalg.norm(grad)
    return out


# -- report --------------------------------------------------------------


@dataclass
class ProbeReport:
    abs_td: np.ndarray
    abs_est_err_t: np.ndarray
    abs_est_err_t1: np.ndarray
    grad_div_t: np.ndarray
    grad_div_t1: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.abs_td)
        for name in COLUMNS:
            col = np.asarray(getattr(self, name), dtype=np.float64)
            if col.shape != (n,):
                raise ValueError(f"column {name} has shape {col.shape}, expected ({n},)")
            if not np.all(np.isfinite(col)):
                raise ValueError(f"column {name} has non-finite entries")
            setattr(self, name, col)

    def __len__(self) -> int:
        return len(self.abs_td)

    def correlations(self) -> dict[str, dict[str, float | None]]:
        """Pearson and Spearman of ``|delta|`` against every other column.

        Entries are ``None`` below 100 pairs or when either column is constant.
        """
        res = {}
        for name in COLUMNS[1:]:
            col = getattr(self, name)
            if len(self) < MIN_PAIRS or np.ptp(col) == 0.0 or np.ptp(self.abs_td) == 0.0:
                res[name] = {"pearson": None, "pearson_p": None, "spearman": None, "spearman_p": None}
                continue
            pr = stats.pearsonr(self.abs_td, col)
            sr = stats.spearmanr(self.abs_td, col)
            res[name] = {"pearson": float(pr[0]), "pearson_p": float(pr[1]),
                         "spearman": float(sr[0]), "spearman_p": float(sr[1])}
        return res

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for row in zip(*(getattr(self, c) for c in COLUMNS)):
                w.writerow([repr(float(x)) for x in row])

    def summary(self) -> dict:
        return {"pairs": len(self), "correlations": self.correlations(),
                "max": {c: float(getattr(self, c).max(initial=0.0)) for c in COLUMNS}}


def build_report(critic, policy, env: Env, states, actions) -> ProbeReport:
    """Run both probes on the same transitions and join their columns."""
    est = estimation_error_probe(critic, env, states, actions, policy)
    div_t = gradient_divergence_probe(policy, critic, env, states)
    if isinstance(env, ChainedBandit):
        div_t1 = gradient_divergence_probe(policy, critic, env, env.next_states(states))
    else:
        div_t1 = np.zeros(len(div_t))  # the episode ends, there is no successor
    return ProbeReport(est["abs_td"], est["abs_est_err_t"], est["abs_est_err_t1"], div_t, div_t1)


def fit_critic(env: Env, rng: np.random.Generator, steps: int = 300, policy=None,
               hidden=(64, 64), batch_size: int = 64, lr: float = 1e-3) -> MlpCritic:
    """Train a critic part of the way on random bandit transitions.

    The one-step bandit regresses onto the reward; the chained bandit uses
    semi-gradient TD targets through ``policy`` at the successor.  A few
    hundred steps leave a critic that is neither random nor exact.
    """
    _require_bandit(env)
    sd = env.spec.state_dim
    net = Mlp([sd + 1, *hidden, 1], rng=rng)
    opt = AdamState(net.params.size, lr)
    critic = MlpCritic(net)
    for _ in range(steps):
        s = env.sample_states(batch_size, rng)
        if isinstance(env, ChainedBandit):
            s = np.concatenate((s[: batch_size // 2], env.next_states(s[batch_size // 2:])))
        a = rng.uniform(-1.0, 1.0, (batch_size, 1))
        y = env.rewards(s, a)
        if isinstance(env, ChainedBandit):
            first = s[:, -1] == 0.0
            s1 = env.next_states(s[first])
            y[first] += env.gamma * critic.q(s1, policy(s1))
        q, cache = net.forward(_sa(s, a))
        grad, _ = net.backward(cache, (q[:, 0] - y)[:, None] / batch_size, input_grad=False)
        adam_step(net, opt, grad)
    return critic


def run_probe(kind: str, seed: int = 0, pairs: int = 1000, out_dir=None) -> dict:
    """The ``lemma1`` or ``theorem1`` probe, optionally writing CSV and JSON files.

    ``lemma1``: a partly trained critic on the one-step and the chained
    bandit.  ``theorem1``: injected-error critics on the one-step bandit,
    with a perfect critic and a constant-bias critic as controls, for a
    deterministic actor and a softmax policy.
    """
    rng = np.random.default_rng(seed)
    reports: dict[str, ProbeReport] = {}
    if kind == "lemma1":
        for env in (AnalyticBandit(seed=seed), ChainedBandit(seed=seed)):
            actor = Mlp([env.spec.state_dim, 64, 64, 1], "tanh", 1.0, rng)
            critic = fit_critic(env, rng, policy=actor)
            s = env.sample_states(pairs, rng)
            a = rng.uniform(-1.0, 1.0, (pairs, 1))
            reports[env.spec.kind] = build_report(critic, actor, env, s, a)
    elif kind == "theorem1":
        env = AnalyticBandit(seed=seed)
        actor = Mlp([1, 64, 64, 1], "tanh", 1.0, rng)
        s = env.sample_states(pairs, rng)
        a = rng.uniform(-1.0, 1.0, (pairs, 1))
        critics = {
            "exact": ExactCritic(env),
            "constant_bias": InjectedErrorCritic(env, bias=0.5, rng=rng),
            "action_error": InjectedErrorCritic(env, slope=1.0, rng=rng),
        }
        for name, critic in critics.items():
            reports[name] = build_report(critic, actor, env, s, a)
        soft = SoftmaxPolicy(1, rng=rng)
        reports["softmax_exact"] = build_report(critics["exact"], soft, env, s, a)
        reports["softmax_action_error"] = build_report(critics["action_error"], soft, env, s, a)
    else:
        raise ValueError(f"unknown probe {kind!r}; choose lemma1 or theorem1")

    summary = {"probe": kind, "seed": seed, "reports": {k: r.summary() for k, r in reports.items()}}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, report in reports.items():
            report.write_csv(out / f"{kind}_{name}.csv")
        (out / f"{kind}_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return summary
