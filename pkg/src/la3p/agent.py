"""Deterministic-policy actor-critic (twin critics, target smoothing, delayed
actor) with pluggable replay sampling: uniform, PER, LAP and LA3P."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .approx import AdamState, Mlp, adam_step, polyak_update
from .losses import LossKind
from .replay import ReplayBuffer, SampleBatch, split_batch


class Scheme(enum.Enum):
    UNIFORM = "uniform"
    PER = "per"
    LAP = "lap"
    LA3P = "la3p"

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown scheme {value!r}; choose from "
                             f"{', '.join(s.value for s in cls)}") from None

    @property
    def buffer_mode(self) -> str:
        return "per" if self is Scheme.PER else "lap"

    @property
    def default_alpha(self) -> float:
        return 0.6 if self is Scheme.PER else 0.4


@dataclass(frozen=True)
class AgentConfig:
    scheme: Scheme = Scheme.LA3P
    lam: float = 0.5
    alpha: float | None = None  # None -> 0.6 for PER, 0.4 otherwise
    beta0: float = 0.4
    mu: float = 1e-4
    hidden: tuple[int, ...] = (64, 64)
    batch_size: int = 64
    gamma: float = 0.99
    zeta: float = 0.005
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int = 2
    expl_noise: float = 0.1
    start_steps: int = 1000
    # Polyak-update the targets after both the shared and the inverse block
    # (twice per LA3P step); False updates once at the end of the step.
    double_target_update: bool = True
    # critic loss of the uniform baseline; PAL gives the lambda = 1 limit of LA3P
    uniform_loss: LossKind = LossKind.MSE

    def __post_init__(self) -> None:
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        object.__setattr__(self, "uniform_loss", LossKind(self.uniform_loss))
        if self.alpha is None:
            object.__setattr__(self, "alpha", self.scheme.default_alpha)
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")

    def make_buffer(self, capacity: int, state_dim: int, action_dim: int,
                    backend: str | None = None) -> ReplayBuffer:
        return ReplayBuffer(capacity, state_dim, action_dim, mode=self.scheme.buffer_mode,
                            alpha=self.alpha, beta0=self.beta0, mu=self.mu, backend=backend)

    def with_(self, **changes) -> "AgentConfig":
        return replace(self, **changes)


_LOSS_CODES = {LossKind.MSE: 0, LossKind.HUBER: 1, LossKind.PAL: 2}


def _priority_td(d1: np.ndarray, d2: np.ndarray) -> np.ndarray:
    return np.maximum(np.abs(d1), np.abs(d2))


class Agent:
    """Actor, twin critics and their targets, plus the update schedules."""

    def __init__(self, state_dim: int, action_dim: int, max_action: float,
                 config: AgentConfig | None = None, rng: np.random.Generator | None = None) -> None:
        self.config = config or AgentConfig()
        cfg = self.config
        rng = rng if rng is not None else np.random.default_rng()
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.max_action = float(max_action)
        h = list(cfg.hidden)
        self.actor = Mlp([state_dim, *h, action_dim], "tanh", self.max_action, rng)
        self.critic1 = Mlp([state_dim + action_dim, *h, 1], rng=rng)
        self.critic2 = Mlp([state_dim + action_dim, *h, 1], rng=rng)
        self.actor_target = self.actor.copy()
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()
        self.actor_opt = AdamState(self.actor.params.size, cfg.actor_lr)
        self.critic1_opt = AdamState(self.critic1.params.size, cfg.critic_lr)
        self.critic2_opt = AdamState(self.critic2.params.size, cfg.critic_lr)
        self.update_count = 0
        self.env_steps = 0
        self.trace: list[tuple] | None = None

    # -- bookkeeping -----------------------------------------------------

    def _log(self, *event) -> None:
        if self.trace is not None:
            self.trace.append(event)

    @property
    def actor_due(self) -> bool:
        """Actor and targets move only every ``policy_delay``-th update step."""
        return self.update_count % self.config.policy_delay == 0

    def networks(self) -> dict[str, Mlp]:
        return {"actor": self.actor, "critic1": self.critic1, "critic2": self.critic2,
                "actor_target": self.actor_target, "critic1_target": self.critic1_target,
                "critic2_target": self.critic2_target}

    # -- acting ----------------------------------------------------------

    def act(self, states) -> np.ndarray:
        return self.actor(states)

    def select_action(self, state, explore: bool, rng: np.random.Generator) -> np.ndarray:
        """Deterministic action, or with Gaussian exploration noise when ``explore``.

        The first ``start_steps`` exploring calls return uniform random actions.
        """
        m = self.max_action
        if explore:
            self.env_steps += 1
            if self.env_steps <= self.config.start_steps:
                return rng.uniform(-m, m, self.action_dim)
        a = self.actor(state)[0]
        if explore:
            a = np.clip(a + rng.normal(0.0, self.config.expl_noise * m, self.action_dim), -m, m)
        return a

    # -- critic ----------------------------------------------------------

    def _target_q(self, batch: SampleBatch, rng: np.random.Generator):
        """Both target critics at ``(s', pi'(s') + clipped noise)``."""
        cfg, m = self.config, self.max_action
        noise = rng.normal(0.0, cfg.policy_noise * m, (len(batch), self.action_dim))
        c = cfg.noise_clip * m
        np.minimum(np.maximum(noise, -c, out=noise), c, out=noise)
        a2 = self.actor_target(batch.next_states) + noise
        np.minimum(np.maximum(a2, -m, out=a2), m, out=a2)
        sa2 = np.concatenate((batch.next_states, a2), axis=1)
        return self.critic1_target(sa2).reshape(-1), self.critic2_target(sa2).reshape(-1)

    def td_targets(self, batch: SampleBatch, rng: np.random.Generator) -> np.ndarray:
        """``r + gamma (1 - done) min_k Q'_k(s', pi'(s') + clipped noise)``."""
        q1t, q2t = self._target_q(batch, rng)
        return batch.rewards + self.config.gamma * (1.0 - batch.dones) * np.minimum(q1t, q2t)

    def critic_gradients(self, batch: SampleBatch, loss: LossKind, rng: np.random.Generator,
                         xi: float | None = None):
        """Gradients of the batch-mean loss for both critics, without stepping.

        Returns ``(grad1, grad2, delta1, delta2, mean_loss)``.  For PAL, ``xi``
        defaults to the batch statistic over ``max(|delta1|, |delta2|)``.
        """
        if xi is not None and not xi > 0.0:
            raise ValueError(f"xi must be > 0, got {xi}")
        q1t, q2t = self._target_q(batch, rng)
        sa = np.concatenate((batch.states, batch.actions), axis=1)
        q1, c1 = self.critic1.forward(sa)
        q2, c2 = self.critic2.forward(sa)
        d1, d2, gq1, gq2, mean_loss, _ = self.critic1._k.twin_td(
            q1.reshape(-1), q2.reshape(-1), q1t, q2t, batch.rewards, batch.dones,
            batch.weights, self.config.gamma, _LOSS_CODES[loss], self.config.alpha,
            0.0 if xi is None else xi)
        if not math.isfinite(mean_loss):
            raise FloatingPointError("non-finite critic loss")
        grad1, _ = self.critic1.backward(c1, gq1[:, None], input_grad=False)
        grad2, _ = self.critic2.backward(c2, gq2[:, None], input_grad=False)
        return grad1, grad2, d1, d2, mean_loss

    def critic_update(self, batch: SampleBatch, loss: LossKind, rng: np.random.Generator,
                      xi: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Step both critics on the batch-mean loss; returns the TD errors before the step."""
        grad1, grad2, d1, d2, _ = self.critic_gradients(batch, loss, rng, xi)
        adam_step(self.critic1, self.critic1_opt, grad1)
        adam_step(self.critic2, self.critic2_opt, grad2)
        self._log("critic", loss.value, len(batch))
        return d1, d2

    # -- actor -----------------------------------------------------------

    def actor_gradient(self, states) -> np.ndarray:
        """Gradient of ``-mean Q1(s, pi(s))`` w.r.t. the actor parameters."""
        s = np.asarray(states, dtype=np.float64)
        a, ca = self.actor.forward(s)
        _, cq = self.critic1.forward(np.concatenate((s, a), axis=1))
        _, g_in = self.critic1.backward(cq, np.full((len(s), 1), -1.0 / len(s)), param_grads=False)
        grad, _ = self.actor.backward(ca, g_in[:, self.state_dim:], input_grad=False)
        return grad

    def actor_update(self, batch: SampleBatch) -> bool:
        """Ascend mean ``Q1(s, pi(s))`` over the batch; skipped off the delay cycle."""
        if not self.actor_due:
            return False
        grad = self.actor_gradient(batch.states)
        adam_step(self.actor, self.actor_opt, grad)
        self._log("actor", len(batch))
        return True

    def update_targets(self) -> None:
        z = self.config.zeta
        polyak_update(self.critic1_target, self.critic1, z)
        polyak_update(self.critic2_target, self.critic2, z)
        polyak_update(self.actor_target, self.actor, z)
        self._log("target")

    # -- update schedules ------------------------------------------------

    def _check_buffer(self, buffer: ReplayBuffer) -> None:
        if buffer.count < self.config.batch_size:
            raise ValueError(f"buffer holds {buffer.count} transitions, "
                             f"fewer than the batch size {self.config.batch_size}")

    def la3p_update_step(self, buffer: ReplayBuffer, rng: np.random.Generator) -> None:
        """One LA3P update step.

        1. uniform batch of ``round(lam*N)``: PAL critic step, actor step on
           the same batch, priority write, target update;
        2. prioritized batch of the remaining transitions: Huber critic step,
           priority write;
        3. inverse-tree rebuild, inverse-prioritized batch of the same size:
           actor step, target update.  No priority write after this actor step.
        """
        self._check_buffer(buffer)
        cfg = self.config
        self.update_count += 1
        n_uniform, n_prio = split_batch(cfg.lam, cfg.batch_size)
        due = self.actor_due

        if n_uniform:
            batch = buffer.sample_uniform(n_uniform, rng)
            self._log("sample", "uniform", n_uniform)
            d1, d2 = self.critic_update(batch, LossKind.PAL, rng)
            self.actor_update(batch)
            buffer.update_priorities(batch.indices, _priority_td(d1, d2))
            self._log("priority", n_uniform, buffer.version)
            if due and cfg.double_target_update:
                self.update_targets()

        if n_prio:
            batch = buffer.sample_prioritized(n_prio, rng)
            self._log("sample", "prioritized", n_prio)
            d1, d2 = self.critic_update(batch, LossKind.HUBER, rng)
            buffer.update_priorities(batch.indices, _priority_td(d1, d2))
            self._log("priority", n_prio, buffer.version)
            buffer.rebuild_inverse()
            self._log("rebuild", buffer.version)
            batch = buffer.sample_inverse(n_prio, rng)
            self._log("sample", "inverse", n_prio)
            self.actor_update(batch)
            if due and cfg.double_target_update:
                self.update_targets()

        if due and not cfg.double_target_update:
            self.update_targets()

    def baseline_update_step(self, buffer: ReplayBuffer, rng: np.random.Generator,
                             scheme: Scheme | str | None = None) -> None:
        """One update of a single-batch baseline (uniform, PER or LAP)."""
        self._check_buffer(buffer)
        scheme = Scheme.parse(scheme or self.config.scheme)
        n = self.config.batch_size
        self.update_count += 1
        due = self.actor_due
        if scheme is Scheme.UNIFORM:
            batch = buffer.sample_uniform(n, rng)
            self._log("sample", "uniform", n)
            self.critic_update(batch, self.config.uniform_loss, rng)
        elif scheme in (Scheme.PER, Scheme.LAP):
            expected = scheme.buffer_mode
            if buffer.mode != expected:
                raise ValueError(f"{scheme.value} needs a buffer in {expected!r} mode")
            batch = buffer.sample_prioritized(n, rng)
            self._log("sample", "prioritized", n)
            loss = LossKind.MSE if scheme is Scheme.PER else LossKind.HUBER
            d1, d2 = self.critic_update(batch, loss, rng)
            buffer.update_priorities(batch.indices, _priority_td(d1, d2))
            self._log("priority", n, buffer.version)
        else:
            raise ValueError("LA3P is not a baseline; use la3p_update_step")
        self.actor_update(batch)
        if due:
            self.update_targets()

    def update(self, buffer: ReplayBuffer, rng: np.random.Generator) -> None:
        if self.config.scheme is Scheme.LA3P:
            self.la3p_update_step(buffer, rng)
        else:
            self.baseline_update_step(buffer, rng)

