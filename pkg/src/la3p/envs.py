"""Seedable toy continuous-control environments.

All environments share a tiny gym-like surface: ``reset(seed=None)`` returns
the initial observation, ``step(action)`` returns a :class:`StepResult`.
Passing a seed to ``reset`` re-seeds the environment's generator; later
resets without a seed continue the same stream.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    kind: str
    state_dim: int
    action_dim: int
    action_low: float
    action_high: float
    max_episode_steps: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.action_low) and math.isfinite(self.action_high)):
            raise ValueError("action bounds must be finite")
        if self.action_low >= self.action_high:
            raise ValueError("action_low must be below action_high")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")


@dataclass(frozen=True)
class StepResult:
    next_state: np.ndarray
    reward: float
    done: bool  # episode over, for any reason
    terminal: bool  # over because the task ended, not because time ran out


class EpisodeFinished(RuntimeError):
    pass


class Env:
    spec: EnvSpec
    #: every reward of this environment is >= this value
    reward_lower_bound: float

    def __init__(self, seed: int | None = None) -> None:
        self.rng = np.random.default_rng(seed)
        self.t = 0
        self.done = True

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.t = 0
        self.done = False
        self._reset()
        return self.observation()

    def step(self, action) -> StepResult:
        if self.done:
            raise EpisodeFinished("step() called on a finished episode; call reset()")
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.size != self.spec.action_dim:
            raise ValueError(f"action dimension must be {self.spec.action_dim}")
        lo, hi = self.spec.action_low, self.spec.action_high
        if np.any(a < lo) or np.any(a > hi):
            warnings.warn(f"{self.spec.kind}: action outside [{lo}, {hi}] clipped", stacklevel=2)
            a = np.clip(a, lo, hi)
        reward, terminal = self._advance(a)
        self.t += 1
        self.done = terminal or self.t >= self.spec.max_episode_steps
        return StepResult(self.observation(), float(reward), self.done, terminal)

    def sample_action(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.spec.action_low, self.spec.action_high, self.spec.action_dim)

    def _reset(self) -> None:
        raise NotImplementedError

    def _advance(self, action: np.ndarray) -> tuple[float, bool]:
        """Apply ``action``; return the reward and whether the episode terminated."""
        raise NotImplementedError

    def observation(self) -> np.ndarray:
        raise NotImplementedError


class PointMass(Env):
    """Double integrator driven towards the origin.

    State ``(position, velocity)`` per axis; velocity is updated first and
    then used to move the position (semi-implicit Euler).  Leaving the box
    ``|x| <= bound`` on any axis ends the episode as a failure.
    """

    dt = 0.1
    max_speed = 2.0
    bound = 5.0

    def __init__(self, dims: int = 1, seed: int | None = None, max_episode_steps: int = 100) -> None:
        super().__init__(seed)
        self.dims = dims
        self.spec = EnvSpec(f"PointMass{dims}D", 2 * dims, dims, -1.0, 1.0, max_episode_steps)
        self.pos = np.zeros(dims)
        self.vel = np.zeros(dims)
        reach = self.bound + self.max_speed * self.dt
        self.reward_lower_bound = -dims * (reach ** 2 + 0.01)

    def _reset(self) -> None:
        self.pos = self.rng.uniform(-1.0, 1.0, self.dims)
        self.vel = np.zeros(self.dims)

    def _advance(self, a):
        self.vel = np.clip(self.vel + a * self.dt, -self.max_speed, self.max_speed)
        self.pos = self.pos + self.vel * self.dt
        reward = -(float(self.pos @ self.pos) + 0.01 * float(a @ a))
        return reward, bool(np.any(np.abs(self.pos) > self.bound))

    def observation(self):
        return np.concatenate([self.pos, self.vel])


def angle_normalize(x: float) -> float:
    return ((x + math.pi) % (2 * math.pi)) - math.pi


class PendulumSwingUp(Env):
    """Classic torque-limited pendulum swing-up, observed as ``(cos, sin, omega)``."""

    g = 10.0
    m = 1.0
    length = 1.0
    dt = 0.05
    max_speed = 8.0
    max_torque = 2.0

    def __init__(self, seed: int | None = None, max_episode_steps: int = 200) -> None:
        super().__init__(seed)
        self.spec = EnvSpec("PendulumSwingUp", 3, 1, -self.max_torque, self.max_torque, max_episode_steps)
        self.theta = 0.0
        self.omega = 0.0
        self.reward_lower_bound = -(math.pi ** 2 + 0.1 * self.max_speed ** 2 + 0.001 * self.max_torque ** 2)

    def _reset(self) -> None:
        self.theta = float(self.rng.uniform(-math.pi, math.pi))
        self.omega = float(self.rng.uniform(-1.0, 1.0))

    def _advance(self, a):
        u = float(a[0])
        th, w = self.theta, self.omega
        reward = -(angle_normalize(th) ** 2 + 0.1 * w * w + 0.001 * u * u)
        w = w + (3.0 * self.g / (2.0 * self.length) * math.sin(th)
                 + 3.0 / (self.m * self.length ** 2) * u) * self.dt
        w = min(max(w, -self.max_speed), self.max_speed)
        self.theta = th + w * self.dt
        self.omega = w
        return reward, False

    def observation(self):
        return np.array([math.cos(self.theta), math.sin(self.theta), self.omega])


class AnalyticBandit(Env):
    """One-step contextual bandit with a closed-form action value.

    Context ``s`` is uniform on ``[-1, 1]^state_dim``; the reward for action
    ``a`` is ``-(a - g(s))^2`` with ``g(s) = 0.5 * tanh(2 * s[0])``.  Every
    episode ends after one step, so the action value is the reward itself.
    """

    def __init__(self, state_dim: int = 1, seed: int | None = None) -> None:
        super().__init__(seed)
        self.spec = EnvSpec("AnalyticBandit", state_dim, 1, -1.0, 1.0, 1)
        self.context = np.zeros(state_dim)
        self.reward_lower_bound = -(1.0 + 0.5) ** 2

    @staticmethod
    def target(states) -> np.ndarray:
        """Optimal action ``g(s)`` for a state or a batch of states."""
        s = np.asarray(states, dtype=np.float64)
        return 0.5 * np.tanh(2.0 * s[..., 0])

    def rewards(self, states, actions) -> np.ndarray:
        """Batched reward ``-(a - g(s))^2``."""
        a = np.asarray(actions, dtype=np.float64)
        return -(a[..., 0] - self.target(states)) ** 2

    def _reset(self) -> None:
        self.context = self.rng.uniform(-1.0, 1.0, self.spec.state_dim)

    def _advance(self, a):
        return float(self.rewards(self.context, a)), True

    def observation(self):
        # the next state of a finished one-step episode is never bootstrapped
        return self.context.copy()

    def sample_states(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, (n, self.spec.state_dim))


class ChainedBandit(Env):
    """Two chained bandit stages with a stage flag as the last state entry.

    Stage 0 draws ``x`` uniform on ``[-1, 1]^context_dim`` and pays
    ``-(a - g(x))^2``; the next state is ``(-0.9 x, 1)`` regardless of the
    action.  Stage 1 pays ``-(a - g(x))^2`` again and ends the episode.
    Because the transition ignores the action, ``grad_a Q^pi`` is
    ``-2 (a - g(x))`` at both stages while the stage-0 value still carries
    ``gamma`` times the successor's value.
    """

    shrink = -0.9

    def __init__(self, context_dim: int = 1, gamma: float = 0.99, seed: int | None = None) -> None:
        super().__init__(seed)
        if not 0.0 <= gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        self.gamma = float(gamma)
        self.spec = EnvSpec("ChainedBandit", context_dim + 1, 1, -1.0, 1.0, 2)
        self.context = np.zeros(context_dim)
        self.stage = 0
        self.reward_lower_bound = -(1.0 + 0.5) ** 2

    @staticmethod
    def target(states) -> np.ndarray:
        return AnalyticBandit.target(states)

    def rewards(self, states, actions) -> np.ndarray:
        """Batched per-stage reward ``-(a - g(x))^2``."""
        a = np.asarray(actions, dtype=np.float64)
        return -(a[..., 0] - self.target(states)) ** 2

    def next_states(self, states) -> np.ndarray:
        """Successor of a batch of stage-0 states."""
        s = np.array(states, dtype=np.float64)
        s[..., :-1] *= self.shrink
        s[..., -1] = 1.0
        return s

    def sample_states(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Stage-0 states."""
        ctx = rng.uniform(-1.0, 1.0, (n, self.spec.state_dim - 1))
        return np.concatenate((ctx, np.zeros((n, 1))), axis=1)

    def _reset(self) -> None:
        self.context = self.rng.uniform(-1.0, 1.0, self.spec.state_dim - 1)
        self.stage = 0

    def _advance(self, a):
        reward = float(self.rewards(self.context, a))
        if self.stage == 0:
            self.context = self.context * self.shrink
            self.stage = 1
            return reward, False
        return reward, True

    def observation(self):
        return np.append(self.context, float(self.stage))


def optimal_q(env: Env, states, actions, policy=None) -> np.ndarray:
    """Exact ``Q^pi(s, a)`` of the bandit environments, batched.

    The one-step bandit's value does not depend on the policy.  The chained
    bandit needs ``policy`` (states -> actions) to value stage-0 states.
    """
    if not isinstance(env, (AnalyticBandit, ChainedBandit)):
        raise TypeError(f"closed-form Q is only available for the bandits, not {env.spec.kind}")
    s = np.asarray(states, dtype=np.float64)
    a = np.asarray(actions, dtype=np.float64)
    a = a[..., 0] if a.ndim >= 1 and a.shape[-1:] == (1,) else a
    q = -(a - env.target(s)) ** 2
    if isinstance(env, ChainedBandit):
        first = s[..., -1] == 0.0
        if np.any(first):
            if policy is None:
                raise ValueError("stage-0 values of the chained bandit need a policy")
            s1 = env.next_states(s[first])
            q[first] += env.gamma * optimal_q(env, s1, policy(s1))
    return q


def optimal_q_grad_a(env: Env, states, actions) -> np.ndarray:
    """``grad_a Q^pi(s, a) = -2 (a - g(s))`` for both bandits, shape ``(n, 1)``."""
    if not isinstance(env, (AnalyticBandit, ChainedBandit)):
        raise TypeError(f"closed-form Q is only available for the bandits, not {env.spec.kind}")
    s = np.asarray(states, dtype=np.float64).reshape(-1, env.spec.state_dim)
    a = np.asarray(actions, dtype=np.float64).reshape(-1, 1)
    return -2.0 * (a - env.target(s)[:, None])


ENV_KINDS = ("PointMass1D", "PointMass2D", "PendulumSwingUp", "AnalyticBandit", "ChainedBandit")


def make_env(kind: str, seed: int | None = None) -> Env:
    """Build an environment from its name (case-insensitive)."""
    key = kind.lower().replace("_", "").replace("-", "")
    if key == "pointmass1d":
        return PointMass(1, seed)
    if key == "pointmass2d":
        return PointMass(2, seed)
    if key in ("pendulumswingup", "pendulum"):
        return PendulumSwingUp(seed)
    if key in ("analyticbandit", "bandit"):
        return AnalyticBandit(seed=seed)
    if key == "chainedbandit":
        return ChainedBandit(seed=seed)
    raise ValueError(f"unknown environment {kind!r}; choose from {', '.join(ENV_KINDS)}")
