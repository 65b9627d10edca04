"""Ring-buffer experience replay with uniform, PER, LAP and inverse-LAP sampling."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .sum_tree import SumTree


class StaleInverseTree(RuntimeError):
    """Inverse sampling was requested after priorities changed without a rebuild."""


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass
class SampleBatch:
    indices: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def transitions(self) -> list[Transition]:
        return [
            Transition(self.states[k], self.actions[k], float(self.rewards[k]),
                       self.next_states[k], bool(self.dones[k]))
            for k in range(len(self.indices))
        ]


MODES = ("lap", "per")


class ReplayBuffer:
    """Fixed-capacity transition store with a sum-tree over priorities.

    ``mode`` picks the priority convention:

    * ``"lap"`` stores the clipped priority ``max(|delta|**alpha, 1)`` in the
      tree and supports inverse sampling.
    * ``"per"`` keeps raw ``|delta|`` and stores ``|delta|**alpha + mu``,
      with importance weights annealed through ``beta``.

    Every priority write (including a push) bumps ``version``; the inverse
    tree is only valid for the version it was rebuilt at.
    """

    def __init__(self, capacity: int, state_dim: int, action_dim: int, *,
                 mode: str = "lap", alpha: float = 0.4, beta0: float = 0.4,
                 mu: float = 1e-4, p_init: float = 1.0, backend: str | None = None) -> None:
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if not 0.0 < alpha <= 1.0 and not (mode == "per" and alpha == 0.0):
            raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
        self.capacity = int(capacity)
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.mode = mode
        self.alpha = float(alpha)
        self.beta0 = float(beta0)
        self.beta = float(beta0)
        self.mu = float(mu)
        self.p_init = float(p_init)

        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity)
        self.abs_td = np.zeros(capacity)

        self.priorities = SumTree(capacity, backend)
        self.inverse_priorities = SumTree(capacity, backend)
        self.write_head = 0
        self.count = 0
        self.version = 0
        self._inverse_version = -1

    def __len__(self) -> int:
        return self.count

    # -- storage ---------------------------------------------------------

    def push(self, state, action=None, reward=None, next_state=None, done=None) -> int:
        """Store one transition at the write head with the initial priority.

        Accepts either a :class:`Transition` or its five fields.
        """
        if isinstance(state, Transition):
            t = state
            state, action, reward, next_state, done = t.state, t.action, t.reward, t.next_state, t.done
        s = np.asarray(state, dtype=np.float64).reshape(-1)
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        s2 = np.asarray(next_state, dtype=np.float64).reshape(-1)
        if s.size != self.state_dim or s2.size != self.state_dim:
            raise ValueError(f"state dimension must be {self.state_dim}")
        if a.size != self.action_dim:
            raise ValueError(f"action dimension must be {self.action_dim}")
        i = self.write_head
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = reward
        self.next_states[i] = s2
        self.dones[i] = float(done)
        self.abs_td[i] = self.p_init
        leaf = self.p_init if self.mode == "lap" else self.p_init ** self.alpha + self.mu
        self.priorities.set(i, leaf)
        self.version += 1
        self.write_head = (i + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)
        return i

    def extend(self, states, actions, rewards, next_states, dones) -> np.ndarray:
        """Push a batch of transitions in order; same result as repeated :meth:`push`."""
        s = np.asarray(states, dtype=np.float64).reshape(-1, self.state_dim)
        n = len(s)
        a = np.asarray(actions, dtype=np.float64).reshape(n, self.action_dim)
        s2 = np.asarray(next_states, dtype=np.float64).reshape(n, self.state_dim)
        r = np.asarray(rewards, dtype=np.float64).reshape(n)
        d = np.asarray(dones, dtype=np.float64).reshape(n)
        idx = (self.write_head + np.arange(n)) % self.capacity
        # with wrap-around only the last write to a slot survives
        keep = slice(max(n - self.capacity, 0), n)
        idx_k = idx[keep]
        self.states[idx_k] = s[keep]
        self.actions[idx_k] = a[keep]
        self.rewards[idx_k] = r[keep]
        self.next_states[idx_k] = s2[keep]
        self.dones[idx_k] = d[keep]
        self.abs_td[idx_k] = self.p_init
        leaf = self.p_init if self.mode == "lap" else self.p_init ** self.alpha + self.mu
        self.priorities.set_many(idx_k, np.full(idx_k.size, leaf))
        self.version += n
        self.write_head = int((self.write_head + n) % self.capacity)
        self.count = min(self.count + n, self.capacity)
        return idx

    def gather(self, indices, weights=None) -> SampleBatch:
        idx = np.asarray(indices, dtype=np.int64)
        if weights is None:
            weights = np.ones(idx.size)
        return SampleBatch(idx, self.states[idx], self.actions[idx], self.rewards[idx],
                           self.next_states[idx], self.dones[idx], weights)

    def raw_priorities(self) -> np.ndarray:
        """Priority of each stored transition as held in the tree."""
        return self.priorities.leaves[:self.count].copy()

    def _require_data(self) -> None:
        if self.count == 0:
            raise ValueError("replay buffer is empty")

    # -- sampling --------------------------------------------------------

    def sample_uniform(self, n: int, rng: np.random.Generator) -> SampleBatch:
        self._require_data()
        return self.gather(rng.integers(0, self.count, size=n))

    def per_probabilities(self) -> np.ndarray:
        """Classic PER sampling probabilities ``(|d|^a + mu) / sum``."""
        self._require_data()
        p = self.abs_td[:self.count] ** self.alpha + self.mu
        return p / p.sum()

    def importance_weights(self, indices) -> np.ndarray:
        """``(1/(|R| p_i))^beta`` normalised by its maximum over the whole buffer."""
        if self.mode != "per":
            raise RuntimeError("importance weights are only defined in 'per' mode")
        self._require_data()
        idx = np.asarray(indices, dtype=np.int64)
        leaves = self.priorities.leaves
        # the largest weight belongs to the smallest priority, so
        # w_i = (p_min / p_i)^beta without forming |R| or the total
        p_min = leaves[:self.count].min()
        return (p_min / leaves[idx]) ** self.beta

    def sample_prioritized(self, n: int, rng: np.random.Generator) -> SampleBatch:
        """Stratified proportional sampling on the priority tree.

        Under ``"per"`` the batch carries importance weights, under ``"lap"``
        every weight is 1.
        """
        self._require_data()
        idx = self.priorities.stratified_sample(n, rng)
        weights = self.importance_weights(idx) if self.mode == "per" else None
        return self.gather(idx, weights)

    def rebuild_inverse(self) -> None:
        """Refill the inverse tree with ``max_j p_j / p_i`` and rebuild it.

        Costs O(count): only ancestors of occupied leaves are recomputed, and
        leaves past ``count`` were never written so they are still zero.
        """
        self._require_data()
        if self.mode != "lap":
            raise RuntimeError("inverse priorities require 'lap' mode")
        src, dst = self.priorities, self.inverse_priorities
        src._k.inverse_leaves(src.nodes, src.offset, dst.nodes, dst.offset, self.count)
        dst._k.tree_rebuild(dst.nodes, dst.offset, self.count)
        dst.size = self.count
        self._inverse_version = self.version

    @property
    def inverse_fresh(self) -> bool:
        return self._inverse_version == self.version

    def sample_inverse(self, n: int, rng: np.random.Generator) -> SampleBatch:
        if not self.inverse_fresh:
            raise StaleInverseTree(
                f"inverse tree built at version {self._inverse_version}, priorities at {self.version}")
        return self.gather(self.inverse_priorities.stratified_sample(n, rng))

    # -- priorities ------------------------------------------------------

    def update_priorities(self, indices, td_errors) -> None:
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        td = np.abs(np.asarray(td_errors, dtype=np.float64).reshape(-1))
        if idx.shape != td.shape:
            raise ValueError("indices and td_errors must have the same length")
        if not np.isfinite(td).all():
            kind = "NaN" if np.isnan(td).any() else "infinite"
            raise ValueError(f"{kind} TD error in priority update")
        if idx.size == 0:
            return
        if idx.min() < 0 or idx.max() >= self.count:
            raise IndexError("priority update for an index that holds no transition")
        if self.mode == "lap":
            leaf = np.maximum(td ** self.alpha, 1.0)
        else:
            leaf = td ** self.alpha + self.mu
        self.abs_td[idx] = td
        tree = self.priorities
        if tree.backend == "python":
            tree.set_many(idx, leaf)
        else:
            # already validated above; the compiled scatter keeps the last duplicate
            tree._k.tree_set_many(tree.nodes, tree.offset, idx, leaf)
        self.version += 1

    def anneal_beta(self, progress: float) -> float:
        """Linear schedule from ``beta0`` at progress 0 to 1 at progress >= 1."""
        progress = min(max(progress, 0.0), 1.0)
        self.beta = self.beta0 + (1.0 - self.beta0) * progress
        return self.beta

    # -- debugging -------------------------------------------------------

    def dump_csv(self, path) -> None:
        """Write ``index,abs_td,raw_priority,inverse_priority`` for every stored slot.

        The inverse column is blank when the inverse tree is stale.
        """
        inv = self.inverse_priorities.leaves if self.inverse_fresh else None
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "abs_td", "raw_priority", "inverse_priority"])
            for i in range(self.count):
                w.writerow([i, repr(float(self.abs_td[i])), repr(float(self.priorities.leaves[i])),
                            "" if inv is None else repr(float(inv[i]))])


def split_batch(lam: float, n: int) -> tuple[int, int]:
    """Uniform and prioritized shares of a batch of ``n``: ``round(lam*n)`` and the rest."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    n_uniform = int(math.floor(lam * n + 0.5))
    return n_uniform, n - n_uniform
