"""Training runs, evaluation protocol, summaries, timing and lambda sweeps.

A run trains one agent per seed and writes, per seed, a CSV of periodic
evaluations (``step,seed,mean_return,wall_clock_ms``) plus one JSON summary
per configuration.  Everything except the wall-clock column is a pure
function of the configuration and the seed.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .agent import Agent, AgentConfig, Scheme
from .envs import Env, make_env
from .losses import LossKind

EVAL_SEED_OFFSET = 100
LAST_EVALS = 10
CSV_HEADER = ("step", "seed", "mean_return", "wall_clock_ms")

# full-scale benchmark settings; every other field keeps its desk default
PAPER_SCALE = {
    "batch": 256,
    "hidden": (256, 256),
    "start_steps": 25_000,
    "steps": 1_000_000,
    "eval_every": 1000,
    "eval_episodes": 10,
}


@dataclass(frozen=True)
class RunConfig:
    env: str = "PointMass1D"
    scheme: str = "la3p"
    lam: float = 0.5
    alpha: float | None = None  # None -> scheme default
    beta: float = 0.4
    gamma: float = 0.99
    zeta: float = 0.005
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    batch: int = 64
    hidden: tuple[int, ...] = (64, 64)
    capacity: int | None = None  # None -> large enough to never overwrite
    start_steps: int = 1000
    steps: int = 40_000
    eval_every: int = 500
    eval_episodes: int = 5
    seeds: tuple[int, ...] = (0,)
    out: str = "runs"
    double_target_update: bool = True
    uniform_loss: str = "mse"

    def __post_init__(self) -> None:
        scheme = Scheme.parse(self.scheme).value
        object.__setattr__(self, "scheme", scheme)
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        make_env(self.env)  # unknown names fail here, before any work
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.alpha is not None and not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 <= self.zeta <= 1.0:
            raise ValueError(f"zeta must lie in [0, 1], got {self.zeta}")
        for name in ("batch", "eval_every", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.start_steps < 0 or self.steps < 0:
            raise ValueError("steps and start_steps must be >= 0")
        if self.start_steps < self.batch and self.steps > self.start_steps:
            raise ValueError("start_steps must be >= batch so the first update has a full batch")
        if self.capacity is not None and self.capacity < self.batch:
            raise ValueError("capacity must be >= batch")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("hidden widths must be >= 1")
        LossKind(self.uniform_loss)

    @classmethod
    def paper_scale(cls, **overrides) -> "RunConfig":
        return cls(**{**PAPER_SCALE, **overrides})

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    @property
    def buffer_capacity(self) -> int:
        return self.capacity if self.capacity is not None else max(self.steps, self.batch)

    def agent_config(self) -> AgentConfig:
        return AgentConfig(
            scheme=self.scheme, lam=self.lam, alpha=self.alpha, beta0=self.beta,
            hidden=self.hidden, batch_size=self.batch, gamma=self.gamma, zeta=self.zeta,
            actor_lr=self.actor_lr, critic_lr=self.critic_lr, start_steps=self.start_steps,
            double_target_update=self.double_target_update,
            uniform_loss=LossKind(self.uniform_loss),
        )

    def run_name(self) -> str:
        name = f"{self.env}_{self.scheme}"
        if self.scheme == Scheme.LA3P.value:
            name += f"_lam{self.lam:g}"
        return name


@dataclass(frozen=True)
class EvalRecord:
    step: int
    seed: int
    mean_return: float
    wall_clock_ms: float


@dataclass
class SeedResult:
    seed: int
    records: list[EvalRecord]
    wall_clock_ms: float
    update_steps: int

    @property
    def last_evals_mean(self) -> float:
        return float(np.mean([r.mean_return for r in self.records[-LAST_EVALS:]]))


@dataclass
class RunResult:
    config: RunConfig
    seeds: list[SeedResult] = field(default_factory=list)

    def statistic(self) -> tuple[float, float | None]:
        """Mean over seeds of the last-10-evaluation average, and its 95% half-width."""
        return mean_ci([s.last_evals_mean for s in self.seeds])

    def summary(self) -> dict:
        mean, half = self.statistic()
        return {
            "name": self.config.run_name(),
            "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.config).items()},
            "last_evals": LAST_EVALS,
            "per_seed": {str(s.seed): s.last_evals_mean for s in self.seeds},
            "mean": mean,
            "ci95": half,
            "wall_clock_ms": {str(s.seed): s.wall_clock_ms for s in self.seeds},
        }


def mean_ci(values, confidence: float = 0.95) -> tuple[float, float | None]:
    """Sample mean and Student-t half-width; the width is ``None`` for one value."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("no values")
    mean = float(x.mean())
    if x.size < 2:
        return mean, None
    sem = float(x.std(ddof=1)) / math.sqrt(x.size)
    return mean, float(stats.t.ppf(0.5 + confidence / 2.0, x.size - 1) * sem)


# -- running -------------------------------------------------------------


def evaluate(agent: Agent, env: Env, episodes: int, seed: int) -> float:
    """Mean undiscounted return of the noise-free policy.

    The environment is re-seeded with ``seed`` first, so every evaluation
    of a run starts from the same initial states.
    """
    total = 0.0
    for ep in range(episodes):
        state = env.reset(seed if ep == 0 else None)
        done = False
        while not done:
            res = env.step(agent.select_action(state, explore=False, rng=None))
            total += res.reward
            state, done = res.next_state, res.done
    return total / episodes


def run_seed(cfg: RunConfig, seed: int) -> SeedResult:
    """Train one agent and return its evaluation curve."""
    t0 = time.perf_counter()
    env = make_env(cfg.env, seed)
    eval_env = make_env(cfg.env, seed + EVAL_SEED_OFFSET)
    spec = env.spec
    rng = np.random.default_rng(seed)
    agent_cfg = cfg.agent_config()
    agent = Agent(spec.state_dim, spec.action_dim, spec.action_high, agent_cfg, rng)
    buffer = agent_cfg.make_buffer(cfg.buffer_capacity, spec.state_dim, spec.action_dim)
    eval_seed = seed + EVAL_SEED_OFFSET

    def record(step: int) -> EvalRecord:
        ret = evaluate(agent, eval_env, cfg.eval_episodes, eval_seed)
        return EvalRecord(step, seed, ret, (time.perf_counter() - t0) * 1e3)

    records = [record(0)]
    state = env.reset(seed)
    updates = 0
    anneal = agent_cfg.scheme is Scheme.PER
    train_span = max(cfg.steps - cfg.start_steps, 1)
    for t in range(1, cfg.steps + 1):
        action = agent.select_action(state, explore=True, rng=rng)
        res = env.step(action)
        buffer.push(state, action, res.reward, res.next_state, res.terminal)
        state = env.reset() if res.done else res.next_state
        if t > cfg.start_steps:
            if anneal:
                buffer.anneal_beta((t - cfg.start_steps) / train_span)
            agent.update(buffer, rng)
            updates += 1
        if t % cfg.eval_every == 0:
            records.append(record(t))
    return SeedResult(seed, records, (time.perf_counter() - t0) * 1e3, updates)


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def records_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow([r.step, r.seed, repr(r.mean_return), f"{r.wall_clock_ms:.3f}"])
    return buf.getvalue()


def read_records(path) -> list[EvalRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"{path}: unexpected header {rows[:1]}")
    return [EvalRecord(int(a), int(b), float(c), float(d)) for a, b, c, d in rows[1:]]


def smooth(values, window: int = 5) -> np.ndarray:
    """Trailing moving average; the first points average what is available."""
    x = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be >= 1")
    c = np.concatenate(([0.0], np.cumsum(x)))
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def prepare_out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = tempfile.NamedTemporaryFile(dir=out, prefix=".write-check-")
        probe.close()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    return out


def run(cfg: RunConfig, workers: int = 1, write: bool = True, smoothing: int | None = None) -> RunResult:
    """Train every seed of ``cfg``; write per-seed CSVs and a summary JSON.

    ``smoothing`` additionally writes ``*_smoothed.csv`` files with a
    trailing window over ``mean_return``; raw CSVs are never smoothed.
    """
    out = prepare_out_dir(cfg.out) if write else None
    if workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            seeds = list(pool.map(run_seed, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        seeds = [run_seed(cfg, s) for s in cfg.seeds]
    result = RunResult(cfg, seeds)
    if out is not None:
        name = cfg.run_name()
        for s in seeds:
            _atomic_write(out / f"{name}_seed{s.seed}.csv", records_csv(s.records))
            if smoothing:
                sm = smooth([r.mean_return for r in s.records], smoothing)
                rows = [replace(r, mean_return=float(v)) for r, v in zip(s.records, sm)]
                _atomic_write(out / f"{name}_seed{s.seed}_smoothed.csv", records_csv(rows))
        _atomic_write(out / f"{name}_summary.json", json.dumps(result.summary(), indent=2) + "\n")
    return result


# -- reports -------------------------------------------------------------


def timing_report(timings: dict[str, list[float]], baseline: str = "uniform") -> list[dict]:
    """Per-scheme mean and 95% half-width of run time, and the change over ``baseline``.

    ``timings`` maps a scheme name to per-seed run times (any unit).  The
    percentage is ``(mean / mean_baseline - 1) * 100``.
    """
    if baseline not in timings or not timings[baseline]:
        raise ValueError(f"timing report needs runs for the {baseline!r} baseline")
    for name, values in timings.items():
        if not values:
            raise ValueError(f"no timings recorded for {name!r}")
    base, _ = mean_ci(timings[baseline])
    rows = []
    for name, values in timings.items():
        mean, half = mean_ci(values)
        rows.append({"scheme": name, "mean": mean, "ci95": half,
                     "percent_over_baseline": (mean / base - 1.0) * 100.0})
    return rows


def format_timing(rows: list[dict], unit: str = "s") -> str:
    lines = [f"{'scheme':<10} {'run time (' + unit + ')':>22} {'vs uniform':>11}"]
    for r in rows:
        ci = "" if r["ci95"] is None else f" +- {r['ci95']:.2f}"
        lines.append(f"{r['scheme']:<10} {r['mean']:>12.2f}{ci:<10} {r['percent_over_baseline']:>+10.2f}%")
    return "\n".join(lines)


def lambda_sweep(cfg: RunConfig, lambdas, workers: int = 1, write: bool = True) -> list[dict]:
    """One LA3P configuration per lambda; rows sorted by lambda ascending."""
    lams = sorted(float(x) for x in lambdas)
    if not lams:
        raise ValueError("lambda sweep needs at least one value")
    rows = []
    for lam in lams:
        res = run(cfg.with_(scheme="la3p", lam=lam), workers=workers, write=write)
        mean, half = res.statistic()
        rows.append({"lambda": lam, "mean": mean, "ci95": half, "seeds": len(res.seeds)})
    return rows


def format_rows(rows: list[dict], key: str) -> str:
    lines = [f"{key:<10} {'last-10 mean':>14} {'95% CI':>10}"]
    for r in rows:
        ci = "n/a" if r["ci95"] is None else f"{r['ci95']:.2f}"
        k = r[key] if isinstance(r[key], str) else f"{r[key]:g}"
        lines.append(f"{k:<10} {r['mean']:>14.3f} {ci:>10}")
    return "\n".join(lines)


def time_update_steps(scheme: str, capacity: int, updates: int = 200, fill: int | None = None,
                      seed: int = 0, state_dim: int = 2, action_dim: int = 1, **agent_kw) -> float:
    """Median wall-clock seconds of one update step on a buffer holding ``fill`` transitions.

    Transitions are random, so only the cost of sampling, learning and
    priority maintenance is measured.  The median of per-step times keeps
    scheduler hiccups on a shared machine out of the figure.
    """
    rng = np.random.default_rng(seed)
    cfg = AgentConfig(scheme=scheme, **agent_kw)
    agent = Agent(state_dim, action_dim, 1.0, cfg, rng)
    buffer = cfg.make_buffer(capacity, state_dim, action_dim)
    n = capacity if fill is None else fill
    buffer.extend(rng.normal(size=(n, state_dim)), rng.uniform(-1, 1, (n, action_dim)),
                  rng.normal(size=n), rng.normal(size=(n, state_dim)), np.zeros(n))
    for _ in range(5):
        agent.update(buffer, rng)
    times = np.empty(updates)
    for i in range(updates):
        t0 = time.perf_counter()
        agent.update(buffer, rng)
        times[i] = time.perf_counter() - t0
    return float(np.median(times))
