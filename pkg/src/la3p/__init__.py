"""Prioritized experience replay for actor-critic learning.

Uniform, PER, LAP and LA3P replay on a sum-tree, a TD3-style agent with
hand-written backprop, toy continuous-control environments, critic-error
probes and an experiment harness.
"""

from .agent import Agent, AgentConfig, Scheme
from .approx import AdamState, Mlp, adam_step, polyak_update
from .diagnostics import ProbeReport, estimation_error_probe, gradient_divergence_probe
from .envs import (
    AnalyticBandit, ChainedBandit, PendulumSwingUp, PointMass, make_env, optimal_q,
)
from .experiment import RunConfig, lambda_sweep, run, timing_report
from .losses import LossKind, bias_condition, clipped_priority, huber, mse, pal, pal_xi
from .replay import ReplayBuffer, SampleBatch, StaleInverseTree, Transition, split_batch
from .sum_tree import SumTree

__version__ = "0.1.0"

__all__ = [
    "AdamState", "Agent", "AgentConfig", "AnalyticBandit", "ChainedBandit", "LossKind",
    "Mlp", "PendulumSwingUp", "PointMass", "ProbeReport", "ReplayBuffer", "RunConfig",
    "SampleBatch", "Scheme", "StaleInverseTree", "SumTree", "Transition", "adam_step",
    "bias_condition", "clipped_priority", "estimation_error_probe",
    "gradient_divergence_probe", "huber", "lambda_sweep", "make_env", "mse", "optimal_q",
    "pal", "pal_xi", "polyak_update", "run", "split_batch", "timing_report",
]
