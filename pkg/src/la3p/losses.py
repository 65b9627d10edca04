"""Critic losses on the TD error ``delta = y - Q``.

Every loss returns ``(loss, dloss/ddelta)`` elementwise.  Gradients with
respect to ``Q`` carry an extra factor of -1, applied by the agent.
"""

from __future__ import annotations

import enum

import numpy as np


class LossKind(enum.Enum):
    MSE = "mse"
    HUBER = "huber"
    PAL = "pal"


def _checked(delta) -> np.ndarray:
    d = np.asarray(delta, dtype=np.float64)
    if np.isnan(d).any():
        raise ValueError("TD error contains NaN")
    return d


def mse(delta):
    d = _checked(delta)
    return 0.5 * d * d, d.copy()


def huber(delta):
    """Huber loss with threshold 1: quadratic for ``|delta| <= 1``, linear beyond."""
    d = _checked(delta)
    a = np.abs(d)
    quad = a <= 1.0
    loss = np.where(quad, 0.5 * d * d, a)
    grad = np.where(quad, d, np.sign(d))
    return loss, grad


def clipped_priority(delta, alpha: float) -> np.ndarray:
    """``max(|delta|**alpha, 1)``."""
    return np.maximum(np.abs(_checked(delta)) ** alpha, 1.0)


def pal_xi(deltas, alpha: float) -> float:
    """Batch normaliser: mean clipped priority of the batch."""
    d = _checked(deltas)
    if d.size == 0:
        raise ValueError("pal_xi needs a non-empty batch")
    return float(clipped_priority(d, alpha).mean())


def pal(delta, xi: float, alpha: float):
    """Prioritized approximate loss, the uniform-sampling mirror of Huber under LAP."""
    if not xi > 0.0:
        raise ValueError(f"xi must be > 0, got {xi}")
    d = _checked(delta)
    a = np.abs(d)
    quad = a <= 1.0
    loss = np.where(quad, 0.5 * d * d, a ** (1.0 + alpha) / (1.0 + alpha)) / xi
    grad = np.where(quad, d, np.sign(d) * a ** alpha) / xi
    return loss, grad


def expected_gradient_identity_check(deltas, alpha: float) -> tuple[float, float]:
    """Huber gradient under LAP sampling vs. mean PAL gradient under uniform sampling.

    Returns ``(lhs, rhs)``; the two agree up to rounding for any batch.
    """
    d = _checked(deltas)
    if d.size == 0:
        raise ValueError("identity check needs a non-empty batch")
    pri = clipped_priority(d, alpha)
    q = pri / pri.sum()
    lhs = float(np.dot(q, huber(d)[1]))
    rhs = float(pal(d, pal_xi(d, alpha), alpha)[1].mean())
    return lhs, rhs


def bias_condition(rho: float, alpha: float, beta: float) -> float:
    """``rho + alpha - alpha * beta``; prioritized training with loss
    ``|delta|**rho / rho`` is unbiased only when this equals 2.

    Evaluated as ``rho + alpha * (1 - beta)`` so that ``beta = 1`` gives
    ``rho`` exactly."""
    return rho + alpha * (1.0 - beta)


def loss_and_grad(kind: LossKind, delta, *, xi: float | None = None, alpha: float = 0.4):
    if kind is LossKind.MSE:
        return mse(delta)
    if kind is LossKind.HUBER:
        return huber(delta)
    if kind is LossKind.PAL:
        if xi is None:
            raise ValueError("PAL needs the batch normaliser xi")
        return pal(delta, xi, alpha)
    raise ValueError(f"unknown loss kind {kind!r}")
