"""Zeroth-order gradient estimators driven by a scalar loss function.

Every estimator takes ``loss_fn(delta) -> float`` so it can run against a
black-box model loss or an analytic test objective alike. Directions are
drawn uniformly from the unit l2 sphere whatever the budget norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .projections import sample_unit_ball_l2, sample_unit_sphere_l2
from .tensor import as_generator

DEFAULT_GAMMA = 0.01


@dataclass
class GradientEstimate:
    vector: np.ndarray
    kind: str
    queries: int
    gamma: float


def _check_gamma(gamma):
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")


def zoo_estimate(loss_fn, delta, gamma: float) -> GradientEstimate:
    """Coordinate-wise central differences; 2N loss evaluations."""
    _check_gamma(gamma)
    delta = np.asarray(delta, dtype=np.float64)
    g = np.empty(delta.size)
    e = np.zeros(delta.size)
    for i in range(delta.size):
        e[i] = gamma
        g[i] = (loss_fn(delta + e.reshape(delta.shape)) - loss_fn(delta - e.reshape(delta.shape))) / (2 * gamma)
        e[i] = 0.0
    return GradientEstimate(g.reshape(delta.shape), "zoo", 2 * delta.size, gamma)


def opge_estimate(loss_fn, delta, gamma: float, rng, u=None) -> GradientEstimate:
    """One-point estimate ``(N / gamma) L(delta + gamma u) u``."""
    _check_gamma(gamma)
    delta = np.asarray(delta, dtype=np.float64)
    n = delta.size
    if u is None:
        u = sample_unit_sphere_l2(rng, n)
    u = np.asarray(u, dtype=np.float64).reshape(delta.shape)
    value = loss_fn(delta + gamma * u)
    return GradientEstimate((n / gamma) * value * u, "opge", 1, gamma)


def tpge_estimate(loss_fn, delta, gamma: float, rng, u=None, kind: str = "tpge") -> GradientEstimate:
    """Two-point estimate ``(N / 2 gamma) (L(delta + gamma u) - L(delta - gamma u)) u``."""
    _check_gamma(gamma)
    delta = np.asarray(delta, dtype=np.float64)
    n = delta.size
    if u is None:
        u = sample_unit_sphere_l2(rng, n)
    u = np.asarray(u, dtype=np.float64).reshape(delta.shape)
    diff = loss_fn(delta + gamma * u) - loss_fn(delta - gamma * u)
    return GradientEstimate((n / (2 * gamma)) * diff * u, kind, 2, gamma)


def cr_tpge_estimate(cr_loss_fn, delta, gamma: float, rng, u=None) -> GradientEstimate:
    """Two-point estimate of a certified-radius-weighted loss.

    Identical arithmetic to :func:`tpge_estimate`; keeping the weights current
    is the caller's job.
    """
    return tpge_estimate(cr_loss_fn, delta, gamma, rng, u, kind="cr-tpge")


def smoothed_loss_mc(loss_fn, delta, gamma: float, samples: int, rng) -> float:
    """Monte-Carlo mean of ``L(delta + gamma v)`` with ``v`` uniform in the unit l2 ball."""
    if samples < 1:
        raise ValueError(f"samples must be positive, got {samples}")
    if gamma < 0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")
    delta = np.asarray(delta, dtype=np.float64)
    if gamma == 0:
        return float(loss_fn(delta))
    gen = as_generator(rng)
    total = 0.0
    for _ in range(samples):
        total += loss_fn(delta + gamma * sample_unit_ball_l2(gen, delta.size).reshape(delta.shape))
    return total / samples
