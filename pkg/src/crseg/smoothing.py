"""Randomized smoothing for per-pixel classifiers.

A smoothed model averages the base model's probability maps over Gaussian
noise. The top-class probability of each pixel then gives an l2 certified
radius ``sigma * ppf(p)``, which is mapped to a loss weight that favours
pixels with small radii.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensor import RandomSource

PROB_CLAMP = 1e-6
LOG_CLAMP = 1e-12

# Acklam's rational approximation; refined below with one Halley step.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


@dataclass(frozen=True)
class SmoothingConfig:
    """Gaussian smoothing and weight-shape parameters.

    ``interval`` is the number of attack iterations between weight refreshes;
    ``None`` lets each attack pick its own default (M for white-box, 2M for
    black-box).
    """

    sigma: float = 0.001
    m: int = 8
    a: float = 2.0
    b: float = -4.0
    interval: Optional[int] = None

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")
        if self.m < 1:
            raise ValueError(f"M must be at least 1, got {self.m}")
        if self.interval is not None and self.interval < 1:
            raise ValueError(f"interval must be at least 1, got {self.interval}")

    def refresh_interval(self, default_factor: int = 1) -> int:
        return self.interval if self.interval is not None else default_factor * self.m


def inv_norm_cdf(p: float) -> float:
    """Quantile of the standard normal distribution, accurate to ~1e-15."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"inv_norm_cdf needs 0 < p < 1, got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    # Halley refinement against erfc
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


_inv_norm_cdf_array = np.vectorize(inv_norm_cdf, otypes=[np.float64])


def norm_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


NOISE_CHUNK = 256


def smoothing_noise(rng: RandomSource, shape, sigma: float, start: int, stop: int) -> np.ndarray:
    """Noise samples ``start..stop-1`` of a smoothing stream, shape ``(stop-start, *shape)``.

    Samples are drawn in fixed chunks of ``NOISE_CHUNK`` with chunk ``c`` taken
    from ``rng.split(c)``, so sample ``j`` is a pure function of ``(rng, j)``.
    """
    out = []
    for c in range(start // NOISE_CHUNK, (stop - 1) // NOISE_CHUNK + 1):
        lo = max(start - c * NOISE_CHUNK, 0)
        hi = min(stop - c * NOISE_CHUNK, NOISE_CHUNK)
        # draws fill sequentially, so a short prefix equals the full chunk's prefix
        block = rng.split(c).generator().standard_normal((hi,) + tuple(shape))
        out.append(block[lo:hi])
    return np.concatenate(out) * sigma


def smoothed_probs(oracle, x, cfg: SmoothingConfig, rng: RandomSource) -> np.ndarray:
    """Monte-Carlo smoothed probability map (exactly ``cfg.m`` oracle queries).

    Noisy copies are clamped to the feasible image box before being queried.
    Oracles exposing ``predict_batch`` are fed whole noise chunks.
    """
    x = np.asarray(x, dtype=np.float64)
    batch = getattr(oracle, "predict_batch", None)
    total = 0.0
    for start in range(0, cfg.m, NOISE_CHUNK):
        stop = min(start + NOISE_CHUNK, cfg.m)
        noisy = np.clip(x + smoothing_noise(rng, x.shape, cfg.sigma, start, stop), 0.0, 1.0)
        if batch is not None:
            total = total + np.asarray(batch(noisy), dtype=np.float64).sum(axis=0)
        else:
            for img in noisy:
                total = total + np.asarray(oracle.predict(img), dtype=np.float64)
    return total / cfg.m


def pixel_certified_radius(probs, sigma: float) -> np.ndarray:
    """Per-pixel l2 radius ``sigma * ppf(max_c probs)``; may be negative."""
    probs = np.asarray(probs, dtype=np.float64)
    top = np.clip(probs.max(axis=-1), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return sigma * _inv_norm_cdf_array(top)


def classification_certified_radius(p_a: float, p_b: float, sigma: float) -> float:
    """Radius of a smoothed classifier with top/runner-up probabilities ``p_a``, ``p_b``."""
    if not 0.0 < p_b <= p_a < 1.0:
        raise ValueError(f"need 0 < p_b <= p_a < 1, got p_a={p_a}, p_b={p_b}")
    return 0.5 * sigma * (inv_norm_cdf(p_a) - inv_norm_cdf(p_b))


def pixel_weights(radii, a: float, b: float) -> np.ndarray:
    """Logistic-complement weights ``1 / (1 + exp(a * r + b))``."""
    z = a * np.asarray(radii, dtype=np.float64) + b
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(z))


def pixel_cross_entropy(probs, labels) -> np.ndarray:
    """Per-pixel cross-entropy with log arguments clamped at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.shape[:-1] != labels.shape:
        raise ValueError(f"probability map {probs.shape} does not match labels {labels.shape}")
    picked = np.take_along_axis(probs, labels[..., None].astype(np.intp), axis=-1)[..., 0]
    return -np.log(np.maximum(picked, LOG_CLAMP))


def cr_weighted_loss(probs, labels, weights=None) -> float:
    """Mean over pixels of ``weight * cross-entropy``; unweighted when ``weights`` is None."""
    ce = pixel_cross_entropy(probs, labels)
    if weights is None:
        return float(ce.mean())
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != ce.shape:
        raise ValueError(f"weights {weights.shape} do not match label map {ce.shape}")
    return float((weights * ce).mean())


def certify(oracle, x, cfg: SmoothingConfig, rng: RandomSource):
    """Radius and weight maps of ``x`` in one call (``cfg.m`` queries)."""
    probs = smoothed_probs(oracle, x, cfg, rng)
    radii = pixel_certified_radius(probs, cfg.sigma)
    return radii, pixel_weights(radii, cfg.a, cfg.b)
