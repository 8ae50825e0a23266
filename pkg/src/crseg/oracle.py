"""Model access with exact query accounting.

A black-box oracle exposes ``predict(image) -> prob map``. A white-box oracle
additionally exposes ``loss_gradient(image, labels, weights=None)`` returning
the mean (weighted) cross-entropy and its gradient with respect to the image.
Only ``predict`` calls are counted as queries.
"""

from __future__ import annotations

import threading
from typing import Optional, Protocol

import numpy as np

from .projections import clip_image
from .smoothing import cr_weighted_loss


class BudgetExhausted(RuntimeError):
    """Raised when a counted oracle is asked for a query beyond its limit."""


class BlackBoxOracle(Protocol):
    def predict(self, image: np.ndarray) -> np.ndarray: ...


class WhiteBoxOracle(BlackBoxOracle, Protocol):
    def loss_gradient(self, image: np.ndarray, labels: np.ndarray,
                      weights: Optional[np.ndarray] = None) -> tuple[float, np.ndarray]: ...


class QueryCounter:
    def __init__(self, limit: Optional[int] = None):
        if limit is not None and limit < 0:
            raise ValueError(f"query limit must be nonnegative, got {limit}")
        self.limit = limit
        self._count = 0
        self._lock = threading.Lock()

    @property
    def count(self) -> int:
        return self._count

    def charge(self, n: int = 1) -> None:
        with self._lock:
            if self.limit is not None and self._count + n > self.limit:
                raise BudgetExhausted(f"query budget of {self.limit} exhausted")
            self._count += n

    def __repr__(self):
        return f"QueryCounter(count={self._count}, limit={self.limit})"


class CountedOracle:
    """Transparent wrapper that charges one query per predicted image."""

    def __init__(self, oracle, limit: Optional[int] = None):
        self.inner = oracle
        self.counter = QueryCounter(limit)

    @property
    def queries(self) -> int:
        return self.counter.count

    def predict(self, image):
        self.counter.charge(1)
        return self.inner.predict(image)

    def predict_batch(self, images):
        images = np.asarray(images)
        self.counter.charge(len(images))
        inner = getattr(self.inner, "predict_batch", None)
        if inner is not None:
            return inner(images)
        return np.stack([self.inner.predict(img) for img in images])

    def loss_gradient(self, image, labels, weights=None):
        # white-box access; not a query
        return self.inner.loss_gradient(image, labels, weights)


def with_counter(oracle, limit: Optional[int] = None) -> CountedOracle:
    return CountedOracle(oracle, limit)


def attack_loss(oracle, x, delta, labels, weights=None) -> float:
    """Mean (weighted) cross-entropy of ``oracle`` at ``clip(x + delta)``; one query."""
    return cr_weighted_loss(oracle.predict(clip_image(x, delta)), labels, weights)
