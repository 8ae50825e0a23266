"""Projected bandit gradient attacks (PBGD, CR-PBGD) with exact query accounting."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .gradest import DEFAULT_GAMMA, cr_tpge_estimate, tpge_estimate
from .oracle import BudgetExhausted, attack_loss, with_counter
from .projections import clip_image, project
from .smoothing import SmoothingConfig, certify
from .tensor import RandomSource, check_norm
from .whitebox import AttackResult

TRACE_COLUMNS = ("round", "loss_plus", "loss_minus", "queries_cum", "grad_norm")


@dataclass(frozen=True)
class BlackBoxAttackConfig:
    """Settings of one bandit attack.

    ``best_every`` > 0 spends one extra counted query every that many rounds
    on the loss at the current perturbation and keeps the best one seen; 0
    (the default) returns the last iterate and keeps query counts at the
    analytic ``2T`` (+ smoothing) values.
    """

    norm: str = "l2"
    eps: float = 1.0
    rounds: int = 100
    lr: float = 5e-4
    gamma: float = DEFAULT_GAMMA
    cr: bool = False
    smoothing: SmoothingConfig = SmoothingConfig()
    query_limit: Optional[int] = None
    best_every: int = 0

    def __post_init__(self):
        object.__setattr__(self, "norm", check_norm(self.norm))
        if self.rounds < 1:
            raise ValueError(f"rounds must be at least 1, got {self.rounds}")
        if not self.lr > 0 or not self.gamma > 0:
            raise ValueError("lr and gamma must be positive")
        if self.eps < 0:
            raise ValueError(f"eps must be nonnegative, got {self.eps}")
        if self.best_every < 0:
            raise ValueError("best_every must be nonnegative")

    def expected_queries(self) -> int:
        """Analytic query count of a full run."""
        q = 2 * self.rounds
        if self.cr:
            interval = self.smoothing.refresh_interval(2)
            q += self.smoothing.m * -(-self.rounds // interval)
        if self.best_every:
            q += self.rounds // self.best_every
        return q


@dataclass
class RegretTrace:
    """Per-round bandit records plus the best clean-point loss checkpoints."""

    rows: list = field(default_factory=list)
    best: list = field(default_factory=list)
    exhausted: bool = False

    @property
    def queries(self) -> int:
        return self.rows[-1][3] if self.rows else 0

    @property
    def best_loss(self) -> Optional[float]:
        return self.best[-1][1] if self.best else None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            w.writerows(self.rows)


def _run(oracle, x, labels, cfg: BlackBoxAttackConfig, rng: RandomSource):
    x = np.asarray(x, dtype=np.float64)
    counted = with_counter(oracle, cfg.query_limit)
    n = x.size
    directions = rng.split(0).generator()
    refresh_rng = rng.split(1)
    interval = cfg.smoothing.refresh_interval(2)
    delta = np.zeros(n)
    best_delta, best_loss = delta.copy(), -np.inf
    trace = RegretTrace()
    weights = None
    probes = []

    def loss_fn(d):
        probes.append(attack_loss(counted, x, d, labels, weights))
        return probes[-1]

    estimate = cr_tpge_estimate if cfg.cr else tpge_estimate
    try:
        for t in range(1, cfg.rounds + 1):
            if cfg.cr and (t - 1) % interval == 0:
                _, weights = certify(counted, clip_image(x, delta), cfg.smoothing, refresh_rng.split(t))
            probes.clear()
            g = estimate(loss_fn, delta, cfg.gamma, directions).vector
            delta = project(delta + cfg.lr * g, cfg.eps, cfg.norm)
            trace.rows.append((t, probes[0], probes[1], counted.queries, float(np.sqrt(g @ g))))
            if cfg.best_every and t % cfg.best_every == 0:
                # unweighted, so checkpoints stay comparable across weight refreshes
                value = attack_loss(counted, x, delta, labels)
                if value > best_loss:
                    best_loss, best_delta = value, delta.copy()
                trace.best.append((t, best_loss))
    except BudgetExhausted:
        trace.exhausted = True
        if cfg.best_every and trace.best:
            delta = best_delta
    result = AttackResult(delta, cfg.norm, cfg.eps,
                          [(r[0], 0.5 * (r[1] + r[2]), r[3]) for r in trace.rows], counted.queries)
    return result, trace


def pbgd(oracle, x, labels, cfg: BlackBoxAttackConfig, rng: RandomSource):
    """Projected bandit gradient ascent on the mean pixel cross-entropy.

    Each round spends two queries on a two-point estimate along a random unit
    direction, then takes a projected ascent step of size ``cfg.lr``.
    """
    if cfg.cr:
        raise ValueError("pbgd expects cfg.cr == False; use cr_pbgd")
    return _run(oracle, x, labels, cfg, rng)


def cr_pbgd(oracle, x, labels, cfg: BlackBoxAttackConfig, rng: RandomSource):
    """PBGD on the certified-radius-weighted loss.

    Weights are refreshed from ``M`` smoothing queries at rounds
    ``1, INT + 1, 2 INT + 1, ...`` (``INT`` defaults to 2M), for
    ``2T + M * ceil(T / INT)`` queries in total.
    """
    if not cfg.cr:
        cfg = replace(cfg, cr=True)
    return _run(oracle, x, labels, cfg, rng)
