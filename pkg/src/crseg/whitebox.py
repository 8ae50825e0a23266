"""Gradient-based attacks: FGSM, PGD, DAG and their certified-radius-weighted variants."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .projections import clip_image, project
from .smoothing import SmoothingConfig, certify
from .tensor import RandomSource, check_norm, lp_norm


def default_lr(norm: str, eps: float, steps: int) -> float:
    """Step size ``2.5 eps / T`` for l1/l2 and ``eps / T`` for linf."""
    norm = check_norm(norm)
    return (eps if norm == "linf" else 2.5 * eps) / steps


@dataclass(frozen=True)
class WhiteBoxAttackConfig:
    norm: str = "linf"
    eps: float = 0.03
    steps: int = 20
    lr: Optional[float] = None
    cr: bool = False
    smoothing: SmoothingConfig = SmoothingConfig()

    def __post_init__(self):
        object.__setattr__(self, "norm", check_norm(self.norm))
        if self.eps < 0:
            raise ValueError(f"eps must be nonnegative, got {self.eps}")
        if self.steps < 0:
            raise ValueError(f"steps must be nonnegative, got {self.steps}")
        if self.lr is not None and self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")

    @property
    def step_size(self) -> float:
        if self.lr is not None:
            return self.lr
        return default_lr(self.norm, self.eps, max(self.steps, 1))


@dataclass
class AttackResult:
    """Final perturbation (flat float64) plus the per-iteration loss trace.

    ``trace`` rows are ``(iteration, loss, queries)``; for white-box attacks
    ``queries`` counts the forward passes spent on smoothing.
    """

    delta: np.ndarray
    norm: str
    eps: float
    trace: list = field(default_factory=list)
    queries: int = 0

    def norms(self) -> dict:
        return {p: lp_norm(self.delta, p) for p in ("l1", "l2", "linf")}

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "loss", "queries"])
            w.writerows(self.trace)


def ascent_step(grad, norm: str, lr: float) -> np.ndarray:
    """Normalised ascent direction scaled by ``lr``; a zero gradient yields no step."""
    g = np.asarray(grad, dtype=np.float64).ravel()
    if norm == "linf":
        return lr * np.sign(g)
    top = np.abs(g).max() if g.size else 0.0
    if top == 0:
        return np.zeros_like(g)
    u = g / top
    scale = np.abs(u).sum() if norm == "l1" else np.sqrt(np.dot(u, u))
    return u * (lr / scale)


def _run_pgd(oracle, x, labels, cfg: WhiteBoxAttackConfig, rng: Optional[RandomSource]):
    x = np.asarray(x, dtype=np.float64)
    delta = np.zeros(x.size)
    lr = cfg.step_size
    interval = cfg.smoothing.refresh_interval(1)
    weights, spent, trace = None, 0, []
    for t in range(cfg.steps):
        image = clip_image(x, delta)
        if cfg.cr and t % interval == 0:
            _, weights = certify(oracle, image, cfg.smoothing, rng.split(t))
            spent += cfg.smoothing.m
        loss, grad = oracle.loss_gradient(image, labels, weights)
        delta = project(delta + ascent_step(grad, cfg.norm, lr), cfg.eps, cfg.norm)
        trace.append((t, loss, spent))
    return AttackResult(delta, cfg.norm, cfg.eps, trace, spent)


def pgd(oracle, x, labels, cfg: WhiteBoxAttackConfig) -> AttackResult:
    """Projected gradient ascent on the mean pixel cross-entropy."""
    return _run_pgd(oracle, x, labels, replace(cfg, cr=False), None)


def cr_pgd(oracle, x, labels, cfg: WhiteBoxAttackConfig, rng: RandomSource) -> AttackResult:
    """PGD on the certified-radius-weighted loss.

    Weights are recomputed from ``cfg.smoothing.m`` noisy predictions at
    iterations ``0, INT, 2 INT, ...`` (``INT`` defaults to M) and reused in
    between.
    """
    return _run_pgd(oracle, x, labels, replace(cfg, cr=True), rng)


def fgsm(oracle, x, labels, norm: str, eps: float) -> AttackResult:
    """One PGD step of size ``eps``."""
    return pgd(oracle, x, labels, WhiteBoxAttackConfig(norm, eps, 1, eps if eps > 0 else None))


def cr_fgsm(oracle, x, labels, norm: str, eps: float, smoothing: SmoothingConfig,
            rng: RandomSource) -> AttackResult:
    cfg = WhiteBoxAttackConfig(norm, eps, 1, eps if eps > 0 else None, True, smoothing)
    return cr_pgd(oracle, x, labels, cfg, rng)


def dag(oracle, x, labels, eps: float, steps: int, norm: str = "linf") -> AttackResult:
    """Dense adversary generation, following the printed loop line by line.

    Each step takes the gradient difference between the working image shifted by
    the previous step and the working image itself, rescales it to linf norm
    0.5, accumulates it into the clipped perturbation and advances the working
    image by it. The first step has no previous step, so its difference is
    identically zero; there the plain loss gradient at the working image is
    used instead.
    """
    if check_norm(norm) != "linf":
        raise ValueError("DAG is defined for linf perturbations only")
    x = np.asarray(x, dtype=np.float64)
    delta = np.zeros(x.size)
    working = x.ravel().copy()
    step = np.zeros(x.size)
    trace = []
    for t in range(steps):
        loss, g_base = oracle.loss_gradient(np.clip(working, 0, 1).reshape(x.shape), labels)
        _, g_shift = oracle.loss_gradient(np.clip(working + step, 0, 1).reshape(x.shape), labels)
        diff = (g_shift - g_base).ravel()
        if not np.any(diff):
            diff = g_base.ravel()
        top = np.abs(diff).max()
        if top == 0:
            break
        step = 0.5 * diff / top
        delta = np.clip(delta + step, -eps, eps)
        working = working + step
        trace.append((t, loss, 0))
    return AttackResult(delta, "linf", eps, trace, 0)
