"""Bandit convex optimisation on small analytic objectives with known optima.

Checks that two-point bandit descent has sublinear regret and that the
gradient estimators behave as advertised (unbiased, bounded or not).
The lab minimises, so regret ``sum_t f(z_t) - f*`` is nonnegative.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .gradest import opge_estimate, tpge_estimate
from .projections import project_l2
from .tensor import as_generator

KINDS = ("quadratic", "piecewise-linear", "linear")
REPORT_COLUMNS = ("T", "N", "regret", "slope_fit", "estimator", "max_norm", "mean_err")


@dataclass
class ConvexTestbed:
    """A convex objective over the origin-centred l2 ball of radius ``radius``.

    * ``quadratic``: ``|z - z*|^2 / 2 + offset``
    * ``piecewise-linear``: ``max_j |z_j - z*_j| + offset`` written as the
      maximum of ``2N`` affine pieces with slopes ``+-e_j``
    * ``linear``: ``c . z + offset`` with ``c = z*``; minimised on the boundary

    ``offset`` lifts the objective without moving its minimiser.
    """

    kind: str = "quadratic"
    dim: int = 2
    radius: float = 1.0
    target: Optional[np.ndarray] = None
    offset: float = 0.0
    start: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown testbed kind {self.kind!r}; expected one of {KINDS}")
        if self.dim < 1 or not self.radius > 0:
            raise ValueError("need dim >= 1 and a positive radius")
        if self.target is None:
            t = np.zeros(self.dim)
            t[0] = 0.3 * self.radius
            if self.dim > 1:
                t[1] = -0.2 * self.radius
            self.target = t
        self.target = np.asarray(self.target, dtype=np.float64)
        if self.target.shape != (self.dim,):
            raise ValueError(f"target must have shape ({self.dim},)")
        if self.kind == "linear":
            if not np.any(self.target):
                raise ValueError("linear testbed needs a nonzero slope")
        elif np.linalg.norm(self.target) >= self.radius:
            raise ValueError("optimum must lie inside the domain ball")
        if self.start is None:
            away = self.target if np.any(self.target) else np.eye(self.dim)[0]
            self.start = -self.radius * away / np.linalg.norm(away)
        self.start = np.asarray(self.start, dtype=np.float64)

    @property
    def argmin(self) -> np.ndarray:
        if self.kind == "linear":
            return -self.radius * self.target / np.linalg.norm(self.target)
        return self.target.copy()

    @property
    def optimum(self) -> float:
        return float(self.value(self.argmin))

    def lipschitz(self, radius: Optional[float] = None) -> float:
        """Lipschitz constant on the ball of ``radius`` (the domain by default)."""
        r = self.radius if radius is None else radius
        if self.kind == "quadratic":
            return r + float(np.linalg.norm(self.target))
        if self.kind == "piecewise-linear":
            return 1.0
        return float(np.linalg.norm(self.target))

    def value(self, z) -> np.ndarray:
        """Objective at ``z``; a leading batch axis is allowed."""
        z = np.asarray(z, dtype=np.float64)
        if self.kind == "quadratic":
            e = z - self.target
            return 0.5 * (e * e).sum(axis=-1) + self.offset
        if self.kind == "piecewise-linear":
            return np.abs(z - self.target).max(axis=-1) + self.offset
        return z @ self.target + self.offset

    def gradient(self, z) -> np.ndarray:
        """Gradient (a subgradient on ridges of the piecewise-linear kind)."""
        z = np.asarray(z, dtype=np.float64)
        if self.kind == "quadratic":
            return z - self.target
        if self.kind == "linear":
            return self.target.copy()
        e = z - self.target
        j = int(np.abs(e).argmax())
        g = np.zeros(self.dim)
        g[j] = np.sign(e[j])
        return g


def theory_schedule(dim: int, lipschitz: float, rounds: int):
    """``(alpha, gamma)`` of the sublinear-regret bound for ``rounds`` rounds."""
    alpha = math.sqrt(dim) / (2 * lipschitz * math.sqrt(rounds))
    gamma = dim ** 1.5 / (6 * math.sqrt(rounds))
    return alpha, gamma


@dataclass
class LabTrace:
    values: np.ndarray
    regret: np.ndarray
    max_norm: float
    alpha: float
    gamma: float
    iterates_max_norm: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return float(self.regret[-1])


def run_regret(testbed: ConvexTestbed, rounds: int, rng, alpha: Optional[float] = None,
               gamma: Optional[float] = None) -> LabTrace:
    """Projected two-point bandit descent for ``rounds`` rounds.

    ``alpha`` and ``gamma`` default to the theoretical schedule. Round ``t``
    plays ``z_t`` (``z_1`` is the testbed start), pays ``f(z_t) - f*`` and
    then moves to ``Proj(z_t - alpha g_t)``.
    """
    if rounds < 10:
        raise ValueError(f"need at least 10 rounds, got {rounds}")
    a_th, g_th = theory_schedule(testbed.dim, testbed.lipschitz(), rounds)
    alpha = a_th if alpha is None else alpha
    gamma = g_th if gamma is None else gamma
    gen = as_generator(rng)
    f = testbed.value
    best = testbed.optimum
    z = project_l2(testbed.start, testbed.radius)
    values = np.empty(rounds)
    max_norm = top_iter = 0.0
    for t in range(rounds):
        values[t] = f(z)
        g = tpge_estimate(f, z, gamma, gen).vector
        max_norm = max(max_norm, float(np.sqrt(g @ g)))
        z = project_l2(z - alpha * g, testbed.radius)
        top_iter = max(top_iter, float(np.sqrt(z @ z)))
    regret = np.cumsum(values - best)
    return LabTrace(values, regret, max_norm, alpha, gamma, top_iter)


def fit_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def regret_sweep(testbed: ConvexTestbed, grid: Sequence[int], rng):
    """Run every horizon in ``grid``; returns ``(traces, slope)``.

    Horizon ``grid[i]`` uses the stream ``rng.split(i)`` when ``rng`` is a
    :class:`RandomSource`, so cells are independent and reproducible.
    """
    traces = []
    for i, rounds in enumerate(grid):
        sub = rng.split(i) if hasattr(rng, "split") else rng
        traces.append(run_regret(testbed, rounds, sub))
    slope = fit_slope(grid, [tr.total for tr in traces])
    return traces, slope


@dataclass
class EstimatorStats:
    estimator: str
    gamma: float
    samples: int
    max_norm: float
    bound: float
    mean_err: float
    stderr: float

    @property
    def within_3se(self) -> bool:
        return self.mean_err <= 3 * self.stderr


def estimator_diagnostics(testbed: ConvexTestbed, gammas: Sequence[float], samples: int, rng,
                          point=None) -> list:
    """Sample TPGE and OPGE at an interior point for every ``gamma``.

    ``bound`` is ``N * C`` with ``C`` the Lipschitz constant on the ball
    reached by the probes; ``mean_err`` is the largest componentwise gap
    between the sample mean and the analytic gradient and ``stderr`` the
    largest componentwise standard error.
    """
    if samples < 1000:
        raise ValueError(f"need at least 1000 samples, got {samples}")
    gen = as_generator(rng)
    z = 0.5 * testbed.start if point is None else np.asarray(point, dtype=np.float64)
    truth = testbed.gradient(z)
    out = []
    for gamma in gammas:
        bound = testbed.dim * testbed.lipschitz(float(np.linalg.norm(z)) + gamma)
        for name, est in (("tpge", tpge_estimate), ("opge", opge_estimate)):
            draws = np.array([est(testbed.value, z, gamma, gen).vector for _ in range(samples)])
            norms = np.sqrt((draws * draws).sum(axis=1))
            err = np.abs(draws.mean(axis=0) - truth).max()
            se = (draws.std(axis=0, ddof=1) / math.sqrt(samples)).max()
            out.append(EstimatorStats(name, gamma, samples, float(norms.max()), bound,
                                      float(err), float(se)))
    return out


def write_report(path, testbed: ConvexTestbed, grid, traces, slope, diagnostics=()) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for rounds, tr in zip(grid, traces):
            w.writerow([rounds, testbed.dim, repr(tr.total), repr(slope), "tpge", repr(tr.max_norm), ""])
        for d in diagnostics:
            w.writerow(["", testbed.dim, "", "", f"{d.estimator}(gamma={d.gamma:g})",
                        repr(d.max_norm), repr(d.mean_err)])
