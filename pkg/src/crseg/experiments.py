"""Run an attack over a dataset and summarise clean vs attacked metrics.

All randomness of image ``i`` derives from ``RandomSource(seed, ATTACK_STREAM).split(i)``,
so results do not depend on evaluation order or worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import blackbox, whitebox
from .metrics import argmax_labels, miou, pix_acc
from .projections import clip_image
from .smoothing import SmoothingConfig
from .tensor import RandomSource
from .toymodel import ModelOracle

ATTACK_STREAM = 0xA77AC
ATTACKS = ("none", "fgsm", "pgd", "cr_fgsm", "cr_pgd", "dag", "pbgd", "cr_pbgd")
BLACK_BOX = ("pbgd", "cr_pbgd")

# Settings of the toy benchmark, picked on the validation split (seed 1).
# The library defaults for smoothing give weights of about 0.98 on every
# pixel of the toy model, which makes the CR variants coincide with the
# plain ones; a wider noise scale and a steeper weight curve do not.
TOY_SMOOTHING = SmoothingConfig(sigma=0.01, m=8, a=50.0, b=-2.0)
TOY_PBGD_LR = 5e-4
TOY_CR_PBGD_LR = 7.5e-4
TOY_TRAIN = dict(count=200, data_seed=0, epochs=20, lr=0.05, model_seed=0)
TOY_DEFENSE = dict(lr=0.01, epochs=10)


@dataclass(frozen=True)
class AttackSpec:
    """Everything needed to rerun one attack on one image."""

    attack: str = "pgd"
    norm: str = "linf"
    eps: float = 0.03
    steps: int = 20
    lr: float = 0.0  # 0 selects the attack's default step size
    rounds: int = 100
    gamma: float = 0.01
    smoothing: SmoothingConfig = SmoothingConfig()
    query_limit: int = 0  # 0 means unlimited
    best_every: int = 0

    def __post_init__(self):
        if self.attack not in ATTACKS:
            raise ValueError(f"unknown attack {self.attack!r}; expected one of {ATTACKS}")

    def whitebox_config(self) -> whitebox.WhiteBoxAttackConfig:
        return whitebox.WhiteBoxAttackConfig(self.norm, self.eps, self.steps, self.lr or None,
                                             self.attack.startswith("cr_"), self.smoothing)

    def blackbox_config(self) -> blackbox.BlackBoxAttackConfig:
        return blackbox.BlackBoxAttackConfig(self.norm, self.eps, self.rounds, self.lr or 5e-4,
                                             self.gamma, self.attack == "cr_pbgd", self.smoothing,
                                             self.query_limit or None, self.best_every)


def matched_pbgd_rounds(cr_rounds: int, smoothing: SmoothingConfig = SmoothingConfig()) -> int:
    """PBGD rounds spending the same queries as CR-PBGD with ``cr_rounds`` rounds.

    With the default refresh interval 2M this is ``1.25 T``, rounded up.
    """
    interval = smoothing.refresh_interval(2)
    total = 2 * cr_rounds + smoothing.m * -(-cr_rounds // interval)
    return -(-total // 2)


def run_attack(oracle, x, labels, spec: AttackSpec, rng: RandomSource):
    """Returns ``(AttackResult, RegretTrace or None)``."""
    a = spec.attack
    if a == "none":
        return whitebox.AttackResult(np.zeros(np.asarray(x).size), spec.norm, spec.eps), None
    if a in BLACK_BOX:
        fn = blackbox.cr_pbgd if a == "cr_pbgd" else blackbox.pbgd
        return fn(oracle, x, labels, spec.blackbox_config(), rng)
    if a == "dag":
        return whitebox.dag(oracle, x, labels, spec.eps, spec.steps, spec.norm), None
    if a == "fgsm":
        return whitebox.fgsm(oracle, x, labels, spec.norm, spec.eps), None
    if a == "cr_fgsm":
        return whitebox.cr_fgsm(oracle, x, labels, spec.norm, spec.eps, spec.smoothing, rng), None
    cfg = spec.whitebox_config()
    if a == "cr_pgd":
        return whitebox.cr_pgd(oracle, x, labels, cfg, rng), None
    return whitebox.pgd(oracle, x, labels, cfg), None


@dataclass
class ImageOutcome:
    index: int
    summary: dict
    result: whitebox.AttackResult
    trace: object = None
    wall_ms: float = 0.0


def attack_image(model, x, labels, index: int, spec: AttackSpec, seed: int) -> ImageOutcome:
    oracle = ModelOracle(model)
    rng = RandomSource(seed, ATTACK_STREAM).split(index)
    start = time.perf_counter()
    result, trace = run_attack(oracle, x, labels, spec, rng)
    wall = (time.perf_counter() - start) * 1e3
    clean = argmax_labels(model.forward(x))
    adv = argmax_labels(model.forward(clip_image(x, result.delta)))
    nc = model.num_classes
    summary = {
        "image": index,
        "attack": spec.attack,
        "norm": spec.norm,
        "eps": spec.eps,
        "pixacc_clean": pix_acc(clean, labels),
        "pixacc_attacked": pix_acc(adv, labels),
        "miou_clean": miou(clean, labels, nc),
        "miou_attacked": miou(adv, labels, nc),
        "queries": int(result.queries),
        "exhausted": bool(getattr(trace, "exhausted", False)),
        **result.norms(),
    }
    return ImageOutcome(index, summary, result, trace, wall)


def evaluate(model, dataset, spec: AttackSpec, seed: int, workers: int = 1, indices=None) -> list:
    """Attack every image (or those in ``indices``); outcomes come back in index order."""
    indices = range(len(dataset)) if indices is None else indices
    jobs = [(i, dataset[i]) for i in indices]

    def one(job):
        i, (x, y) = job
        return attack_image(model, x, y, i, spec, seed)

    if workers <= 1:
        return [one(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, jobs))


AGGREGATE_KEYS = ("pixacc_clean", "pixacc_attacked", "miou_clean", "miou_attacked", "queries",
                  "l1", "l2", "linf")


def aggregate(summaries, spec: AttackSpec = None) -> dict:
    """Means and standard deviations over images."""
    out = {"images": len(summaries)}
    if spec is not None:
        out.update(attack=spec.attack, norm=spec.norm, eps=spec.eps)
    for key in AGGREGATE_KEYS:
        vals = np.array([s[key] for s in summaries], dtype=np.float64)
        out[f"{key}_mean"] = float(vals.mean())
        out[f"{key}_std"] = float(vals.std())
    out["exhausted"] = int(sum(s["exhausted"] for s in summaries))
    return out


def mean_attacked(outcomes) -> float:
    return float(np.mean([o.summary["pixacc_attacked"] for o in outcomes]))


def mean_clean(outcomes) -> float:
    return float(np.mean([o.summary["pixacc_clean"] for o in outcomes]))
