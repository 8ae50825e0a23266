"""Fast adversarial training with randomly initialised FGSM (and a CR-PGD variant)."""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from .smoothing import SmoothingConfig, certify
from .tensor import RandomSource
from .toymodel import SGD, ModelOracle, ToySegModel, _stack, check_loss
from .whitebox import default_lr

log = logging.getLogger(__name__)

CR_INNER_STEPS = 5


def _batch_weights(model, xs, smoothing, rng):
    oracle = ModelOracle(model)
    return np.stack([certify(oracle, x, smoothing, rng.split(i))[1] for i, x in enumerate(xs)])


def fast_adt(model: ToySegModel, dataset, eps: float, alpha: Optional[float], epochs: int,
             rng: RandomSource, cr: bool = False, smoothing: SmoothingConfig = SmoothingConfig(),
             lr: float = 0.05, batch_size: int = 8, momentum: float = 0.9) -> ToySegModel:
    """Adversarially fine-tune ``model`` against linf perturbations of size ``eps``.

    Every mini-batch starts from ``delta ~ U(-eps, eps)``, takes one signed
    gradient step of size ``alpha`` (default ``1.25 eps``), clips back to the
    budget and then takes one parameter step on the perturbed batch. With
    ``cr`` the single step becomes a five-step PGD loop on the
    certified-radius-weighted loss, with weights certified once per batch.
    Returns a new model; the input is left untouched.
    """
    if eps < 0:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    alpha = 1.25 * eps if alpha is None else alpha
    model = model.copy()
    if epochs == 0:
        return model
    xs, ys = _stack(dataset)
    gen = rng.split(0).generator()
    opt = SGD(model, lr, momentum)
    batch_no = 0
    for epoch in range(epochs):
        order = gen.permutation(len(xs))
        losses = []
        for start in range(0, len(xs), batch_size):
            idx = order[start:start + batch_size]
            x, y = xs[idx], ys[idx]
            delta = gen.uniform(-eps, eps, x.shape)
            if cr:
                weights = _batch_weights(model, np.clip(x + delta, 0, 1), smoothing,
                                         rng.split(1).split(batch_no))
                step, steps = default_lr("linf", eps, CR_INNER_STEPS), CR_INNER_STEPS
            else:
                weights, step, steps = None, alpha, 1
            for _ in range(steps):
                _, g = model.input_gradient(np.clip(x + delta, 0, 1), y, weights)
                delta = np.clip(delta + step * np.sign(g), -eps, eps)
            loss, grads = model.param_gradient(np.clip(x + delta, 0, 1), y)
            check_loss(loss, lr)
            opt.step(grads)
            losses.append(loss)
            batch_no += 1
        model.train_losses.append(float(np.mean(losses)))
        log.info("adv epoch %d loss %.4f", epoch + 1, model.train_losses[-1])
    return model.snap_float32()
