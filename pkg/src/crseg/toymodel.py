"""A small per-pixel patch classifier used as the attack target.

Each pixel is classified from the ``(2k+1) x (2k+1)`` window around it
(zero padded) by a one-hidden-layer ReLU network followed by a softmax over
the label set. Everything is plain numpy in float64.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import RandomSource, as_generator, load_tensor, save_tensor

log = logging.getLogger(__name__)

PARAM_NAMES = ("w1", "b1", "w2", "b2")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ToySegModel:
    height: int = 32
    width: int = 32
    channels: int = 3
    num_classes: int = 4
    k: int = 2
    hidden: int = 32
    params: dict = field(default_factory=dict)
    train_losses: list = field(default_factory=list)

    @property
    def window(self) -> int:
        return 2 * self.k + 1

    @property
    def n_inputs(self) -> int:
        return self.window * self.window * self.channels

    @classmethod
    def init(cls, rng, **config) -> "ToySegModel":
        """He-initialised model; ``config`` overrides the default geometry."""
        model = cls(**config)
        gen = as_generator(rng)
        f, h, c = model.n_inputs, model.hidden, model.num_classes
        model.params = {
            "w1": gen.standard_normal((f, h)) * np.sqrt(2.0 / f),
            "b1": np.zeros(h),
            "w2": gen.standard_normal((h, c)) * np.sqrt(1.0 / h),
            "b2": np.zeros(c),
        }
        return model

    def copy(self) -> "ToySegModel":
        return ToySegModel(self.height, self.width, self.channels, self.num_classes,
                           self.k, self.hidden, {n: p.copy() for n, p in self.params.items()},
                           list(self.train_losses))

    def config(self) -> dict:
        return {"height": self.height, "width": self.width, "channels": self.channels,
                "num_classes": self.num_classes, "k": self.k, "hidden": self.hidden}

    # -- forward / backward -------------------------------------------------

    def _batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.shape[1:] != (self.height, self.width, self.channels):
            raise ValueError(f"image shape {x.shape[1:]} does not match model "
                             f"{(self.height, self.width, self.channels)}")
        return x, single

    def _patches(self, x):
        b, k, s = x.shape[0], self.k, self.window
        xp = np.zeros((b, self.height + 2 * k, self.width + 2 * k, self.channels))
        xp[:, k:k + self.height, k:k + self.width] = x
        st = xp.strides
        view = as_strided(xp, (b, self.height, self.width, s, s, self.channels),
                          (st[0], st[1], st[2], st[1], st[2], st[3]), writeable=False)
        return view.reshape(-1, self.n_inputs)

    def _forward(self, x):
        p = self.params
        patches = self._patches(x)
        hidden = patches @ p["w1"]
        hidden += p["b1"]
        np.maximum(hidden, 0.0, out=hidden)
        z = hidden @ p["w2"]
        z += p["b2"]
        z -= z.max(axis=1, keepdims=True)
        np.exp(z, out=z)
        z /= z.sum(axis=1, keepdims=True)
        return patches, hidden, z

    def forward(self, x) -> np.ndarray:
        """Probability map ``(H, W, K)``, or ``(B, H, W, K)`` for a batch."""
        x, single = self._batch(x)
        probs = self._forward(x)[2].reshape(x.shape[0], self.height, self.width, self.num_classes)
        return probs[0] if single else probs

    def _dlogits(self, probs, labels, weights, n_pix):
        d = probs.copy()
        d[np.arange(len(d)), labels.reshape(-1)] -= 1.0
        if weights is not None:
            d *= np.asarray(weights, dtype=np.float64).reshape(-1, 1)
        d /= n_pix
        return d

    @staticmethod
    def _loss(probs, labels, weights, clamp=True):
        picked = probs[np.arange(len(probs)), labels.reshape(-1)]
        if clamp:
            picked = np.maximum(picked, 1e-12)
        with np.errstate(divide="ignore"):
            ce = -np.log(picked)
        if weights is not None:
            ce = ce * np.asarray(weights, dtype=np.float64).reshape(-1)
        return float(ce.mean())

    def input_gradient(self, x, labels, weights=None):
        """Mean (weighted) pixel cross-entropy and its gradient w.r.t. ``x``.

        Batched inputs give the gradient of the mean over every pixel of the batch.
        """
        x, single = self._batch(x)
        labels = np.asarray(labels).reshape(x.shape[0], self.height, self.width)
        patches, hidden, probs = self._forward(x)
        loss = self._loss(probs, labels, weights)
        d = self._dlogits(probs, labels, weights, probs.shape[0])
        dh = d @ self.params["w2"].T
        dh *= hidden > 0
        dp = (dh @ self.params["w1"].T).reshape(
            x.shape[0], self.height, self.width, self.window, self.window, self.channels)
        k = self.k
        gp = np.zeros((x.shape[0], self.height + 2 * k, self.width + 2 * k, self.channels))
        for dy in range(self.window):
            for dx in range(self.window):
                gp[:, dy:dy + self.height, dx:dx + self.width] += dp[:, :, :, dy, dx]
        grad = gp[:, k:k + self.height, k:k + self.width]
        return loss, (grad[0] if single else grad)

    def param_gradient(self, x, labels, weights=None):
        """Loss and parameter gradients; the loss is left unclamped so divergence shows."""
        x, _ = self._batch(x)
        labels = np.asarray(labels).reshape(x.shape[0], self.height, self.width)
        patches, hidden, probs = self._forward(x)
        loss = self._loss(probs, labels, weights, clamp=False)
        d = self._dlogits(probs, labels, weights, probs.shape[0])
        p = self.params
        dh = d @ p["w2"].T
        dh *= hidden > 0
        grads = {"w2": hidden.T @ d, "b2": d.sum(axis=0),
                 "w1": patches.T @ dh, "b1": dh.sum(axis=0)}
        return loss, grads

    # -- persistence --------------------------------------------------------

    def snap_float32(self) -> "ToySegModel":
        """Round parameters to float32 values so checkpoints round-trip exactly."""
        for name in PARAM_NAMES:
            self.params[name] = self.params[name].astype(np.float32).astype(np.float64)
        return self

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name in PARAM_NAMES:
            save_tensor(d / f"{name}.ftz", self.params[name])
        meta = "".join(f"{key}={val}\n" for key, val in self.config().items())
        (d / "model.txt").write_text(meta)

    @classmethod
    def load(cls, directory) -> "ToySegModel":
        d = Path(directory)
        meta = {}
        for line in (d / "model.txt").read_text().splitlines():
            if line.strip():
                key, val = line.split("=", 1)
                meta[key.strip()] = int(val)
        model = cls(**meta)
        model.params = {name: load_tensor(d / f"{name}.ftz").astype(np.float64) for name in PARAM_NAMES}
        return model


class ModelOracle:
    """White-box oracle over a :class:`ToySegModel`."""

    def __init__(self, model: ToySegModel):
        self.model = model

    def predict(self, image):
        return self.model.forward(image)

    def predict_batch(self, images):
        return self.model.forward(np.asarray(images))

    def loss_gradient(self, image, labels, weights=None):
        return self.model.input_gradient(image, labels, weights)


def _stack(dataset):
    xs = np.stack([np.asarray(x, dtype=np.float64) for x, _ in dataset])
    ys = np.stack([np.asarray(y) for _, y in dataset])
    return xs, ys


class SGD:
    """Mini-batch SGD with classical momentum over a model's parameter dict."""

    def __init__(self, model: ToySegModel, lr: float, momentum: float = 0.9):
        self.model, self.lr, self.momentum = model, lr, momentum
        self.velocity = {n: np.zeros_like(p) for n, p in model.params.items()}

    def step(self, grads):
        for name, g in grads.items():
            v = self.velocity[name]
            v *= self.momentum
            v -= self.lr * g
            self.model.params[name] += v


def check_loss(loss: float, lr: float):
    if not np.isfinite(loss) or loss > 1e3:
        raise TrainingDiverged(f"training loss {loss:.3g} diverged; retry with a learning rate below {lr:g}")


def train(model: ToySegModel, dataset, epochs: int, lr: float, rng,
          batch_size: int = 8, momentum: float = 0.9) -> ToySegModel:
    """Minimise mean pixel cross-entropy over ``dataset`` by mini-batch SGD.

    Returns a trained copy; ``train_losses`` records the mean loss of each
    epoch. Parameters of the result are float32-representable.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    model = model.copy()
    if epochs == 0:
        return model
    xs, ys = _stack(dataset)
    gen = as_generator(rng)
    opt = SGD(model, lr, momentum)
    for epoch in range(epochs):
        order = gen.permutation(len(xs))
        losses = []
        for start in range(0, len(xs), batch_size):
            idx = order[start:start + batch_size]
            loss, grads = model.param_gradient(xs[idx], ys[idx])
            check_loss(loss, lr)
            opt.step(grads)
            losses.append(loss)
        model.train_losses.append(float(np.mean(losses)))
        log.info("epoch %d loss %.4f", epoch + 1, model.train_losses[-1])
    return model.snap_float32()


def default_model(seed: int = 0, **config) -> ToySegModel:
    return ToySegModel.init(RandomSource(seed, 0xD0D0), **config)
