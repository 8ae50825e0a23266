"""Synthetic segmentation scenes: coloured rectangles and disks on a background."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import RandomSource, load_labels, load_tensor, save_labels, save_tensor

PLACEMENT_RETRIES = 50


@dataclass(frozen=True)
class SynthDatasetSpec:
    count: int = 100
    height: int = 32
    width: int = 32
    num_classes: int = 4
    shapes: tuple = ("rect", "disk")
    noise_std: float = 0.08
    contrast: float = 0.1
    color_jitter: float = 0.04
    seed: int = 0

    def __post_init__(self):
        if self.height < 16 or self.width < 16:
            raise ValueError("synthetic images must be at least 16x16")
        if self.num_classes < 2:
            raise ValueError("need a background class and at least one shape class")


def palette(num_classes: int, contrast: float) -> np.ndarray:
    """RGB base colour per class: mid-grey background, shape classes around a hue circle."""
    colors = np.full((num_classes, 3), 0.5)
    n_shapes = num_classes - 1
    for c in range(1, num_classes):
        theta = 2 * np.pi * (c - 1) / n_shapes
        colors[c] += contrast * np.cos(theta - np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3]))
    return colors


def _shape_mask(kind, gen, h, w):
    yy, xx = np.mgrid[:h, :w]
    if kind == "rect":
        sh, sw = gen.integers(6, max(7, h // 2) + 1), gen.integers(6, max(7, w // 2) + 1)
        top, left = gen.integers(0, h - sh + 1), gen.integers(0, w - sw + 1)
        return (yy >= top) & (yy < top + sh) & (xx >= left) & (xx < left + sw)
    if kind == "disk":
        r = gen.integers(3, max(4, min(h, w) // 4) + 1)
        cy, cx = gen.integers(r, h - r), gen.integers(r, w - r)
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    raise ValueError(f"unknown shape {kind!r}")


def render_scene(spec: SynthDatasetSpec, rng: RandomSource):
    """One ``(image, labels)`` pair; image float32 ``(H, W, 3)`` in [0, 1]."""
    gen = rng.generator()
    h, w = spec.height, spec.width
    colors = palette(spec.num_classes, spec.contrast)
    labels = np.zeros((h, w), dtype=np.int64)
    image = np.empty((h, w, 3))
    image[:] = colors[0] + gen.uniform(-spec.color_jitter, spec.color_jitter, 3)
    occupied = np.zeros((h, w), dtype=bool)
    for _ in range(gen.integers(1, 4)):
        cls = int(gen.integers(1, spec.num_classes))
        kind = spec.shapes[int(gen.integers(len(spec.shapes)))]
        for _ in range(PLACEMENT_RETRIES):
            mask = _shape_mask(kind, gen, h, w)
            # one pixel of clearance keeps shapes from touching
            grown = mask.copy()
            grown[1:] |= mask[:-1]
            grown[:-1] |= mask[1:]
            grown[:, 1:] |= mask[:, :-1]
            grown[:, :-1] |= mask[:, 1:]
            if not (grown & occupied).any():
                break
        else:
            continue
        occupied |= mask
        labels[mask] = cls
        image[mask] = colors[cls] + gen.uniform(-spec.color_jitter, spec.color_jitter, 3)
    if spec.noise_std > 0:
        image += gen.standard_normal(image.shape) * spec.noise_std
    return np.clip(image, 0.0, 1.0).astype(np.float32), labels


def gen_synthetic_dataset(spec: SynthDatasetSpec):
    """``spec.count`` scenes; scene ``i`` depends only on ``(spec, i)``."""
    root = RandomSource(spec.seed, 0x5EED)
    return [render_scene(spec, root.split(i)) for i in range(spec.count)]


def save_dataset(directory, dataset) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, (x, y) in enumerate(dataset):
        save_tensor(d / f"image_{i:05d}.ftz", x)
        save_labels(d / f"label_{i:05d}.ftz", y)


def load_dataset(directory):
    d = Path(directory)
    images = sorted(d.glob("image_*.ftz"))
    if not images:
        raise FileNotFoundError(f"no image_*.ftz files in {d}")
    out = []
    for path in images:
        idx = path.stem.split("_", 1)[1]
        out.append((load_tensor(path), load_labels(d / f"label_{idx}.ftz")))
    return out
