"""Pixel accuracy and mean intersection-over-union."""

from fractions import Fraction

import numpy as np


def argmax_labels(probs) -> np.ndarray:
    """Per-pixel argmax; ties go to the lowest class index."""
    return np.asarray(probs).argmax(axis=-1)


def _pairs(pred, truth):
    if isinstance(pred, np.ndarray) and pred.ndim == 2:
        pred, truth = [pred], [truth]
    if len(pred) != len(truth):
        raise ValueError(f"{len(pred)} predictions for {len(truth)} ground-truth maps")
    out = []
    for p, t in zip(pred, truth):
        p, t = np.asarray(p), np.asarray(t)
        if p.shape != t.shape:
            raise ValueError(f"prediction shape {p.shape} does not match truth {t.shape}")
        out.append((p, t))
    return out


def pix_acc(pred, truth) -> float:
    """Correct pixels over all pixels of the whole set."""
    correct = total = 0
    for p, t in _pairs(pred, truth):
        correct += int((p == t).sum())
        total += t.size
    return correct / total


def miou(pred, truth, num_classes: int) -> float:
    """Mean IoU over every (image, class) pair whose union is nonempty.

    Ratios are summed exactly and rounded once, so hand-computed values match.
    """
    ious = []
    for p, t in _pairs(pred, truth):
        for c in range(num_classes):
            pc, tc = p == c, t == c
            union = int((pc | tc).sum())
            if union:
                ious.append(Fraction(int((pc & tc).sum()), union))
    if not ious:
        raise ValueError("no class occurs in any prediction or ground-truth map")
    return float(sum(ious) / len(ious))
