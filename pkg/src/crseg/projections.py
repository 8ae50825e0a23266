"""Projections onto lp balls, unit-sphere sampling and image clipping."""

import numpy as np

from .tensor import as_generator, check_norm


def _check_eps(eps):
    if eps < 0:
        raise ValueError(f"budget must be nonnegative, got {eps}")


def _shrink_into(out, eps, norm_fn):
    # rescaling can overshoot the radius by an ulp; nudge until feasible so that
    # a second projection is an exact no-op
    total = norm_fn(out)
    while total > eps:
        out = out * np.nextafter(eps / total, 0.0)
        total = norm_fn(out)
    return out


def _l1(v):
    return np.abs(v).sum()


def _l2(v):
    return np.sqrt(np.dot(v.ravel(), v.ravel()))


def project_linf(v, eps: float) -> np.ndarray:
    _check_eps(eps)
    return np.clip(np.asarray(v, dtype=np.float64), -eps, eps)


def project_l2(v, eps: float) -> np.ndarray:
    _check_eps(eps)
    v = np.asarray(v, dtype=np.float64)
    norm = _l2(v)
    if norm <= eps:
        return v.copy()
    return _shrink_into(v * (eps / norm), eps, _l2)


def project_l1(v, eps: float) -> np.ndarray:
    """Euclidean projection onto ``{u : ||u||_1 <= eps}``.

    Sort the magnitudes, find the soft threshold ``theta`` that puts the
    shrunk vector exactly on the ball surface, and shrink. O(N log N).
    """
    _check_eps(eps)
    v = np.asarray(v, dtype=np.float64)
    flat = v.ravel()
    mag = np.abs(flat)
    if mag.sum() <= eps:
        return v.copy()
    if eps == 0:
        return np.zeros_like(v)
    mu = np.sort(mag)[::-1]
    css = np.cumsum(mu)
    ks = np.arange(1, mu.size + 1)
    # index 0 always qualifies in exact arithmetic; rounding can hide it for tiny eps
    hits = np.nonzero(mu * ks > css - eps)[0]
    rho = hits[-1] if hits.size else 0
    theta = (css[rho] - eps) / (rho + 1.0)
    out = np.sign(flat) * np.maximum(mag - theta, 0.0)
    return _shrink_into(out, eps, _l1).reshape(v.shape)


_PROJECTORS = {"l1": project_l1, "l2": project_l2, "linf": project_linf}


def project(v, eps: float, p: str) -> np.ndarray:
    return _PROJECTORS[check_norm(p)](v, eps)


def sample_unit_sphere_l2(rng, n: int) -> np.ndarray:
    """Uniform draw from the unit l2 sphere in ``n`` dimensions."""
    if n < 1:
        raise ValueError(f"dimension must be positive, got {n}")
    gen = as_generator(rng)
    while True:
        g = gen.standard_normal(n)
        norm = np.sqrt(np.dot(g, g))
        if norm > 0:
            return g / norm


def sample_unit_ball_l2(rng, n: int) -> np.ndarray:
    """Uniform draw from the unit l2 ball: a sphere direction scaled by U**(1/n)."""
    gen = as_generator(rng)
    u = sample_unit_sphere_l2(gen, n)
    return u * gen.random() ** (1.0 / n)


def clip_image(x, delta) -> np.ndarray:
    """Return ``clamp(x + delta, 0, 1)`` in the shape of ``x``."""
    x = np.asarray(x)
    delta = np.asarray(delta, dtype=np.float64)
    if delta.size != x.size:
        raise ValueError(f"perturbation has {delta.size} entries, image has {x.size}")
    return np.clip(x + delta.reshape(x.shape), 0.0, 1.0)
