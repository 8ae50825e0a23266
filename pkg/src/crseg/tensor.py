"""Dense tensor helpers: norms, the FTZ1 file container and a splittable RNG.

Images are ``(H, W, C)`` float arrays in ``[0, 1]``, label maps ``(H, W)``
integer arrays and probability maps ``(H, W, K)``. Storage is float32,
accumulation float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

NORMS = ("l1", "l2", "linf")

MAGIC = b"FTZ1"
# Refuse headers that would describe more than 2**31 elements.
MAX_ELEMENTS = 2**31
MAX_NDIM = 16


class TensorFormatError(ValueError):
    """Base class for malformed FTZ1 files."""


class BadMagicError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


class DimensionOverflowError(TensorFormatError):
    pass


def check_norm(p: str) -> str:
    p = p.lower()
    if p == "inf":
        p = "linf"
    if p not in NORMS:
        raise ValueError(f"unknown norm {p!r}; expected one of {NORMS}")
    return p


def lp_norm(v, p: str) -> float:
    """Return the l1, l2 or linf norm of ``v`` (flattened), accumulated in float64."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("lp_norm of an empty vector")
    p = check_norm(p)
    if p == "l1":
        return float(np.abs(v).sum())
    if p == "l2":
        top = np.abs(v).max()
        if top == 0 or not np.isfinite(top):
            return float(top)
        # rescale first so tiny or huge entries do not under/overflow when squared
        u = v / top
        return float(top * np.sqrt(np.dot(u, u)))
    return float(np.abs(v).max())


def save_tensor(path, tensor) -> None:
    """Write ``tensor`` as FTZ1: magic, u32 ndim, u32 dims, float32 LE payload."""
    arr = np.asarray(tensor)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim > MAX_NDIM:
        raise DimensionOverflowError(f"ndim {arr.ndim} exceeds {MAX_NDIM}")
    header = MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def load_tensor(path) -> np.ndarray:
    """Read an FTZ1 file back into a float32 array of the stored shape."""
    raw = Path(path).read_bytes()
    return decode_tensor(raw)


def decode_tensor(raw: bytes) -> np.ndarray:
    if raw[:4] != MAGIC:
        raise BadMagicError(f"bad magic {raw[:4]!r}")
    if len(raw) < 8:
        raise TruncatedPayloadError("header truncated")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    if ndim == 0 or ndim > MAX_NDIM:
        raise DimensionOverflowError(f"ndim {ndim} out of range")
    head = 8 + 4 * ndim
    if len(raw) < head:
        raise TruncatedPayloadError("dimension table truncated")
    dims = struct.unpack_from(f"<{ndim}I", raw, 8)
    count = 1
    for d in dims:
        count *= d
        if count > MAX_ELEMENTS:
            raise DimensionOverflowError(f"dims {dims} exceed {MAX_ELEMENTS} elements")
    need = head + 4 * count
    if len(raw) < need:
        raise TruncatedPayloadError(f"payload has {len(raw) - head} bytes, header declares {4 * count}")
    if len(raw) > need:
        raise TensorFormatError(f"{len(raw) - need} trailing bytes after payload")
    return np.frombuffer(raw, dtype="<f4", count=count, offset=head).reshape(dims).astype(np.float32)


def save_labels(path, labels) -> None:
    """Label maps use the same container with a trailing unit dimension."""
    labels = np.asarray(labels)
    save_tensor(path, labels.reshape(labels.shape + (1,)).astype(np.float32))


def load_labels(path) -> np.ndarray:
    arr = load_tensor(path)
    if arr.shape[-1] != 1:
        raise TensorFormatError(f"label container must end in a unit dim, got {arr.shape}")
    labels = arr[..., 0]
    if np.any(labels != np.round(labels)) or np.any(labels < 0):
        raise TensorFormatError("label container holds non-integer values")
    return labels.astype(np.int64)


def export_pgm(path, labels, num_classes: int) -> None:
    """Plain-text PGM (P2) rendering of a label map, for eyeballing only."""
    labels = np.asarray(labels, dtype=np.int64)
    h, w = labels.shape
    scale = 255 // max(num_classes - 1, 1)
    lines = ["P2", f"{w} {h}", "255"]
    lines += [" ".join(str(int(v) * scale) for v in row) for row in labels]
    Path(path).write_text("\n".join(lines) + "\n")


def _mix64(a: int, b: int) -> int:
    # splitmix64 finaliser over (a, b)
    z = (a * 0x9E3779B97F4A7C15 + b + 0x632BE59BD9B4E019) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


@dataclass(frozen=True)
class RandomSource:
    """Counter-based random source keyed by ``(seed, stream)``.

    The stream of values is a pure function of the pair; ``split(j)`` derives a
    child stream so that sample ``j`` of a parallel loop never depends on the
    order in which other samples were drawn.
    """

    seed: int
    stream: int = 0

    def split(self, j: int) -> "RandomSource":
        return RandomSource(self.seed, _mix64(self.stream, int(j) & 0xFFFFFFFFFFFFFFFF))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed & 0xFFFFFFFFFFFFFFFF, spawn_key=(self.stream,))
        return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RandomSource):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RandomSource or numpy Generator, got {type(rng).__name__}")


def gaussian_sample(rng, n: int, sigma: float) -> np.ndarray:
    """``n`` i.i.d. N(0, sigma^2) draws in float64."""
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if sigma == 0:
        return np.zeros(n)
    return as_generator(rng).standard_normal(n) * sigma
