"""Dense float64 tensors: comparison helpers and seeded generation.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Random tensors
come from numpy's PCG64 bit generator, whose output stream is fixed across
platforms for a given seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DTYPE = np.float64


@dataclass(frozen=True)
class Tolerance:
    atol: float = 1e-12
    rtol: float = 1e-9

    def __post_init__(self):
        if not (self.atol >= 0 and self.rtol >= 0):
            raise ValueError(f"tolerances must be non-negative, got atol={self.atol} rtol={self.rtol}")

    def threshold(self, scale: float) -> float:
        """Allowed absolute difference for values of magnitude ``scale``."""
        return self.atol + self.rtol * scale


DEFAULT_TOL = Tolerance()


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=DTYPE)


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def approx_eq(a, b, tol: Tolerance = DEFAULT_TOL) -> bool:
    """Elementwise ``|a-b| <= atol + rtol * max(|a|, |b|)``."""
    a, b = np.asarray(a, dtype=DTYPE), np.asarray(b, dtype=DTYPE)
    _check_shapes(a, b)
    bound = tol.atol + tol.rtol * np.maximum(np.abs(a), np.abs(b))
    return bool(np.all(np.abs(a - b) <= bound))


def max_abs_diff(a, b) -> float:
    a, b = np.asarray(a, dtype=DTYPE), np.asarray(b, dtype=DTYPE)
    _check_shapes(a, b)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)))


def scale_of(*arrays) -> float:
    """Largest magnitude over all entries of the given arrays."""
    return max((float(np.max(np.abs(x))) for x in arrays if np.size(x)), default=0.0)


def scaled_close(a, b, tol: Tolerance = DEFAULT_TOL) -> tuple[bool, float, float]:
    """Vector-level comparison used by the verification campaigns.

    The relative slack is taken against the largest magnitude in either
    vector rather than per element, so a single output entry that happens to
    sit near zero does not demand absolute precision.

    Returns ``(passed, max_abs_diff, threshold)``.
    """
    diff = max_abs_diff(a, b)
    thr = tol.threshold(scale_of(a, b))
    return diff <= thr, diff, thr


def random_tensor(shape, seed: int) -> np.ndarray:
    """I.i.d. uniform values in [-1, 1) from PCG64 seeded with ``seed``."""
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if any(s < 1 for s in shape):
        raise ValueError(f"all extents must be >= 1, got {shape}")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(-1.0, 1.0, size=shape)
