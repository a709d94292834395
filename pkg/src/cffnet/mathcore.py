"""Dense float64 matrix helpers, stable nonlinearities and the seeded RNG.

A "matrix" here is simply a 2-D ``numpy.ndarray`` of dtype float64. The helpers
below add the shape and finiteness checks numpy does not do on its own: there
is no broadcasting between mismatched shapes, every mismatch raises.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, NumericError

__all__ = [
    "Rng",
    "as_matrix",
    "matmul_nt",
    "row_l2_normalize",
    "sigmoid",
    "softplus",
    "rng_uniform_int",
]


def as_matrix(a, name="matrix"):
    """Return ``a`` as a C-contiguous float64 2-D array, rejecting anything else."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {what}")
    return arr


def matmul_nt(a, b):
    """``a @ b.T`` for ``a`` of shape (m, k) and ``b`` of shape (n, k)."""
    a = as_matrix(a, "A")
    b = as_matrix(b, "B")
    if a.shape[1] != b.shape[1]:
        raise ContractError(
            f"matmul_nt: inner dimensions differ, A is {a.shape[0]}x{a.shape[1]}, "
            f"B is {b.shape[0]}x{b.shape[1]}"
        )
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b.T
    return _check_finite(out, "matmul_nt")


def row_l2_normalize(a, eps=1e-8):
    """Divide each row by (its L2 norm + eps). Zero rows stay zero."""
    if not eps > 0:
        raise ContractError(f"eps must be > 0, got {eps}")
    a = as_matrix(a)
    norms = np.sqrt(np.einsum("ij,ij->i", a, a))
    return a / (norms + eps)[:, None]


def sigmoid(x):
    """Logistic function, evaluated without overflow for any finite input.

    Accepts a scalar (returns float) or an array (returns array).
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out) if out.ndim == 0 else out


def softplus(x):
    """``log(1 + exp(x))`` computed as ``max(x, 0) + log1p(exp(-|x|))``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return float(out) if out.ndim == 0 else out


class Rng:
    """Seeded random source backed by numpy's Philox counter-based generator.

    Philox output is specified bit-for-bit by its algorithm, so a given
    ``(seed, stream)`` pair yields the same draws on every platform. Separate
    streams let weight init and data sampling stay independent of each other.
    """

    def __init__(self, seed, stream=0):
        seed = int(seed)
        stream = int(stream)
        if not 0 <= seed < 2**64 or not 0 <= stream < 2**64:
            raise ContractError("seed and stream must be unsigned 64-bit integers")
        self.seed = seed
        self.stream = stream
        self._gen = np.random.Generator(np.random.Philox(key=(stream << 64) | seed))

    def uniform_int(self, lo, hi):
        if not lo < hi:
            raise ContractError(f"empty integer range [{lo}, {hi})")
        return int(self._gen.integers(lo, hi))

    def integers(self, lo, hi, size):
        if not lo < hi:
            raise ContractError(f"empty integer range [{lo}, {hi})")
        return self._gen.integers(lo, hi, size=size)

    def uniform(self, lo, hi, size):
        return self._gen.uniform(lo, hi, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)


def rng_uniform_int(rng, lo, hi):
    """Draw one integer uniformly from ``[lo, hi)``, advancing ``rng``."""
    return rng.uniform_int(lo, hi)
