"""Deterministic dense numeric kernels: matmul, stable softmax, tie-broken
top-k, and seeded random matrices.

Everything is float64 row-major. The random generator is NumPy's PCG64
(``np.random.default_rng``); child streams are derived with
``SeedSequence.spawn`` so the same seed reproduces the same matrices on any
platform.
"""

from __future__ import annotations

import numpy as np

NEG_INF = float("-inf")


def as_matrix(x, dtype=np.float64) -> np.ndarray:
    """Coerce to a 2-D C-contiguous array of the requested dtype."""
    a = np.ascontiguousarray(np.asarray(x, dtype=dtype))
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={a.ndim}")
    return a


def matmul(a, b) -> np.ndarray:
    """Matrix product in 64-bit arithmetic.

    Raises ValueError with a shape diagnostic when the inner dimensions
    disagree.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul shape mismatch: ({a.shape[0]}x{a.shape[1]}) @ ({b.shape[0]}x{b.shape[1]})"
        )
    return a @ b


def softmax_stable(scores) -> np.ndarray:
    """Numerically stable softmax over a 1-D score vector.

    -inf entries get weight exactly 0. Rejects inputs with empty support
    (all -inf) and inputs containing NaN or +inf.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1:
        raise ValueError(f"expected a 1-D score vector, got ndim={s.ndim}")
    if np.any(np.isnan(s)) or np.any(s == np.inf):
        raise ValueError("scores must be finite or -inf")
    finite = s > NEG_INF
    if not finite.any():
        raise ValueError("softmax over empty support: all scores are -inf")
    m = s[finite].max()
    e = np.exp(s - m)  # exp(-inf) == 0.0 exactly
    return e / e.sum()


def argtopk(scores, k: int) -> np.ndarray:
    """Indices of the k largest scores, ties broken toward the lower index.

    Returns indices sorted ascending. Deterministic: a stable descending
    sort means equal scores are taken in index order.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1:
        raise ValueError(f"expected a 1-D score vector, got ndim={s.ndim}")
    if k < 0 or k > s.size:
        raise ValueError(f"argtopk k={k} out of range for length {s.size}")
    if k == 0:
        return np.empty(0, dtype=np.int64)
    order = np.argsort(-s, kind="stable")
    return np.sort(order[:k]).astype(np.int64)


def seeded_normal(rows: int, cols: int, seed) -> np.ndarray:
    """Reproducible standard-normal matrix (PCG64; same seed, same bits)."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((rows, cols))


def spawn_seeds(seed, n: int) -> list[np.random.SeedSequence]:
    """Derive n independent child seed sequences from one root seed."""
    return np.random.SeedSequence(seed).spawn(n)
