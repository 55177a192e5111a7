"""Block compression, grouped projections, eviction-head scoring, and the
biased attention computation with its brute-force oracle.

Four eviction-head variants are supported. All share the same tiny
two-matrix scorer; they differ in where the exponential sits:

  retaining  score sigma(h W1) W2 on hidden states; bias added to logits
  dma        score exp(silu(v W1) W2); bias multiplies the exp'd logits
  ed-dma     score silu(v W1) W2; the exp is deferred into attention
  s-dma      same score as ed-dma; no bias applied in the forward pass

The dma-family nonlinearity is SiLU and the retaining one is the logistic
sigmoid; both are swappable in principle but fixed here for determinism.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .config import AttentionConfig
from .numerics import NEG_INF, matmul, softmax_stable

VARIANTS = ("retaining", "dma", "ed-dma", "s-dma")


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def compress_blocks(x, n_b: int) -> np.ndarray:
    """Mean-pool rows of x per block of n_b rows.

    A trailing partial block is averaged over its actual row count, so
    every row contributes to exactly one compressed row.
    """
    x = np.asarray(x, dtype=np.float64)
    if n_b <= 0:
        raise ValueError("n_b must be positive")
    if x.ndim == 1:
        return compress_blocks(x[:, None], n_b)[:, 0]
    t = x.shape[0]
    if t == 0:
        return np.empty((0, x.shape[1]))
    starts = np.arange(0, t, n_b)
    sums = np.add.reduceat(x, starts, axis=0)
    counts = np.minimum(starts + n_b, t) - starts
    return sums / counts[:, None]


def compress_scores(s, n_b: int) -> np.ndarray:
    """1-D convenience wrapper around compress_blocks."""
    return compress_blocks(np.asarray(s, dtype=np.float64), n_b)


def project_qkv(h, w_q, w_k, w_v, config: AttentionConfig):
    """Project hidden states into per-head Q and per-KV-head K, V.

    Returns (q, k, v) with q of shape (n_head, t, d_head) and k, v of shape
    (n_kv_head, t, d_head). Query head g uses KV head g // group_size.
    """
    h = np.asarray(h, dtype=np.float64)
    t = h.shape[0]
    q = matmul(h, w_q)
    k = matmul(h, w_k)
    v = matmul(h, w_v)
    if q.shape[1] != config.n_head * config.d_head:
        raise ValueError(
            f"w_q produces width {q.shape[1]}, expected n_head*d_head={config.n_head * config.d_head}"
        )
    if k.shape[1] != config.n_kv_head * config.d_head or v.shape[1] != k.shape[1]:
        raise ValueError(
            f"w_k/w_v produce widths {k.shape[1]}/{v.shape[1]}, "
            f"expected n_kv_head*d_head={config.n_kv_head * config.d_head}"
        )
    q = q.reshape(t, config.n_head, config.d_head).transpose(1, 0, 2)
    k = k.reshape(t, config.n_kv_head, config.d_head).transpose(1, 0, 2)
    v = v.reshape(t, config.n_kv_head, config.d_head).transpose(1, 0, 2)
    return q, k, v


def query_block_scores(q_t, k_c) -> np.ndarray:
    """One dot-product score per compressed block row."""
    q_t = np.asarray(q_t, dtype=np.float64)
    k_c = np.asarray(k_c, dtype=np.float64)
    if q_t.ndim != 1 or k_c.ndim != 2 or k_c.shape[1] != q_t.size:
        raise ValueError(
            f"width mismatch: q_t has length {q_t.size}, K_c rows have width {k_c.shape[-1]}"
        )
    return k_c @ q_t


@dataclass(frozen=True)
class EvictionHead:
    """Per-token importance scorer; weights shared across KV heads."""

    variant: str
    w1: np.ndarray  # (d, r) for retaining, (d_head, n_head) for the dma family
    w2: np.ndarray  # (r,) / (n_head,)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown eviction head variant {self.variant!r}")

    @property
    def nonlinearity(self) -> str:
        return "sigmoid" if self.variant == "retaining" else "silu"


def importance_scores(v, head: EvictionHead, h=None, dtype=np.float64) -> np.ndarray:
    """Per-token importance score under the given variant.

    retaining scores the hidden states h; the dma family scores the value
    vectors v. The optional reduced-precision dtype exists to demonstrate
    why selection on exponentiated scores is fragile; it is never used by
    the decode path.
    """
    if head.variant == "retaining":
        if h is None:
            raise ValueError("retaining head scores hidden states; pass h")
        x = np.asarray(h, dtype=dtype)
    else:
        x = np.asarray(v, dtype=dtype)
    if x.shape[-1] != head.w1.shape[0]:
        raise ValueError(
            f"input width {x.shape[-1]} does not match eviction head weight {head.w1.shape[0]}"
        )
    nonlin = sigmoid if head.variant == "retaining" else silu
    z = nonlin(x @ head.w1.astype(dtype)) @ head.w2.astype(dtype)
    z = np.asarray(z, dtype=dtype).reshape(-1)
    if head.variant == "retaining":
        return z
    if head.variant == "dma":
        return np.exp(z)
    return z  # ed-dma and s-dma share the pre-exponential form


def bias_logit_offsets(bias, variant: str) -> np.ndarray:
    """Additive logit offset beta implied by a bias vector, per variant.

    ed-dma / retaining use beta = b, dma uses beta = log(b) (its bias is
    already exponentiated), and s-dma applies no bias in the forward pass.
    """
    b = np.asarray(bias, dtype=np.float64)
    if variant in ("ed-dma", "retaining"):
        return b
    if variant == "dma":
        if np.any(b <= 0):
            raise ValueError("dma bias must be positive (it is an exponential)")
        return np.log(b)
    if variant == "s-dma":
        return np.zeros_like(b)
    raise ValueError(f"unknown eviction head variant {variant!r}")


def attend_biased(q_t, k, v, mask, bias, variant: str) -> np.ndarray:
    """Masked, bias-adjusted attention for one query vector.

    Weights are softmax(q.k_j + beta_j) over unmasked positions j; masked
    positions contribute exactly zero. Raises on an all-masked input.
    """
    q_t = np.asarray(q_t, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    t = k.shape[0]
    if v.shape[0] != t or mask.shape[0] != t or np.asarray(bias).shape[0] != t:
        raise ValueError("k, v, mask and bias must agree on the token count")
    logits = k @ q_t + bias_logit_offsets(bias, variant) + mask
    w = softmax_stable(logits)
    return w @ v


def dense_oracle(q_t, k, v, mask, bias, variant: str) -> np.ndarray:
    """Naive per-element reimplementation of attend_biased.

    Independent code path for cross-checking: explicit loops, scalar math,
    and its own normalization.
    """
    q_t = [float(x) for x in np.asarray(q_t).reshape(-1)]
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    beta = bias_logit_offsets(bias, variant)
    t, d = v.shape

    logits = []
    for j in range(t):
        if mask[j] == NEG_INF:
            logits.append(None)
            continue
        dot = 0.0
        for a in range(len(q_t)):
            dot += q_t[a] * float(k[j, a])
        logits.append(dot + float(beta[j]))
    live = [x for x in logits if x is not None]
    if not live:
        raise ValueError("all positions are masked")
    m = max(live)
    weights = [0.0 if x is None else math.exp(x - m) for x in logits]
    z = sum(weights)

    out = [0.0] * d
    for j in range(t):
        if weights[j] == 0.0:
            continue
        scale = weights[j] / z
        for a in range(d):
            out[a] += scale * float(v[j, a])
    return np.array(out)
