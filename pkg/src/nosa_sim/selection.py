"""Block selection for sparse decoding.

Token positions are 0-based. At decode step t the KV cache holds tokens
0..t-1, grouped into blocks of n_b tokens; block j covers positions
[j*n_b, (j+1)*n_b). Three disjoint regions partition the blocks:

  sink   -- the first n_s tokens, always attended;
  pool   -- complete blocks older than the recent region, the only blocks
            eligible for top-k selection;
  recent -- everything from ``recent_start`` on (the sliding-window region
            plus, within a decode run, all tokens appended since the run
            started), always attended.

``recent_start`` is frozen when a run begins. Freezing keeps the selectable
pool identical across the steps of a run, which is what makes the
step-to-step overlap guarantee of the combined selection rule exact: the
query-agnostic scores of pool blocks never change, so the top ranks can
only be displaced by query-aware picks, never by pool growth. It also
mirrors how an offloading server treats a request: the prefix is the
offloadable pool, while freshly decoded tokens stay resident.

For a single-shot selection (run of length one) the frozen edge coincides
with the literal sliding window, so nothing is frozen at all.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import AttentionConfig
from .numerics import NEG_INF, argtopk


@dataclass(frozen=True)
class BlockGeometry:
    """Fixed/pool block layout for one decode run (recent edge frozen at t0)."""

    n_b: int
    n_s: int
    t0: int             # cache length when the run started
    recent_start: int   # first always-attended recent position

    @classmethod
    def for_run(cls, config: AttentionConfig, t0: int) -> "BlockGeometry":
        if t0 < 0:
            raise ValueError("t0 must be non-negative")
        recent_start = max(0, t0 - config.n_w + 1)
        return cls(n_b=config.n_b, n_s=config.n_s, t0=t0, recent_start=recent_start)

    @property
    def sink_blocks(self) -> range:
        return range(self.n_s // self.n_b)

    @property
    def pool_blocks(self) -> range:
        """Selectable blocks: complete, past the sink, fully before recent_start."""
        lo = self.n_s // self.n_b
        hi = self.recent_start // self.n_b
        return range(lo, max(lo, hi))

    def n_blocks(self, t: int) -> int:
        """Blocks overlapping positions [0, t), counting a partial tail."""
        return -(-t // self.n_b)

    def recent_blocks(self, t: int) -> range:
        """Blocks overlapping [recent_start, t); attended whole."""
        lo = min(self.recent_start // self.n_b, self.n_blocks(t))
        return range(lo, self.n_blocks(t))

    def fixed_blocks(self, t: int) -> tuple[int, ...]:
        """Sink plus recent blocks at step t, deduplicated and sorted."""
        fixed = set(self.sink_blocks) | set(self.recent_blocks(t))
        fixed = {b for b in fixed if b < self.n_blocks(t)}
        return tuple(sorted(fixed))


@dataclass(frozen=True)
class SelectionResult:
    """Selected block sets at one decode step.

    blocks_q / blocks_e are the query-aware and query-agnostic top-k picks;
    blocks_fixed are the always-attended sink/recent blocks. The three are
    pairwise disjoint. gamma_tokens expands everything to token positions
    <= t, clipping the final (possibly partial) block at t.
    """

    step: int
    blocks_q: tuple[int, ...]
    blocks_e: tuple[int, ...]
    blocks_fixed: tuple[int, ...]
    gamma_tokens: frozenset[int]

    @property
    def topk_blocks(self) -> frozenset[int]:
        return frozenset(self.blocks_q) | frozenset(self.blocks_e)

    @property
    def attended_blocks(self) -> frozenset[int]:
        return self.topk_blocks | frozenset(self.blocks_fixed)


def _expand_blocks(blocks, n_b: int, t: int):
    for b in blocks:
        start = b * n_b
        yield from range(start, min(start + n_b, t))


def _make_result(t, n_b, blocks_q, blocks_e, fixed) -> SelectionResult:
    gamma = frozenset(_expand_blocks(set(blocks_q) | set(blocks_e) | set(fixed), n_b, t))
    return SelectionResult(
        step=t,
        blocks_q=tuple(sorted(int(b) for b in blocks_q)),
        blocks_e=tuple(sorted(int(b) for b in blocks_e)),
        blocks_fixed=tuple(int(b) for b in fixed),
        gamma_tokens=gamma,
    )


def _check_scores(scores, geometry: BlockGeometry, t: int, name: str) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size < geometry.n_blocks(t):
        raise ValueError(
            f"{name} must cover all {geometry.n_blocks(t)} blocks at t={t}, got length {s.size}"
        )
    return s


def nosa_select(
    s_q_blocks,
    s_e_blocks,
    t: int,
    config: AttentionConfig,
    geometry: BlockGeometry | None = None,
) -> SelectionResult:
    """Combined two-phase selection: query-aware picks first, then
    query-agnostic picks over what remains.

    Equivalent to lifting the query-aware positions to +inf and taking a
    single top-k over the combined score (the tie rule of argtopk makes the
    two constructions identical; tests assert this). When the pool is
    smaller than the total block budget, every pool block is selected.
    """
    if geometry is None:
        geometry = BlockGeometry.for_run(config, t)
    s_q = _check_scores(s_q_blocks, geometry, t, "s_q_blocks")
    s_e = _check_scores(s_e_blocks, geometry, t, "s_e_blocks")

    pool = np.fromiter(geometry.pool_blocks, dtype=np.int64)
    m_q = min(config.blocks_q, pool.size)
    picked_q = pool[argtopk(s_q[pool], m_q)] if pool.size else pool

    in_q = np.zeros(pool.size, dtype=bool)
    in_q[np.searchsorted(pool, picked_q)] = True
    rest = pool[~in_q]
    m_e = min(config.blocks_e, rest.size)
    picked_e = rest[argtopk(s_e[rest], m_e)] if rest.size else rest

    return _make_result(t, config.n_b, picked_q, picked_e, geometry.fixed_blocks(t))


def infllmv2_select(
    s_q_blocks,
    t: int,
    config: AttentionConfig,
    geometry: BlockGeometry | None = None,
) -> SelectionResult:
    """Baseline selection: top blocks by query score alone (no query-agnostic
    component), same total block budget and fixed sink/recent handling."""
    if geometry is None:
        geometry = BlockGeometry.for_run(config, t)
    s_q = _check_scores(s_q_blocks, geometry, t, "s_q_blocks")

    pool = np.fromiter(geometry.pool_blocks, dtype=np.int64)
    m = min(config.blocks_topk, pool.size)
    picked = pool[argtopk(s_q[pool], m)] if pool.size else pool
    return _make_result(t, config.n_b, picked, (), geometry.fixed_blocks(t))


def build_token_mask(sel: SelectionResult, t: int) -> np.ndarray:
    """Length-t additive mask: 0.0 at attended positions, -inf elsewhere.

    Causal by construction: the mask only covers cached positions j < t.
    """
    if sel.step != t:
        raise ValueError(f"selection was taken at step {sel.step}, not {t}")
    mask = np.full(t, NEG_INF)
    idx = [j for j in sel.gamma_tokens if j < t]
    mask[idx] = 0.0
    return mask
