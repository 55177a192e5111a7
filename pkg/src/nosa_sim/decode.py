"""Step-by-step decoding: model state, the per-step selection/attention
pipeline, and trace generation.

Two trace drivers exist. ``DecodeEngine`` runs the full pipeline (projections,
eviction scoring, compression, selection, biased attention) and is the
reference path. ``scripted_selection_trace`` skips the numerics and feeds
seeded synthetic block scores straight into the selection rule; it exists so
selection-level properties can be swept over thousands of traces cheaply.
Both freeze the selectable pool at run start (see selection module).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import (
    EvictionHead,
    attend_biased,
    compress_blocks,
    compress_scores,
    importance_scores,
    project_qkv,
)
from .config import AttentionConfig
from .selection import BlockGeometry, SelectionResult, build_token_mask, infllmv2_select, nosa_select

SELECTORS = ("nosa", "infllmv2")


@dataclass(frozen=True)
class ModelWeights:
    """Projection and eviction-head weights for a synthetic model."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    eviction: EvictionHead
    seed: int

    @classmethod
    def random(cls, config: AttentionConfig, variant: str, seed: int) -> "ModelWeights":
        ss = np.random.SeedSequence(seed).spawn(5)
        rngs = [np.random.default_rng(s) for s in ss]
        scale = 1.0 / np.sqrt(config.d)
        w_q = rngs[0].standard_normal((config.d, config.n_head * config.d_head)) * scale
        w_k = rngs[1].standard_normal((config.d, config.n_kv_head * config.d_head)) * scale
        w_v = rngs[2].standard_normal((config.d, config.n_kv_head * config.d_head)) * scale
        in_dim = config.d if variant == "retaining" else config.d_head
        w1 = rngs[3].standard_normal((in_dim, config.n_head)) / np.sqrt(in_dim)
        w2 = rngs[4].standard_normal(config.n_head) / np.sqrt(config.n_head)
        return cls(w_q=w_q, w_k=w_k, w_v=w_v, eviction=EvictionHead(variant, w1, w2), seed=seed)


@dataclass
class HeadState:
    """Growable per-KV-head cache plus its block-compressed views."""

    k: np.ndarray            # (capacity, d_head); rows [0, t) are live
    v: np.ndarray
    s_e: np.ndarray          # (capacity,) per-token importance scores
    t: int = 0

    def append(self, k_row, v_row, score: float):
        if self.t >= self.k.shape[0]:
            raise ValueError("head cache capacity exhausted")
        self.k[self.t] = k_row
        self.v[self.t] = v_row
        self.s_e[self.t] = score
        self.t += 1

    def compressed(self, n_b: int):
        """(K_c, s_e_c) over the live rows."""
        return compress_blocks(self.k[: self.t], n_b), compress_scores(self.s_e[: self.t], n_b)


@dataclass
class StepOutput:
    step: int
    selections: list[SelectionResult]   # one per KV head
    outputs: np.ndarray                 # (n_head, d_head)


@dataclass
class DecodeTrace:
    """Per-step selection sets for one decode run, JSON-serializable."""

    config: AttentionConfig
    seed: int
    t0: int
    selector: str
    steps: list[list[SelectionResult]] = field(default_factory=list)
    scripted: bool = True
    query_smoothness: float = 0.0
    variant: str | None = None

    def head_steps(self, head: int) -> list[SelectionResult]:
        return [sels[head] for sels in self.steps]

    @property
    def n_heads_traced(self) -> int:
        return len(self.steps[0]) if self.steps else 0


class DecodeEngine:
    """Single-sequence decode state across all heads.

    Selection is computed once per KV head (group query scores summed) and
    shared by that head's query group. One writer per engine; scoring and
    attention only read.
    """

    def __init__(self, config: AttentionConfig, weights: ModelWeights, capacity: int):
        self.config = config
        self.weights = weights
        self.heads = [
            HeadState(
                k=np.empty((capacity, config.d_head)),
                v=np.empty((capacity, config.d_head)),
                s_e=np.empty(capacity),
            )
            for _ in range(config.n_kv_head)
        ]
        self.geometry: BlockGeometry | None = None

    @property
    def t(self) -> int:
        return self.heads[0].t

    def _score_token(self, v_rows: np.ndarray, h_row: np.ndarray) -> np.ndarray:
        """Importance score of one token for every KV head."""
        ev = self.weights.eviction
        if ev.variant == "retaining":
            s = importance_scores(None, ev, h=h_row[None, :])[0]
            return np.full(self.config.n_kv_head, s)
        return importance_scores(v_rows, ev)

    def prefill(self, h: np.ndarray):
        """Project and cache a block of hidden states without attending."""
        cfg = self.config
        _, k, v = project_qkv(h, self.weights.w_q, self.weights.w_k, self.weights.w_v, cfg)
        for j in range(h.shape[0]):
            scores = self._score_token(v[:, j, :], h[j])
            for idx, head in enumerate(self.heads):
                head.append(k[idx, j], v[idx, j], scores[idx])

    def start_run(self):
        """Freeze the selection geometry at the current cache length."""
        self.geometry = BlockGeometry.for_run(self.config, self.t)

    def step(self, h_t: np.ndarray, selector: str = "nosa") -> StepOutput:
        """One decode step: select, attend over the cached tokens, then
        append the new token's KV row."""
        if selector not in SELECTORS:
            raise ValueError(f"selector must be one of {SELECTORS}")
        if self.geometry is None:
            self.start_run()
        cfg = self.config
        t = self.t
        h_row = np.asarray(h_t, dtype=np.float64).reshape(-1)
        q, k_new, v_new = project_qkv(
            h_row[None, :], self.weights.w_q, self.weights.w_k, self.weights.w_v, cfg
        )

        selections = []
        outputs = np.empty((cfg.n_head, cfg.d_head))
        group = cfg.group_size
        for idx, head in enumerate(self.heads):
            k_c, s_e_c = head.compressed(cfg.n_b)
            q_group = q[idx * group : (idx + 1) * group, 0, :]
            s_q_blocks = k_c @ q_group.sum(axis=0)
            if selector == "nosa":
                sel = nosa_select(s_q_blocks, s_e_c, t, cfg, geometry=self.geometry)
            else:
                sel = infllmv2_select(s_q_blocks, t, cfg, geometry=self.geometry)
            selections.append(sel)

            mask = build_token_mask(sel, t)
            token_blocks = np.arange(t) // cfg.n_b
            bias = self._bias_tokens(s_e_c, token_blocks)
            for g in range(group):
                outputs[idx * group + g] = attend_biased(
                    q_group[g], head.k[:t], head.v[:t], mask, bias, self.weights.eviction.variant
                )

        scores = self._score_token(v_new[:, 0, :], h_row)
        for idx, head in enumerate(self.heads):
            head.append(k_new[idx, 0], v_new[idx, 0], scores[idx])
        return StepOutput(step=t, selections=selections, outputs=outputs)

    def _bias_tokens(self, s_e_c: np.ndarray, token_blocks: np.ndarray) -> np.ndarray:
        """Expand block-compressed importance scores back to token bias."""
        return s_e_c[token_blocks]


def engine_trace(
    config: AttentionConfig,
    variant: str,
    seed: int,
    t0: int,
    steps: int,
    selector: str = "nosa",
) -> DecodeTrace:
    """Run the full pipeline on seeded inputs and record the selections."""
    weights = ModelWeights.random(config, variant, seed)
    ss = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(ss[1])
    engine = DecodeEngine(config, weights, capacity=t0 + steps + 1)
    engine.prefill(rng.standard_normal((t0, config.d)))
    engine.start_run()
    trace = DecodeTrace(
        config=config, seed=seed, t0=t0, selector=selector, scripted=False, variant=variant
    )
    for _ in range(steps):
        out = engine.step(rng.standard_normal(config.d), selector=selector)
        trace.steps.append(out.selections)
    return trace


def scripted_selection_trace(
    config: AttentionConfig,
    seed: int,
    t0: int,
    steps: int,
    selector: str = "nosa",
    query_smoothness: float = 0.0,
    n_heads: int = 1,
) -> DecodeTrace:
    """Drive the selection rule with synthetic block scores.

    Query scores evolve as an AR(1) process with coefficient
    ``query_smoothness`` (0 = fresh scores every step, the adversarial
    case; values near 1 mimic the slowly drifting queries seen in
    practice). Query-agnostic block scores are drawn once per run: the
    pool only holds complete blocks, whose compressed scores never change.
    """
    if not 0.0 <= query_smoothness < 1.0:
        raise ValueError("query_smoothness must be in [0, 1)")
    geometry = BlockGeometry.for_run(config, t0)
    trace = DecodeTrace(
        config=config,
        seed=seed,
        t0=t0,
        selector=selector,
        scripted=True,
        query_smoothness=query_smoothness,
    )
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n_total = geometry.n_blocks(t0 + steps)
    rho = query_smoothness
    fresh = np.sqrt(1.0 - rho * rho)
    s_e = [rng.standard_normal(n_total) for _ in range(n_heads)]
    s_q = [rng.standard_normal(n_total) for _ in range(n_heads)]
    for t in range(t0, t0 + steps):
        n_blk = geometry.n_blocks(t)
        sels = []
        for h in range(n_heads):
            if t > t0:
                s_q[h] = rho * s_q[h] + fresh * rng.standard_normal(n_total)
            if selector == "nosa":
                sel = nosa_select(s_q[h][:n_blk], s_e[h][:n_blk], t, config, geometry=geometry)
            else:
                sel = infllmv2_select(s_q[h][:n_blk], t, config, geometry=geometry)
            sels.append(sel)
        trace.steps.append(sels)
    return trace
