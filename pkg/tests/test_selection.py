import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nosa_sim.config import AttentionConfig
from nosa_sim.selection import (
    BlockGeometry,
    build_token_mask,
    infllmv2_select,
    nosa_select,
)


def lift_oracle(s_q, s_e, pool, m_q, m_e):
    """Single top-k over the combined score: query-aware picks lifted to
    +inf, everything else keeps its query-agnostic score. Plain sorted()
    implementation, independent of argtopk."""
    pool = list(pool)
    m_q = min(m_q, len(pool))
    picked_q = set(sorted(pool, key=lambda b: (-s_q[b], b))[:m_q])
    lifted = {b: (np.inf if b in picked_q else s_e[b]) for b in pool}
    m_total = m_q + min(m_e, len(pool) - m_q)
    combined = sorted(pool, key=lambda b: (-lifted[b], b))[:m_total]
    return set(combined)


class TestGeometry:
    def test_single_shot_pool_excludes_sink_and_window(self):
        cfg = AttentionConfig(n=1024, d=8, n_head=1, n_kv_head=1, d_head=8,
                              n_b=16, n_s=32, n_w=64, k=256, k_q=64, k_e=192)
        t = 512
        geom = BlockGeometry.for_run(cfg, t)
        # recent region starts at t - n_w + 1 = 449; its block is 28
        assert geom.recent_start == 449
        assert list(geom.sink_blocks) == [0, 1]
        assert geom.pool_blocks == range(2, 28)
        fixed = geom.fixed_blocks(t)
        assert set(fixed) == {0, 1} | set(range(28, 32))

    def test_pool_is_static_within_a_run(self):
        cfg = AttentionConfig(n=1024, d=8, n_head=1, n_kv_head=1, d_head=8,
                              n_b=16, n_s=32, n_w=64, k=256, k_q=64, k_e=192)
        geom = BlockGeometry.for_run(cfg, 512)
        assert geom.pool_blocks == BlockGeometry.for_run(cfg, 512).pool_blocks
        for t in range(512, 600):
            # fixed grows with t, pool does not
            assert geom.pool_blocks == range(2, 28)
            assert set(geom.fixed_blocks(t)) >= set(geom.fixed_blocks(512))

    def test_every_cached_block_is_classified(self):
        cfg = AttentionConfig(n=1024, d=8, n_head=1, n_kv_head=1, d_head=8,
                              n_b=16, n_s=32, n_w=64, k=256, k_q=64, k_e=192)
        for t0 in (47, 64, 200, 511):
            geom = BlockGeometry.for_run(cfg, t0)
            for t in (t0, t0 + 5, t0 + 40):
                classified = set(geom.fixed_blocks(t)) | set(geom.pool_blocks)
                assert classified == set(range(geom.n_blocks(t)))

    def test_tiny_t_has_empty_pool(self):
        cfg = AttentionConfig(n=1024, d=8, n_head=1, n_kv_head=1, d_head=8,
                              n_b=16, n_s=32, n_w=64, k=256, k_q=64, k_e=192)
        geom = BlockGeometry.for_run(cfg, 80)  # everything is sink or window
        assert len(geom.pool_blocks) == 0
        assert set(geom.fixed_blocks(80)) == set(range(geom.n_blocks(80)))


class TestNosaSelect:
    def setup_method(self):
        self.cfg = AttentionConfig(n=2048, d=8, n_head=1, n_kv_head=1, d_head=8,
                                   n_b=16, n_s=32, n_w=64, k=288, k_q=64, k_e=224)
        # pool budget: m_q=4, m_e=8
        self.t = 1024
        self.geom = BlockGeometry.for_run(self.cfg, self.t)
        self.n_blk = self.geom.n_blocks(self.t)

    def test_budgets_and_disjointness(self, rng):
        s_q = rng.standard_normal(self.n_blk)
        s_e = rng.standard_normal(self.n_blk)
        sel = nosa_select(s_q, s_e, self.t, self.cfg)
        assert len(sel.blocks_q) == self.cfg.blocks_q == 4
        assert len(sel.blocks_e) == self.cfg.blocks_e == 8
        q, e, f = set(sel.blocks_q), set(sel.blocks_e), set(sel.blocks_fixed)
        assert not (q & e) and not (q & f) and not (e & f)

    def test_k_q_zero_depends_only_on_eviction_scores(self, rng):
        cfg = AttentionConfig(n=2048, d=8, n_head=1, n_kv_head=1, d_head=8,
                              n_b=16, n_s=32, n_w=64, k=224, k_q=0, k_e=224)
        s_e = rng.standard_normal(self.n_blk)
        a = nosa_select(rng.standard_normal(self.n_blk), s_e, self.t, cfg)
        b = nosa_select(rng.standard_normal(self.n_blk), s_e, self.t, cfg)
        assert a.blocks_q == () and a.blocks_e == b.blocks_e

    def test_decreasing_scores_select_prefix(self):
        s = -np.arange(self.n_blk, dtype=float)
        sel = nosa_select(s, s, self.t, self.cfg)
        pool = list(self.geom.pool_blocks)
        want = set(pool[: self.cfg.blocks_topk])
        assert sel.topk_blocks == want

    def test_matches_lift_oracle_on_random_instances(self, rng):
        for _ in range(200):
            s_q = rng.standard_normal(self.n_blk)
            s_e = rng.standard_normal(self.n_blk)
            sel = nosa_select(s_q, s_e, self.t, self.cfg)
            want = lift_oracle(s_q, s_e, self.geom.pool_blocks,
                               self.cfg.blocks_q, self.cfg.blocks_e)
            assert sel.topk_blocks == want

    def test_short_pool_selects_everything(self, rng):
        t = 200  # pool smaller than the block budget
        geom = BlockGeometry.for_run(self.cfg, t)
        assert 0 < len(geom.pool_blocks) < self.cfg.blocks_topk
        n_blk = geom.n_blocks(t)
        sel = nosa_select(rng.standard_normal(n_blk), rng.standard_normal(n_blk), t, self.cfg)
        assert sel.topk_blocks == set(geom.pool_blocks)

    def test_score_vector_too_short_rejected(self, rng):
        with pytest.raises(ValueError, match="cover all"):
            nosa_select(np.zeros(3), np.zeros(3), self.t, self.cfg)

    @given(st.integers(0, 2**31 - 1), st.integers(0, 4), st.integers(0, 8))
    @settings(max_examples=150, deadline=None)
    def test_lift_equivalence_property(self, seed, m_q, m_e):
        n_b = 16
        cfg = AttentionConfig(
            n=4096, d=8, n_head=1, n_kv_head=1, d_head=8, n_b=n_b,
            n_s=2 * n_b, n_w=4 * n_b,
            k=(6 + m_q + m_e) * n_b, k_q=m_q * n_b, k_e=(6 + m_e) * n_b,
        )
        assert cfg.blocks_q == m_q and cfg.blocks_e == m_e
        t = 997
        geom = BlockGeometry.for_run(cfg, t)
        rng = np.random.default_rng(seed)
        n_blk = geom.n_blocks(t)
        # coarse quantization makes score ties likely, exercising the tie rule
        s_q = np.round(rng.standard_normal(n_blk), 1)
        s_e = np.round(rng.standard_normal(n_blk), 1)
        sel = nosa_select(s_q, s_e, t, cfg)
        assert sel.topk_blocks == lift_oracle(s_q, s_e, geom.pool_blocks, m_q, m_e)


class TestInfLLMv2Select:
    def setup_method(self):
        self.cfg = AttentionConfig(n=2048, d=8, n_head=1, n_kv_head=1, d_head=8,
                                   n_b=16, n_s=32, n_w=64, k=288, k_q=64, k_e=224)
        self.t = 1024
        self.geom = BlockGeometry.for_run(self.cfg, self.t)

    def test_identical_scores_identical_sets(self, rng):
        s_q = rng.standard_normal(self.geom.n_blocks(self.t + 8))
        a = infllmv2_select(s_q[: self.geom.n_blocks(self.t)], self.t, self.cfg, geometry=self.geom)
        b = infllmv2_select(s_q[: self.geom.n_blocks(self.t + 8)], self.t + 8, self.cfg,
                            geometry=self.geom)
        assert a.topk_blocks == b.topk_blocks

    def test_zero_free_budget_attends_sink_and_window_only(self, rng):
        cfg = AttentionConfig(n=2048, d=8, n_head=1, n_kv_head=1, d_head=8,
                              n_b=16, n_s=32, n_w=64, k=96, k_q=0, k_e=96)
        assert cfg.blocks_topk == 0
        n_blk = BlockGeometry.for_run(cfg, self.t).n_blocks(self.t)
        sel = infllmv2_select(rng.standard_normal(n_blk), self.t, cfg)
        assert sel.topk_blocks == set()
        assert sel.attended_blocks == set(sel.blocks_fixed)

    def test_matches_sort_oracle(self, rng):
        n_blk = self.geom.n_blocks(self.t)
        s_q = rng.standard_normal(n_blk)
        sel = infllmv2_select(s_q, self.t, self.cfg)
        pool = list(self.geom.pool_blocks)
        want = set(sorted(pool, key=lambda b: (-s_q[b], b))[: self.cfg.blocks_topk])
        assert set(sel.blocks_q) == want


class TestTokenMask:
    def setup_method(self):
        self.cfg = AttentionConfig(n=2048, d=8, n_head=1, n_kv_head=1, d_head=8,
                                   n_b=16, n_s=64, n_w=64, k=288, k_q=64, k_e=224)

    def test_small_t_everything_attended(self, rng):
        t = 40  # t < n_w: window covers all cached positions
        geom = BlockGeometry.for_run(self.cfg, t)
        sel = nosa_select(np.zeros(geom.n_blocks(t)), np.zeros(geom.n_blocks(t)), t, self.cfg)
        mask = build_token_mask(sel, t)
        assert np.array_equal(mask, np.zeros(t))

    def test_sink_positions_always_open(self, rng):
        t = 1200
        geom = BlockGeometry.for_run(self.cfg, t)
        n_blk = geom.n_blocks(t)
        sel = nosa_select(rng.standard_normal(n_blk), rng.standard_normal(n_blk), t, self.cfg)
        mask = build_token_mask(sel, t)
        assert np.all(mask[: self.cfg.n_s] == 0.0)  # n_s=64: positions 0..63

    def test_open_count_matches_gamma_expansion_oracle(self, rng):
        t = 1200
        geom = BlockGeometry.for_run(self.cfg, t)
        n_blk = geom.n_blocks(t)
        sel = nosa_select(rng.standard_normal(n_blk), rng.standard_normal(n_blk), t, self.cfg)
        mask = build_token_mask(sel, t)
        # independent expansion: walk each attended block's token range
        want = set()
        for b in sorted(sel.attended_blocks):
            for tok in range(b * self.cfg.n_b, (b + 1) * self.cfg.n_b):
                if tok < t:
                    want.add(tok)
        assert int((mask == 0.0).sum()) == len(sel.gamma_tokens) == len(want)
        assert {int(i) for i in np.flatnonzero(mask == 0.0)} == want

    def test_causality(self, rng):
        t = 500
        geom = BlockGeometry.for_run(self.cfg, t)
        n_blk = geom.n_blocks(t)
        sel = nosa_select(rng.standard_normal(n_blk), rng.standard_normal(n_blk), t, self.cfg)
        assert max(sel.gamma_tokens) < t
        assert build_token_mask(sel, t).shape == (t,)

    def test_step_mismatch_rejected(self, rng):
        t = 500
        geom = BlockGeometry.for_run(self.cfg, t)
        n_blk = geom.n_blocks(t)
        sel = nosa_select(np.zeros(n_blk), np.zeros(n_blk), t, self.cfg)
        with pytest.raises(ValueError, match="step"):
            build_token_mask(sel, t + 1)
