import numpy as np
import pytest

from nosa_sim.config import AttentionConfig


@pytest.fixture
def small_config():
    """16-block pool at t0=512; budgets 4 query-aware + 6 query-agnostic blocks."""
    return AttentionConfig(
        n=1024, d=64, n_head=4, n_kv_head=2, d_head=16,
        n_b=16, n_s=32, n_w=64, k=256, k_q=64, k_e=192,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
