"""Locality-bounded block-sparse decoding testbench: selection rules, a
two-tier paged KV-block manager, and an offloading throughput simulator."""

from .config import AttentionConfig
from .attention import (
    EvictionHead,
    VARIANTS,
    attend_biased,
    compress_blocks,
    dense_oracle,
    importance_scores,
)
from .selection import BlockGeometry, SelectionResult, build_token_mask, infllmv2_select, nosa_select
from .decode import DecodeEngine, DecodeTrace, ModelWeights, engine_trace, scripted_selection_trace
from .locality import LocalityReport, baseline_locality, eviction_monotone_check, gamma, verify_locality_bound
from .kv_manager import PhysicalLayout, TieredBlockManager, TransferPlan
from .offload_sim import (
    CostModelParams,
    DEFAULT_PARAMS,
    GRID_PARAMS,
    SimReport,
    StepCost,
    memory_footprint,
    simulate_decode,
    step_cost,
    throughput_curve,
)

__all__ = [
    "AttentionConfig",
    "BlockGeometry",
    "CostModelParams",
    "DEFAULT_PARAMS",
    "GRID_PARAMS",
    "DecodeEngine",
    "DecodeTrace",
    "EvictionHead",
    "LocalityReport",
    "ModelWeights",
    "PhysicalLayout",
    "SelectionResult",
    "SimReport",
    "StepCost",
    "TieredBlockManager",
    "TransferPlan",
    "VARIANTS",
    "attend_biased",
    "baseline_locality",
    "build_token_mask",
    "compress_blocks",
    "dense_oracle",
    "engine_trace",
    "eviction_monotone_check",
    "gamma",
    "importance_scores",
    "infllmv2_select",
    "memory_footprint",
    "nosa_select",
    "scripted_selection_trace",
    "simulate_decode",
    "step_cost",
    "throughput_curve",
    "verify_locality_bound",
]
