"""On-disk formats: weights and trace JSON, atomic writes, config hashing.

Matrices serialize as {"rows": r, "cols": c, "data": [...]} with data in
row-major order. All writers are deterministic (sorted keys, repr floats)
so identical inputs produce byte-identical files, and all writes go through
a temp file + rename so readers never see a partial file.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np

from .attention import EvictionHead
from .config import AttentionConfig
from .decode import DecodeTrace, ModelWeights
from .selection import SelectionResult

TRACE_VERSION = 1
WEIGHTS_VERSION = 1


def atomic_write_text(path, text: str):
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj, path):
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def load_json(path):
    with open(path) as f:
        return json.load(f)


def config_hash(config_dict: dict) -> str:
    blob = json.dumps(config_dict, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def matrix_to_json(m: np.ndarray) -> dict:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    return {"rows": int(m.shape[0]), "cols": int(m.shape[1]), "data": m.reshape(-1).tolist()}


def matrix_from_json(d: dict) -> np.ndarray:
    data = np.asarray(d["data"], dtype=np.float64)
    if data.size != d["rows"] * d["cols"]:
        raise ValueError(
            f"matrix payload has {data.size} entries, header says {d['rows']}x{d['cols']}"
        )
    return data.reshape(d["rows"], d["cols"])


def weights_to_json(w: ModelWeights, config: AttentionConfig) -> dict:
    return {
        "kind": "model-weights",
        "version": WEIGHTS_VERSION,
        "seed": w.seed,
        "config": config.to_dict(),
        "variant": w.eviction.variant,
        "w_q": matrix_to_json(w.w_q),
        "w_k": matrix_to_json(w.w_k),
        "w_v": matrix_to_json(w.w_v),
        "eviction_w1": matrix_to_json(w.eviction.w1),
        "eviction_w2": matrix_to_json(w.eviction.w2),
    }


def weights_from_json(d: dict) -> tuple[ModelWeights, AttentionConfig]:
    if d.get("kind") != "model-weights":
        raise ValueError("not a model-weights file")
    config = AttentionConfig.from_dict(d["config"])
    head = EvictionHead(
        d["variant"], matrix_from_json(d["eviction_w1"]), matrix_from_json(d["eviction_w2"])[:, 0]
    )
    weights = ModelWeights(
        w_q=matrix_from_json(d["w_q"]),
        w_k=matrix_from_json(d["w_k"]),
        w_v=matrix_from_json(d["w_v"]),
        eviction=head,
        seed=d["seed"],
    )
    return weights, config


def trace_to_json(trace: DecodeTrace) -> dict:
    return {
        "kind": "decode-trace",
        "version": TRACE_VERSION,
        "seed": trace.seed,
        "t0": trace.t0,
        "selector": trace.selector,
        "scripted": trace.scripted,
        "query_smoothness": trace.query_smoothness,
        "variant": trace.variant,
        "config": trace.config.to_dict(),
        "steps": [
            [
                {
                    "step": sel.step,
                    "blocks_q": list(sel.blocks_q),
                    "blocks_e": list(sel.blocks_e),
                    "blocks_fixed": list(sel.blocks_fixed),
                }
                for sel in sels
            ]
            for sels in trace.steps
        ],
    }


def trace_from_json(d: dict) -> DecodeTrace:
    if d.get("kind") != "decode-trace":
        raise ValueError("not a decode-trace file")
    config = AttentionConfig.from_dict(d["config"])
    trace = DecodeTrace(
        config=config,
        seed=d["seed"],
        t0=d["t0"],
        selector=d["selector"],
        scripted=d.get("scripted", True),
        query_smoothness=d.get("query_smoothness", 0.0),
        variant=d.get("variant"),
    )
    for sels in d["steps"]:
        row = []
        for s in sels:
            blocks = (
                set(s["blocks_q"]) | set(s["blocks_e"]) | set(s["blocks_fixed"])
            )
            gamma = frozenset(
                tok
                for b in blocks
                for tok in range(b * config.n_b, min((b + 1) * config.n_b, s["step"]))
            )
            row.append(
                SelectionResult(
                    step=s["step"],
                    blocks_q=tuple(s["blocks_q"]),
                    blocks_e=tuple(s["blocks_e"]),
                    blocks_fixed=tuple(s["blocks_fixed"]),
                    gamma_tokens=gamma,
                )
            )
        trace.steps.append(row)
    return trace
