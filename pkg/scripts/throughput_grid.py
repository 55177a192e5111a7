#!/usr/bin/env python3
"""Throughput grid over context lengths and memory budgets.

For each (context, budget) cell, batch size is maximized under the budget
per policy: the resident policy pays for every token of every sequence,
offload policies pay only for their fast-tier working set. One CSV row per
(policy, context, budget). A second file holds the 101-point hit-rate
throughput curve for the same configuration.

Usage:
    python scripts/throughput_grid.py --contexts 8192,12288,16384 \
        --budgets-gb 2.1,3.9 --out grid.csv
"""

import argparse
import csv

from nosa_sim.config import AttentionConfig
from nosa_sim.offload_sim import (
    GRID_PARAMS,
    POLICIES,
    fast_slots_per_seq,
    memory_footprint,
    simulate_decode,
    throughput_curve,
    write_curve_csv,
)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--contexts", default="8192,12288,16384")
    ap.add_argument("--budgets-gb", default="2.1,3.9")
    ap.add_argument("--steps", type=int, default=6)
    ap.add_argument("--layers", type=int, default=28)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--smoothness", type=float, default=0.95)
    ap.add_argument("--out", default="throughput_grid.csv")
    ap.add_argument("--curve-out", default="throughput_curve.csv")
    args = ap.parse_args(argv)

    width = 2
    rows = []
    for n in (int(x) for x in args.contexts.split(",")):
        config = AttentionConfig(n=n, d=2048, n_head=16, n_kv_head=2, d_head=128,
                                 n_b=64, n_s=64, n_w=1024, k=4096, k_q=1024, k_e=3072)
        res_per_seq = memory_footprint(config, 1, width) * args.layers
        slots = fast_slots_per_seq(config, n, args.steps + 1)
        off_per_seq = memory_footprint(config, 1, width, "nosa",
                                       fast_blocks_per_head=slots) * args.layers
        for budget_gb in (float(x) for x in args.budgets_gb.split(",")):
            budget = budget_gb * 1e9
            for policy in POLICIES:
                per_seq = res_per_seq if policy == "infllmv2-resident" else off_per_seq
                batch = max(1, int(budget // per_seq))
                rep = simulate_decode(config, GRID_PARAMS, policy, batch, n, args.steps,
                                      seed=args.seed, element_width=width,
                                      layers=args.layers,
                                      query_smoothness=args.smoothness)
                rows.append((policy, n, budget_gb, batch, rep.hit_rate,
                             rep.hit_rate_topk, rep.tokens_per_s))
                print(f"n={n:6d} M={budget_gb:4.1f}GB {policy:20s} "
                      f"B={batch:3d} hit={rep.hit_rate:.3f} tok/s={rep.tokens_per_s:8.1f}")

    with open(args.out, "w", newline="") as f:
        f.write("# nosa-sim throughput-grid v1\n")
        w = csv.writer(f)
        w.writerow(["policy", "context", "budget_gb", "batch",
                    "hit_rate", "hit_rate_topk", "tokens_per_s"])
        for row in rows:
            w.writerow([row[0], row[1], row[2], row[3],
                        repr(row[4]), repr(row[5]), repr(row[6])])

    curve_cfg = AttentionConfig(n=16384, d=2048, n_head=16, n_kv_head=2, d_head=128,
                                n_b=64, n_s=64, n_w=1024, k=4096, k_q=1024, k_e=3072)
    curve = throughput_curve([i / 100 for i in range(101)], curve_cfg, GRID_PARAMS,
                             batch=32, element_width=width, layers=args.layers)
    write_curve_csv(curve, args.curve_out)
    print(f"wrote {args.out} and {args.curve_out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
