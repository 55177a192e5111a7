"""Command-line front end.

Subcommands: gen (seeded weights + decode trace), check-theorem (locality
bound over a trace), simulate (policy/context/budget grid), report (merge
outputs). Exit codes are a stable contract: 0 success, 1 property
violation, 2 usage or configuration error.

Every command is deterministic given (seed, config); reruns write
byte-identical files. Flags mirror config field names one-to-one; a JSON
config file may supply any of them, with command-line flags winning.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys

from .config import ACCOUNTING_MODES, AttentionConfig
from .attention import VARIANTS
from .decode import engine_trace, scripted_selection_trace
from .locality import baseline_locality, verify_locality_bound
from .offload_sim import (
    DEFAULT_PARAMS,
    GRID_PARAMS,
    POLICIES,
    CostModelParams,
    fast_slots_per_seq,
    memory_footprint,
    simulate_decode,
    throughput_curve,
)
from . import serde

USAGE_ERROR = 2
VIOLATION = 1

CONFIG_FIELDS = (
    "n", "d", "n_head", "n_kv_head", "d_head", "n_b", "n_s", "n_w", "k", "k_q", "k_e",
)

CONFIG_DEFAULTS = {
    "n": 2048, "d": 256, "n_head": 4, "n_kv_head": 2, "d_head": 64,
    "n_b": 32, "n_s": 64, "n_w": 256, "k": 512, "k_q": 128, "k_e": 384,
}


class CliError(Exception):
    pass


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with config fields; flags override it")
    for name in CONFIG_FIELDS:
        p.add_argument(f"--{name.replace('_', '-')}", type=int, dest=name)
    p.add_argument("--accounting", choices=ACCOUNTING_MODES)


def _config_fields(args) -> dict:
    """Defaults, then config file, then flags; no validation yet."""
    fields = dict(CONFIG_DEFAULTS)
    fields["accounting"] = "inclusive"
    if args.config:
        file_fields = serde.load_json(args.config)
        unknown = set(file_fields) - set(CONFIG_FIELDS) - {"accounting"}
        if unknown:
            raise CliError(f"unknown config fields in {args.config}: {sorted(unknown)}")
        fields.update(file_fields)
    for name in CONFIG_FIELDS:
        v = getattr(args, name)
        if v is not None:
            fields[name] = v
    if args.accounting is not None:
        fields["accounting"] = args.accounting
    return fields


def _build_config(args) -> AttentionConfig:
    try:
        return AttentionConfig(**_config_fields(args))
    except ValueError as e:
        raise CliError(str(e)) from e


def _load_params(path, default=DEFAULT_PARAMS) -> CostModelParams:
    if path is None:
        return default
    try:
        return CostModelParams.from_dict(serde.load_json(path))
    except (ValueError, TypeError, KeyError) as e:
        raise CliError(f"bad cost-model params {path}: {e}") from e


def cmd_gen(args) -> int:
    config = _build_config(args)
    os.makedirs(args.out, exist_ok=True)
    if args.driver == "engine":
        trace = engine_trace(config, args.variant, args.seed, args.t0, args.steps,
                             selector=args.selector)
        from .decode import ModelWeights

        weights = ModelWeights.random(config, args.variant, args.seed)
        serde.dump_json(serde.weights_to_json(weights, config),
                        os.path.join(args.out, "weights.json"))
    else:
        trace = scripted_selection_trace(
            config, args.seed, args.t0, args.steps, selector=args.selector,
            query_smoothness=args.smoothness,
        )
    serde.dump_json(serde.trace_to_json(trace), os.path.join(args.out, "trace.json"))
    print(f"wrote {args.out}/trace.json ({args.steps} steps, selector={args.selector})")
    return 0


def cmd_check_theorem(args) -> int:
    trace = serde.trace_from_json(serde.load_json(args.trace))
    if args.no_bound:
        report = baseline_locality(trace, include_fixed=args.include_fixed)
    else:
        if trace.selector != "nosa":
            raise CliError(
                "bound verification needs a combined-selection trace; "
                "pass --no-bound for baseline traces"
            )
        report = verify_locality_bound(trace)
    if args.report:
        serde.dump_json(
            {
                "kind": "locality-report",
                "version": 1,
                "selector": trace.selector,
                "seed": trace.seed,
                "config": trace.config.to_dict(),
                **report.to_dict(),
            },
            args.report,
        )
    if args.csv:
        report.write_csv(args.csv)
    if report.violations:
        first = report.violations[0]
        print(
            f"VIOLATION at step {report.steps[first - 1]}: "
            f"gamma={report.gammas[first - 1]:.6f} < bound={report.bound:.6f}"
        )
        return VIOLATION
    print(f"ok: min gamma {report.min_gamma:.6f} >= bound {report.bound:.6f} "
          f"over {len(report.gammas)} steps")
    return 0


def cmd_simulate(args) -> int:
    fields = _config_fields(args)
    params = _load_params(args.params, default=GRID_PARAMS)
    policies = args.policies.split(",")
    for p in policies:
        if p not in POLICIES:
            raise CliError(f"unknown policy {p!r}; choose from {POLICIES}")
    contexts = [int(x) for x in args.contexts.split(",")]
    budgets = [float(x) for x in args.budgets.split(",")] if args.budgets else [None]

    os.makedirs(args.out, exist_ok=True)
    rows = []
    for n_ctx in contexts:
        # the grid's context length overrides n; validation happens per point
        try:
            cfg = AttentionConfig(**{**fields, "n": max(n_ctx, fields["k"])})
        except ValueError as e:
            raise CliError(f"context {n_ctx}: {e}") from e
        for budget in budgets:
            for policy in policies:
                batch = args.batch
                if budget is not None:
                    per_seq = _per_seq_bytes(cfg, policy, args.t0 or n_ctx, args.steps,
                                             args.element_width, args.layers)
                    batch = max(1, int(budget // per_seq))
                report = simulate_decode(
                    cfg, params, policy, batch, args.t0 or n_ctx, args.steps,
                    seed=args.seed, element_width=args.element_width, layers=args.layers,
                    query_smoothness=args.smoothness,
                )
                row = report.to_dict()
                row["memory_budget"] = budget
                row["config_hash"] = serde.config_hash(row["config"])
                rows.append(row)

    out_json = os.path.join(args.out, "sim_report.json")
    serde.dump_json(
        {"kind": "sim-report", "version": 1, "params": params.to_dict(), "rows": rows}, out_json
    )
    out_csv = os.path.join(args.out, "sim_report.csv")
    serde.atomic_write_text(out_csv, _sim_rows_csv(rows))
    if args.curve:
        grid = [i / 100 for i in range(101)]
        curve_cfg = AttentionConfig(**{**fields, "n": max(max(contexts), fields["k"])})
        curve = throughput_curve(grid, curve_cfg, params, batch=args.batch,
                                 element_width=args.element_width, layers=args.layers)
        text = "hit_rate,tokens_per_s\n" + "".join(f"{h!r},{tps!r}\n" for h, tps in curve)
        serde.atomic_write_text(os.path.join(args.out, "throughput_curve.csv"), text)
    print(f"wrote {out_json} ({len(rows)} rows)")
    return 0


def _per_seq_bytes(config, policy, t0, steps, element_width, layers):
    if policy == "infllmv2-resident":
        return memory_footprint(config, 1, element_width, policy) * layers
    slots = fast_slots_per_seq(config, t0, steps + 1)
    return memory_footprint(config, 1, element_width, policy,
                            fast_blocks_per_head=slots) * layers


SIM_CSV_COLUMNS = (
    "policy", "batch", "context", "steps", "seed", "memory_budget", "fast_blocks_per_head",
    "hit_rate", "hit_rate_topk", "bytes_up", "bytes_down", "tokens_per_s", "attn_ratio_mean",
    "config_hash",
)


def _sim_rows_csv(rows) -> str:
    buf = io.StringIO()
    buf.write("# nosa-sim grid v1\n")
    w = csv.writer(buf)
    w.writerow(SIM_CSV_COLUMNS)
    for row in rows:
        w.writerow([_csv_cell(row.get(c)) for c in SIM_CSV_COLUMNS])
    return buf.getvalue()


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def cmd_report(args) -> int:
    rows = []
    for path in args.inputs:
        doc = serde.load_json(path)
        kind = doc.get("kind")
        if kind == "sim-report":
            for row in doc["rows"]:
                rows.append({"source": "simulate", **row})
        elif kind == "decode-trace":
            trace = serde.trace_from_json(doc)
            rep = (verify_locality_bound(trace) if trace.selector == "nosa"
                   else baseline_locality(trace))
            rows.append({
                "source": "locality",
                "policy": trace.selector,
                "config_hash": serde.config_hash(trace.config.to_dict()),
                "min_gamma": rep.min_gamma,
                "bound": rep.bound,
                "violations": len(rep.violations),
                "config": trace.config.to_dict(),
            })
        else:
            raise CliError(f"{path}: unknown document kind {kind!r}")

    seen = set()
    merged = []
    for row in rows:
        key = (row["source"], row.get("policy"), row["config_hash"],
               row.get("batch"), row.get("context"), row.get("seed"))
        if key in seen:
            continue
        seen.add(key)
        merged.append(row)

    columns = ["source", "policy", "config_hash", "batch", "context", "steps", "seed",
               "memory_budget", "hit_rate", "hit_rate_topk", "tokens_per_s",
               "min_gamma", "bound", "violations"]
    buf = io.StringIO()
    buf.write("# nosa-sim merged v1\n")
    w = csv.writer(buf)
    w.writerow(columns)
    for row in merged:
        w.writerow([_csv_cell(row.get(c)) for c in columns])
    serde.atomic_write_text(args.out, buf.getvalue())
    if args.json:
        serde.dump_json({"kind": "merged-report", "version": 1, "rows": merged}, args.json)
    print(f"wrote {args.out} ({len(merged)} rows)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nosa-sim",
                                     description="sparse-attention offloading testbench")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate seeded weights and a decode trace")
    _add_config_flags(g)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--t0", type=int, default=1024, help="prefilled tokens before decoding")
    g.add_argument("--steps", type=int, default=16)
    g.add_argument("--variant", choices=VARIANTS, default="ed-dma")
    g.add_argument("--selector", choices=("nosa", "infllmv2"), default="nosa")
    g.add_argument("--driver", choices=("engine", "scripted"), default="engine")
    g.add_argument("--smoothness", type=float, default=0.0,
                   help="AR(1) coefficient for scripted query scores")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    c = sub.add_parser("check-theorem", help="verify the locality bound over a trace")
    c.add_argument("trace")
    c.add_argument("--no-bound", action="store_true",
                   help="report the gamma series without asserting a bound")
    c.add_argument("--include-fixed", action="store_true",
                   help="with --no-bound, compute gamma over all attended blocks")
    c.add_argument("--report", help="write the locality report as JSON")
    c.add_argument("--csv", help="write the per-step gamma series as CSV")
    c.set_defaults(func=cmd_check_theorem)

    s = sub.add_parser("simulate", help="run the policy/context/budget grid")
    _add_config_flags(s)
    s.add_argument("--params", help="cost-model params JSON (defaults to A100-class values "
                                    "with a 20 ms per-step service overhead)")
    s.add_argument("--policies", default=",".join(POLICIES))
    s.add_argument("--contexts", default="2048")
    s.add_argument("--budgets", default="",
                   help="fast-memory budgets in bytes; batch is maximized per budget")
    s.add_argument("--batch", type=int, default=8)
    s.add_argument("--t0", type=int, default=0, help="prefill length (defaults to the context)")
    s.add_argument("--steps", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--element-width", type=int, default=2, choices=(2, 4))
    s.add_argument("--layers", type=int, default=1)
    s.add_argument("--smoothness", type=float, default=0.9)
    s.add_argument("--curve", action="store_true", help="also write throughput_curve.csv")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="merge simulation and locality outputs")
    r.add_argument("--inputs", nargs="*", default=[])
    r.add_argument("--out", required=True)
    r.add_argument("--json", help="also write the merged rows as JSON")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
