"""Step-to-step selection overlap: the gamma metric, the guaranteed lower
bound check for combined selection traces, descriptive locality for baseline
traces, and the query-agnostic eviction (never-readmit) check.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

from .config import AttentionConfig
from .decode import DecodeTrace


def gamma(prev, cur) -> float:
    """|prev & cur| / |cur|. The current set must be non-empty."""
    prev = frozenset(prev)
    cur = frozenset(cur)
    if not cur:
        raise ValueError("gamma is undefined for an empty current set")
    return len(prev & cur) / len(cur)


@dataclass
class LocalityReport:
    """Gamma series for one trace plus the asserted lower bound.

    ``violations`` lists the (1-based within-trace) step indices where
    gamma fell below the bound; it is empty iff min_gamma >= bound.
    Baseline reports carry bound 0.0, which no gamma can violate.
    """

    gammas: list[float]
    bound: float
    violations: list[int] = field(default_factory=list)
    steps: list[int] = field(default_factory=list)   # absolute positions t

    @property
    def min_gamma(self) -> float:
        return min(self.gammas) if self.gammas else 1.0

    def to_dict(self) -> dict:
        return {
            "bound": self.bound,
            "min_gamma": self.min_gamma,
            "gammas": self.gammas,
            "violations": self.violations,
            "steps": self.steps,
        }

    def write_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, sort_keys=True, indent=2)
            f.write("\n")

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write("# nosa-sim locality v1\n")
            w = csv.writer(f)
            w.writerow(["step", "gamma", "bound"])
            for t, g in zip(self.steps, self.gammas):
                w.writerow([t, repr(g), repr(self.bound)])


def _gamma_series(step_sets, positions, bound):
    report = LocalityReport(gammas=[], bound=bound, steps=[])
    for i in range(1, len(step_sets)):
        cur = step_sets[i]
        # An empty top-k set moves nothing; count it as fully overlapping.
        g = 1.0 if not cur else gamma(step_sets[i - 1], cur)
        report.gammas.append(g)
        report.steps.append(positions[i])
        if g < bound:
            report.violations.append(i)
    return report


def verify_locality_bound(
    trace: DecodeTrace, config: AttentionConfig | None = None, head: int = 0
) -> LocalityReport:
    """Check gamma(t) >= k_e_topk / (k_q + k_e_topk) over the top-k
    selection sets of a combined-selection trace.

    Fixed sink/recent blocks are excluded: the bound concerns the blocks
    the selector is free to move. Any violation is an implementation bug.
    """
    cfg = config or trace.config
    sets = [sel.topk_blocks for sel in trace.head_steps(head)]
    positions = [sel.step for sel in trace.head_steps(head)]
    return _gamma_series(sets, positions, cfg.locality_bound)


def baseline_locality(trace: DecodeTrace, head: int = 0, include_fixed: bool = False) -> LocalityReport:
    """Descriptive gamma series for a trace with no guarantee attached.

    With include_fixed the series covers all attended blocks (needed for
    configs whose free budget is zero); otherwise it covers the top-k sets,
    matching the bound check.
    """
    steps = trace.head_steps(head)
    if include_fixed:
        sets = [sel.attended_blocks for sel in steps]
    else:
        sets = [sel.topk_blocks for sel in steps]
    return _gamma_series(sets, [sel.step for sel in steps], bound=0.0)


def eviction_monotone_check(trace: DecodeTrace, head: int = 0):
    """Verify the never-readmit property of query-agnostic selection.

    For every pair t1 < t2 the query-agnostic set at t2 must sit inside
    the t1 set plus the blocks completed in between: once a block is
    dropped it can never come back, because complete blocks keep their
    compressed score forever. Returns (ok, first_violation) where the
    violation is (t1, t2, block) for the earliest offending pair.
    """
    n_b = trace.config.n_b
    steps = trace.head_steps(head)
    sets = [frozenset(sel.blocks_e) for sel in steps]
    positions = [sel.step for sel in steps]
    for i2 in range(1, len(sets)):
        for i1 in range(i2):
            t1, t2 = positions[i1], positions[i2]
            # blocks completed in (t1, t2]
            new = {b for b in sets[i2] if t1 < (b + 1) * n_b <= t2}
            extra = sets[i2] - sets[i1] - new
            if extra:
                return False, (t1, t2, min(extra))
    return True, None
