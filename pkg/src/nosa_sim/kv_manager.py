"""Two-tier paged KV-block store.

Logical keys (batch, head, block_index) map to (tier, head, slot). Each
tier keeps one LIFO free list per head; a freed slot is reused first, which
keeps traces deterministic and slot reuse cache-friendly. The transfer
planner turns a step's required block set plus current residency into a
minimal move list: it fetches exactly the required blocks missing from the
fast tier and evicts least-recently-required fast blocks only when it needs
the room.

Payload storage is optional. With ``store_payload`` each tier holds a real
(num_blocks, heads, 2, n_b, d_head) array and transfers copy bytes; without
it only the tables move, which is what the throughput simulator uses.

Concurrency: one writer (the decode loop) per manager. Table mutations
happen one key at a time, so a concurrent reader never sees a key mapped
in two tiers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

FAST, SLOW = "fast", "slow"
_ELEMENT_DTYPES = {2: np.float16, 4: np.float32}


class ManagerError(Exception):
    pass


class OutOfBlocks(ManagerError):
    pass


class DuplicateKey(ManagerError):
    pass


class UnknownKey(ManagerError):
    pass


class CapacityExceeded(ManagerError):
    pass


class StalePlan(ManagerError):
    pass


class LayoutMismatch(ManagerError):
    pass


@dataclass(frozen=True)
class PhysicalLayout:
    """Slot geometry of one memory tier."""

    tier: str
    num_blocks: int          # slots per head
    heads: int
    n_b: int
    d_head: int
    element_width: int = 2   # bytes per element (2 or 4)

    def __post_init__(self):
        if self.tier not in (FAST, SLOW):
            raise ValueError(f"tier must be '{FAST}' or '{SLOW}'")
        if self.num_blocks < 0 or self.heads <= 0 or self.n_b <= 0 or self.d_head <= 0:
            raise ValueError("layout dimensions must be positive (num_blocks may be 0)")
        if self.element_width not in _ELEMENT_DTYPES:
            raise ValueError("element_width must be 2 or 4 bytes")

    @property
    def bytes_per_block(self) -> int:
        # K and V planes, n_b tokens each
        return 2 * self.n_b * self.d_head * self.element_width


@dataclass
class TransferPlan:
    """Moves needed to make a required set fast-resident."""

    fetch: list[tuple]       # logical keys slow -> fast
    evict: list[tuple]       # logical keys fast -> slow
    bytes_up: int
    bytes_down: int
    hits: int                # |required & fast-resident| at planning time
    misses: int              # == len(fetch)
    version: int             # manager table version the plan was built against

    @property
    def empty(self) -> bool:
        return not self.fetch and not self.evict


@dataclass
class ResidencyStats:
    hits: int = 0
    misses: int = 0
    bytes_up: int = 0
    bytes_down: int = 0
    steps: int = 0

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return 1.0 if total == 0 else self.hits / total

    def to_dict(self) -> dict:
        return {
            "hit_rate": self.hit_rate,
            "hits": self.hits,
            "misses": self.misses,
            "bytes_up": self.bytes_up,
            "bytes_down": self.bytes_down,
            "steps": self.steps,
        }


def least_recently_required(candidates, last_required):
    """Default victim order: oldest requirement first, then (batch, block)."""
    return sorted(candidates, key=lambda key: (last_required.get(key, 0), key[0], key[2]))


class TieredBlockManager:
    """Dual block tables over a fast and a slow tier.

    ``eviction_policy(candidates, last_required)`` orders eviction victims;
    the default is least-recently-required.
    """

    def __init__(self, fast: PhysicalLayout, slow: PhysicalLayout, store_payload: bool = False,
                 eviction_policy=least_recently_required):
        if fast.tier != FAST or slow.tier != SLOW:
            raise LayoutMismatch("pass layouts as (fast, slow)")
        self.eviction_policy = eviction_policy
        for attr in ("heads", "n_b", "d_head", "element_width"):
            if getattr(fast, attr) != getattr(slow, attr):
                raise LayoutMismatch(f"tiers disagree on {attr}")
        self.layouts = {FAST: fast, SLOW: slow}
        self.table: dict[tuple, tuple[str, int]] = {}   # key -> (tier, slot)
        self.free = {
            tier: [list(range(lay.num_blocks - 1, -1, -1)) for _ in range(lay.heads)]
            for tier, lay in self.layouts.items()
        }
        # per-head index of fast-resident keys, so planning avoids table scans
        self._fast_keys: list[set] = [set() for _ in range(fast.heads)]
        self.version = 0
        self.clock = 0
        self.last_required: dict[tuple, int] = {}
        self.stats = ResidencyStats()
        self.payload = None
        if store_payload:
            dtype = _ELEMENT_DTYPES[fast.element_width]
            self.payload = {
                tier: np.zeros((lay.num_blocks, lay.heads, 2, lay.n_b, lay.d_head), dtype=dtype)
                for tier, lay in self.layouts.items()
            }

    @property
    def bytes_per_block(self) -> int:
        return self.layouts[FAST].bytes_per_block

    # -- table operations ---------------------------------------------------

    def allocate(self, tier: str, batch: int, head: int, block_index: int) -> int:
        key = (batch, head, block_index)
        if key in self.table:
            raise DuplicateKey(f"{key} already mapped to {self.table[key]}")
        free = self.free[tier][head]
        if not free:
            raise OutOfBlocks(f"{tier} tier has no free slot for head {head}")
        slot = free.pop()
        self.table[key] = (tier, slot)
        if tier == FAST:
            self._fast_keys[head].add(key)
        self.version += 1
        return slot

    def lookup(self, batch: int, head: int, block_index: int):
        """(tier, head, slot) or None when the key is unmapped."""
        loc = self.table.get((batch, head, block_index))
        if loc is None:
            return None
        return (loc[0], head, loc[1])

    def free_block(self, batch: int, head: int, block_index: int):
        key = (batch, head, block_index)
        loc = self.table.pop(key, None)
        if loc is None:
            raise UnknownKey(f"{key} is not mapped")
        self.free[loc[0]][head].append(loc[1])
        if loc[0] == FAST:
            self._fast_keys[head].discard(key)
        self.last_required.pop(key, None)
        self.version += 1

    # -- transfer planning ---------------------------------------------------

    def plan_transfers(self, required, batch: int, head: int) -> TransferPlan:
        """Minimal move list making ``required`` fast-resident.

        Fetches required blocks missing from fast, evicting
        least-recently-required non-required fast blocks of the same head
        only as far as capacity demands. Updates the required-recency clock.
        """
        required = sorted(set(int(b) for b in required))
        self.clock += 1
        fast_cap = self.layouts[FAST].num_blocks
        if len(required) > fast_cap:
            raise CapacityExceeded(
                f"step requires {len(required)} blocks but the fast tier holds {fast_cap} per head"
            )
        fetch = []
        hits = 0
        for b in required:
            key = (batch, head, b)
            loc = self.table.get(key)
            if loc is None:
                raise UnknownKey(f"required block {key} exists in no tier")
            self.last_required[key] = self.clock
            if loc[0] == FAST:
                hits += 1
            else:
                fetch.append(key)

        evict = []
        shortfall = len(fetch) - len(self.free[FAST][head])
        if shortfall > 0:
            required_set = set(required)
            evictable = self.eviction_policy(
                [
                    key
                    for key in self._fast_keys[head]
                    if not (key[0] == batch and key[2] in required_set)
                ],
                self.last_required,
            )
            if shortfall > len(evictable):
                raise CapacityExceeded(
                    f"need {shortfall} evictions for head {head} but only {len(evictable)} blocks are evictable"
                )
            evict = evictable[:shortfall]

        bpb = self.bytes_per_block
        return TransferPlan(
            fetch=fetch,
            evict=evict,
            bytes_up=len(fetch) * bpb,
            bytes_down=len(evict) * bpb,
            hits=hits,
            misses=len(fetch),
            version=self.version,
        )

    def apply_transfers(self, plan: TransferPlan, mover=None):
        """Execute a plan: move evicted blocks down, fetched blocks up, and
        update the residency counters. Rejects plans built against an older
        table state."""
        if plan.version != self.version:
            raise StalePlan(
                f"plan was built at table version {plan.version}, manager is at {self.version}"
            )
        if mover is None:
            mover = self._default_mover
        for key in plan.evict:
            self._move(key, SLOW, mover)
        for key in plan.fetch:
            self._move(key, FAST, mover)
        self.stats.hits += plan.hits
        self.stats.misses += plan.misses
        self.stats.bytes_up += plan.bytes_up
        self.stats.bytes_down += plan.bytes_down
        self.stats.steps += 1

    def _move(self, key: tuple, dst_tier: str, mover):
        src_tier, src_slot = self.table[key]
        if src_tier == dst_tier:
            return
        head = key[1]
        free = self.free[dst_tier][head]
        if not free:
            raise OutOfBlocks(f"{dst_tier} tier has no free slot for head {head}")
        dst_slot = free.pop()
        mover(key, (src_tier, head, src_slot), (dst_tier, head, dst_slot))
        # single assignment: a reader observes the old or the new location
        self.table[key] = (dst_tier, dst_slot)
        self.free[src_tier][head].append(src_slot)
        if dst_tier == FAST:
            self._fast_keys[head].add(key)
        else:
            self._fast_keys[head].discard(key)
        self.version += 1

    def _default_mover(self, key, src, dst):
        if self.payload is None:
            return
        src_tier, head, src_slot = src
        dst_tier, _, dst_slot = dst
        self.payload[dst_tier][dst_slot, head] = self.payload[src_tier][src_slot, head]

    # -- payload access -------------------------------------------------------

    def write_block(self, batch: int, head: int, block_index: int, data: np.ndarray):
        if self.payload is None:
            raise ManagerError("manager was created without payload storage")
        loc = self.table.get((batch, head, block_index))
        if loc is None:
            raise UnknownKey(f"({batch}, {head}, {block_index}) is not mapped")
        self.payload[loc[0]][loc[1], head] = data

    def read_block(self, batch: int, head: int, block_index: int) -> np.ndarray:
        if self.payload is None:
            raise ManagerError("manager was created without payload storage")
        loc = self.table.get((batch, head, block_index))
        if loc is None:
            raise UnknownKey(f"({batch}, {head}, {block_index}) is not mapped")
        return self.payload[loc[0]][loc[1], head].copy()

    # -- statistics and auditing ----------------------------------------------

    def residency_stats(self) -> ResidencyStats:
        return self.stats

    def write_stats_json(self, path):
        with open(path, "w") as f:
            json.dump(self.stats.to_dict(), f, sort_keys=True, indent=2)
            f.write("\n")

    def reset_stats(self):
        self.stats = ResidencyStats()

    def fast_resident(self, batch: int, head: int) -> set[int]:
        return {key[2] for key in self._fast_keys[head] if key[0] == batch}

    def audit(self):
        """Verify the slot partition: per (tier, head), mapped slots and the
        free list are disjoint and together cover exactly the tier's slots."""
        for tier, lay in self.layouts.items():
            mapped = [[] for _ in range(lay.heads)]
            for (b, h, i), (tr, slot) in self.table.items():
                if tr == tier:
                    mapped[h].append(slot)
            for h in range(lay.heads):
                used = mapped[h]
                free = self.free[tier][h]
                if len(set(used)) != len(used):
                    raise ManagerError(f"{tier}/head{h}: duplicate slot mapping")
                overlap = set(used) & set(free)
                if overlap:
                    raise ManagerError(f"{tier}/head{h}: slots {overlap} both mapped and free")
                if set(used) | set(free) != set(range(lay.num_blocks)):
                    raise ManagerError(f"{tier}/head{h}: slot partition broken")
        index = {key for keys in self._fast_keys for key in keys}
        truth = {key for key, loc in self.table.items() if loc[0] == FAST}
        if index != truth:
            raise ManagerError("fast-key index out of sync with the table")
        return True

    def dump_table_csv(self, path):
        rows = sorted(self.table.items())
        with open(path, "w") as f:
            f.write("# nosa-sim block-table v1\n")
            f.write("batch,head,block_index,tier,slot\n")
            for (b, h, i), (tier, slot) in rows:
                f.write(f"{b},{h},{i},{tier},{slot}\n")
