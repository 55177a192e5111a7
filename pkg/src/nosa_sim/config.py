"""Dimensional and budget hyperparameters for block-sparse decoding."""

from __future__ import annotations

from dataclasses import dataclass, asdict

# How sink/window tokens are charged against the selection budget k.
#   "inclusive": sink and window live inside k; the free top-k budgets are
#                k_q query-aware tokens and k - n_s - n_w - k_q query-agnostic.
#   "exclusive": sink and window are attended on top of k; the free budgets
#                are k_q and k_e = k - k_q.
ACCOUNTING_MODES = ("inclusive", "exclusive")


@dataclass(frozen=True)
class AttentionConfig:
    """All shape and budget hyperparameters for one decoding setup.

    ``k = k_q + k_e`` always holds; ``accounting`` decides whether the
    always-attended sink/window tokens consume part of k (see module
    comment). ``k_e_topk`` is the effective query-agnostic top-k budget
    under the chosen accounting.
    """

    n: int                      # sequence length (tokens)
    d: int                      # model width
    n_head: int                 # query heads
    n_kv_head: int              # KV heads
    d_head: int                 # head width
    n_b: int                    # block size (tokens)
    n_s: int                    # attention sink length (tokens)
    n_w: int                    # sliding window length (tokens)
    k: int                      # total selection budget (tokens)
    k_q: int                    # query-aware budget (tokens)
    k_e: int                    # query-agnostic budget (tokens)
    accounting: str = "inclusive"

    def __post_init__(self):
        if self.n_b <= 0:
            raise ValueError("n_b must be positive")
        if self.k != self.k_q + self.k_e:
            raise ValueError(f"k must equal k_q + k_e ({self.k} != {self.k_q} + {self.k_e})")
        for name in ("n_s", "n_w", "k", "k_q", "k_e"):
            v = getattr(self, name)
            if v < 0:
                raise ValueError(f"{name} must be non-negative")
            if v % self.n_b != 0:
                raise ValueError(f"{name}={v} must be divisible by n_b={self.n_b}")
        if not (self.n_s + self.n_w <= self.k <= self.n):
            raise ValueError(
                f"need n_s + n_w <= k <= n, got n_s+n_w={self.n_s + self.n_w}, k={self.k}, n={self.n}"
            )
        if self.n_head <= 0 or self.n_kv_head <= 0 or self.n_head % self.n_kv_head != 0:
            raise ValueError(
                f"n_head={self.n_head} must be a positive multiple of n_kv_head={self.n_kv_head}"
            )
        if self.d_head <= 0 or self.d <= 0:
            raise ValueError("d and d_head must be positive")
        if self.accounting not in ACCOUNTING_MODES:
            raise ValueError(f"accounting must be one of {ACCOUNTING_MODES}")
        if self.k_e_topk < 0:
            raise ValueError(
                "inclusive accounting needs k_q <= k - n_s - n_w "
                f"(k_q={self.k_q}, k - n_s - n_w = {self.k - self.n_s - self.n_w})"
            )

    @property
    def group_size(self) -> int:
        """Query heads sharing one KV head."""
        return self.n_head // self.n_kv_head

    @property
    def k_e_topk(self) -> int:
        """Effective query-agnostic top-k budget in tokens."""
        if self.accounting == "inclusive":
            return self.k - self.n_s - self.n_w - self.k_q
        return self.k_e

    @property
    def topk_budget(self) -> int:
        """Total free top-k budget in tokens (query-aware + query-agnostic)."""
        return self.k_q + self.k_e_topk

    @property
    def blocks_q(self) -> int:
        return self.k_q // self.n_b

    @property
    def blocks_e(self) -> int:
        return self.k_e_topk // self.n_b

    @property
    def blocks_topk(self) -> int:
        return self.blocks_q + self.blocks_e

    @property
    def locality_bound(self) -> float:
        """Guaranteed step-to-step overlap of the top-k selection sets."""
        if self.topk_budget == 0:
            return 1.0
        return self.k_e_topk / self.topk_budget

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AttentionConfig":
        return cls(**d)
