"""Verification-result memoization: MinHash bucketing, Jaccard similarity,
and the similarity-proportional cache with its plain-LRU baseline.

Cache positions run from 0 (head, most protected) to capacity-1 (tail, next
evicted). A positive result is placed near the head when its similarity is
low, a negative result when its similarity is high; both placements follow
the interval-shifting position function below.
"""

from __future__ import annotations

import hashlib
import io
import random
from dataclasses import dataclass
from math import floor
from typing import Iterable, Optional

import numpy as np

_MERSENNE = (1 << 61) - 1
_EMPTY_SENTINEL = b"\x00" * 32

DEFAULT_NUM_PERM = 128
# Rows hashed into the bucket key. One row makes the bucket-collision rate for
# two assets equal their Jaccard similarity (0.95-similar assets collide at
# 0.95), while disjoint assets essentially never collide.
DEFAULT_BAND_ROWS = 1
DEFAULT_CACHE_THRESHOLD = 70.0


@dataclass(frozen=True)
class MinHashParams:
    num_perm: int = DEFAULT_NUM_PERM
    band_rows: int = DEFAULT_BAND_ROWS
    seed: int = 1

    def __post_init__(self):
        if self.num_perm < 1:
            raise ValueError("num_perm must be >= 1")
        if not 1 <= self.band_rows <= self.num_perm:
            raise ValueError("band_rows must be in [1, num_perm]")


def _token_hashes(tokens: Iterable[bytes], seed: int) -> np.ndarray:
    salt = seed.to_bytes(8, "big")
    vals = {
        int.from_bytes(hashlib.blake2b(tok, digest_size=4, key=salt).digest(), "big")
        for tok in tokens
    }
    return np.fromiter(vals, dtype=np.uint64, count=len(vals))


def minhash_signature(tokens: Iterable[bytes], params: MinHashParams = MinHashParams()) -> np.ndarray:
    """MinHash signature over the token set: one keyed minimum per permutation."""
    base = _token_hashes(tokens, params.seed)
    if base.size == 0:
        return np.zeros(params.num_perm, dtype=np.uint64)
    rng = random.Random(params.seed)
    # 31-bit coefficients over 32-bit token hashes keep a*x+b below 2**64, so
    # the modular reduction is exact in uint64.
    a = np.array([rng.randrange(1, 1 << 31) for _ in range(params.num_perm)], dtype=np.uint64)
    b = np.array([rng.randrange(0, 1 << 31) for _ in range(params.num_perm)], dtype=np.uint64)
    prods = (a[:, None] * base[None, :] + b[:, None]) % np.uint64(_MERSENNE)
    return prods.min(axis=1)


def minhash(tokens: Iterable[bytes], params: MinHashParams = MinHashParams()) -> bytes:
    """32-byte bucket key: hash of the first `band_rows` signature slots.

    Empty inputs map to the all-zero sentinel.
    """
    toks = list(tokens)
    if not toks:
        return _EMPTY_SENTINEL
    sig = minhash_signature(toks, params)
    band = sig[: params.band_rows].tobytes()
    return hashlib.sha256(b"minhash-band" + band).digest()


def jaccard(tokens_a: Iterable[bytes], tokens_b: Iterable[bytes]) -> float:
    """Set similarity as a percentage; two empty sets count as identical."""
    sa, sb = set(tokens_a), set(tokens_b)
    if not sa and not sb:
        return 100.0
    union = len(sa | sb)
    return 100.0 * len(sa & sb) / union


def position(res: int, sim: float, capacity: int) -> int:
    """Cache slot for a result: floor of the interval-shifted similarity,
    clamped into [0, capacity-1].

    res=1 maps sim 0 -> head and sim 100 -> tail; res=0 runs the other way
    (its raw range is [1, capacity], hence the clamp).
    """
    if capacity < 1:
        raise ValueError("capacity must be >= 1")
    if not 0 <= sim <= 100:
        raise ValueError("similarity must be in [0, 100]")
    if res == 1:
        raw = (capacity - 1) * sim / 100.0
    else:
        raw = capacity - (capacity - 1) * sim / 100.0
    return max(0, min(capacity - 1, floor(raw)))


@dataclass(eq=False)
class CacheEntry:
    h: bytes
    asset_id: bytes
    res: int
    sim: float


class ProportionalCache:
    """Similarity-proportional LRU variant.

    Serves a cached result only when the stored entry dominates the query:
    a stored positive at similarity >= the query's, or a stored negative at
    similarity <= the query's (the literal serving rule). `rule="monotone"`
    flips the positive branch to the generalizing reading, where a low-sim
    positive answers higher-sim queries.
    """

    def __init__(self, capacity: int, threshold: float = DEFAULT_CACHE_THRESHOLD,
                 rule: str = "literal"):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if rule not in ("literal", "monotone"):
            raise ValueError(f"unknown serving rule {rule!r}")
        self.capacity = capacity
        self.threshold = threshold
        self.rule = rule
        self._entries: list[CacheEntry] = []
        self._index: dict[tuple[bytes, bytes], CacheEntry] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def _reposition(self, entry: CacheEntry) -> None:
        self._entries.remove(entry)
        pos = position(entry.res, entry.sim, self.capacity)
        self._entries.insert(min(pos, len(self._entries)), entry)

    def get(self, h: bytes, asset_id: bytes, sim: float) -> Optional[int]:
        entry = self._index.get((h, asset_id))
        if entry is None:
            return None
        if entry.res == 1:
            served = entry.sim >= sim if self.rule == "literal" else entry.sim <= sim
        else:
            served = entry.sim <= sim
        if not served:
            return None
        self._reposition(entry)
        return entry.res

    def put(self, entry: CacheEntry) -> Optional[CacheEntry]:
        """Admit an entry; returns the evicted entry if the tail was dropped.

        Sub-threshold similarities are discarded. A duplicate (h, id) keeps the
        lower-similarity entry for positive results and the higher-similarity
        entry for negative ones.
        """
        if entry.sim < self.threshold:
            return None
        key = (entry.h, entry.asset_id)
        existing = self._index.get(key)
        if existing is not None:
            if entry.res == 1:
                replace = entry.sim < existing.sim
            else:
                replace = entry.sim > existing.sim
            if replace:
                self._entries.remove(existing)
                self._index[key] = entry
                pos = position(entry.res, entry.sim, self.capacity)
                self._entries.insert(min(pos, len(self._entries)), entry)
            return None
        evicted = None
        if len(self._entries) >= self.capacity:
            evicted = self._entries.pop()
            del self._index[(evicted.h, evicted.asset_id)]
        pos = position(entry.res, entry.sim, self.capacity)
        self._entries.insert(min(pos, len(self._entries)), entry)
        self._index[key] = entry
        return evicted

    def snapshot_csv(self) -> str:
        buf = io.StringIO()
        buf.write("h_hex,id_hex,res,sim,position\n")
        for pos, e in enumerate(self._entries):
            buf.write(f"{e.h.hex()},{e.asset_id.hex()},{e.res},{e.sim},{pos}\n")
        return buf.getvalue()


class LruTripleCache:
    """Plain LRU keyed on the full (h, id, sim) triple; no similarity logic."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._entries: dict[tuple[bytes, bytes, float], int] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, h: bytes, asset_id: bytes, sim: float) -> Optional[int]:
        key = (h, asset_id, sim)
        if key not in self._entries:
            return None
        res = self._entries.pop(key)
        self._entries[key] = res
        return res

    def put(self, h: bytes, asset_id: bytes, res: int, sim: float) -> None:
        key = (h, asset_id, sim)
        if key in self._entries:
            self._entries.pop(key)
        elif len(self._entries) >= self.capacity:
            oldest = next(iter(self._entries))
            del self._entries[oldest]
        self._entries[key] = res
