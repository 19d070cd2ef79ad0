"""Frequency-histogram watermarking for token datasets.

A watermark is a list of token pairs whose frequency difference satisfies a
keyed congruence. Detection recomputes each pair's selector from the keyed
hash and counts how many congruences hold; insertion greedily duplicates
tokens until enough pairs satisfy their congruence.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional

from .crypto import frame

SECRET_FORMAT_VERSION = 1

DEFAULT_MODULUS = 257
DEFAULT_NUM_PAIRS = 30
DEFAULT_TOLERANCE = 0

# How many frequency-neighbours each token is paired with when building the
# candidate pool for greedy insertion.
_CANDIDATE_WINDOW = 8


class WatermarkError(Exception):
    pass


class InsertBudgetError(WatermarkError):
    """Edit budget ran out before the requested number of pairs was embedded."""

    def __init__(self, achieved: list[tuple[bytes, bytes]], requested: int, budget: int):
        self.achieved = achieved
        super().__init__(
            f"budget {budget} exhausted after {len(achieved)}/{requested} pairs"
        )


@dataclass
class FreqySecret:
    """Watermarking secret: ordered token pairs, a 32-byte key, and the modulus.

    Detection parameters ride along so the verifying side needs nothing else;
    `id_aux` carries the (owner label, date) inputs used to derive the asset id.
    """

    pairs: list[tuple[bytes, bytes]]
    key: bytes
    modulus: int
    tolerance: int = DEFAULT_TOLERANCE
    min_pairs: Optional[int] = None
    id_aux: Optional[dict] = None

    def detect_params(self) -> "DetectParams":
        k = self.min_pairs if self.min_pairs is not None else default_min_pairs(len(self.pairs))
        return DetectParams(tolerance=self.tolerance, min_pairs=k)

    def to_json(self) -> str:
        doc = {
            "version": SECRET_FORMAT_VERSION,
            "scheme": "freqywm",
            "K": base64.b64encode(self.key).decode(),
            "z": self.modulus,
            "pairs": [
                [base64.b64encode(a).decode(), base64.b64encode(b).decode()]
                for a, b in self.pairs
            ],
            "t": self.tolerance,
            "k": self.min_pairs,
        }
        if self.id_aux is not None:
            doc["id_aux"] = self.id_aux
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FreqySecret":
        doc = json.loads(text)
        if doc.get("version") != SECRET_FORMAT_VERSION:
            raise WatermarkError(f"unsupported secret version {doc.get('version')!r}")
        return cls(
            pairs=[
                (base64.b64decode(a), base64.b64decode(b)) for a, b in doc["pairs"]
            ],
            key=base64.b64decode(doc["K"]),
            modulus=int(doc["z"]),
            tolerance=int(doc.get("t", DEFAULT_TOLERANCE)),
            min_pairs=doc.get("k"),
            id_aux=doc.get("id_aux"),
        )


@dataclass(frozen=True)
class DetectParams:
    tolerance: int = DEFAULT_TOLERANCE
    min_pairs: int = 1

    def __post_init__(self):
        if self.tolerance < 0:
            raise WatermarkError("tolerance must be non-negative")
        if self.min_pairs < 1:
            raise WatermarkError("min_pairs must be at least 1")


def default_min_pairs(num_pairs: int) -> int:
    return max(1, math.ceil(0.6 * num_pairs))


def preprocess(dataset: Iterable[bytes]) -> Counter:
    """Exact multiset frequency count. Order-insensitive; empty in, empty out."""
    return Counter(dataset)


def pair_selector(token_a: bytes, token_b: bytes, key: bytes, modulus: int) -> int:
    """Keyed per-pair selector in [1, modulus].

    SHA-256 over the length-framed tokens plus the key, reduced mod `modulus`.
    A zero residue would make the congruence check ill-defined, so it maps to
    `modulus` instead.
    """
    if modulus < 2:
        raise WatermarkError(f"modulus must be >= 2, got {modulus}")
    digest = hashlib.sha256(frame(token_a) + frame(token_b) + key).digest()
    residue = int.from_bytes(digest, "big") % modulus
    return residue if residue != 0 else modulus


def _pair_cost(freq_a: int, freq_b: int, selector: int, tolerance: int) -> int:
    """Minimum token duplications needed so (f_a - f_b) mod s <= t."""
    d = (freq_a - freq_b) % selector
    if d <= tolerance:
        return 0
    # Either push the residue down to t (duplicate token_b) or wrap it up to
    # zero (duplicate token_a).
    return min(d - tolerance, selector - d)


def _apply_pair_edit(hist: Counter, pair: tuple[bytes, bytes], selector: int, tolerance: int) -> int:
    a, b = pair
    d = (hist[a] - hist[b]) % selector
    if d <= tolerance:
        return 0
    down = d - tolerance
    up = selector - d
    if down <= up:
        hist[b] += down
        return down
    hist[a] += up
    return up


def insert(
    dataset: list[bytes],
    key: bytes,
    modulus: int = DEFAULT_MODULUS,
    num_pairs: int = DEFAULT_NUM_PAIRS,
    tolerance: int = DEFAULT_TOLERANCE,
    budget: Optional[int] = None,
) -> tuple[list[bytes], FreqySecret]:
    """Embed `num_pairs` congruence pairs by duplicating tokens, greedily.

    Pairs are chosen disjoint (no token reused across pairs) so later edits
    cannot disturb earlier pairs. Candidates come from pairing each token with
    its frequency-neighbours; the cheapest edits are taken first. Spends at
    most `budget` duplications (default: num_pairs * modulus, which always
    suffices) and raises InsertBudgetError listing the achieved pairs if the
    budget runs out early.
    """
    if budget is None:
        budget = num_pairs * modulus
    if budget < 0:
        raise WatermarkError("budget must be non-negative")
    hist = preprocess(dataset)
    tokens = sorted(hist, key=lambda tok: (-hist[tok], tok))
    if len(tokens) < 2 * num_pairs:
        raise WatermarkError(
            f"need at least {2 * num_pairs} distinct tokens, have {len(tokens)}"
        )

    candidates = []
    for i, tok_a in enumerate(tokens):
        for j in range(i + 1, min(i + 1 + _CANDIDATE_WINDOW, len(tokens))):
            tok_b = tokens[j]
            s = pair_selector(tok_a, tok_b, key, modulus)
            cost = _pair_cost(hist[tok_a], hist[tok_b], s, tolerance)
            candidates.append((cost, i, j, tok_a, tok_b, s))
    candidates.sort(key=lambda c: (c[0], c[1], c[2]))

    chosen: list[tuple[bytes, bytes]] = []
    used: set[bytes] = set()
    spent = 0
    for cost, _, _, tok_a, tok_b, s in candidates:
        if len(chosen) == num_pairs:
            break
        if tok_a in used or tok_b in used:
            continue
        if spent + cost > budget:
            raise InsertBudgetError(chosen, num_pairs, budget)
        spent += _apply_pair_edit(hist, (tok_a, tok_b), s, tolerance)
        chosen.append((tok_a, tok_b))
        used.add(tok_a)
        used.add(tok_b)

    if len(chosen) < num_pairs:
        # Window-based candidates ran dry; pair off remaining tokens in order.
        leftovers = [tok for tok in tokens if tok not in used]
        for tok_a, tok_b in zip(leftovers[0::2], leftovers[1::2]):
            if len(chosen) == num_pairs:
                break
            s = pair_selector(tok_a, tok_b, key, modulus)
            cost = _pair_cost(hist[tok_a], hist[tok_b], s, tolerance)
            if spent + cost > budget:
                raise InsertBudgetError(chosen, num_pairs, budget)
            spent += _apply_pair_edit(hist, (tok_a, tok_b), s, tolerance)
            chosen.append((tok_a, tok_b))

    watermarked = list(dataset)
    original = preprocess(dataset)
    for tok in hist:
        extra = hist[tok] - original[tok]
        if extra > 0:
            watermarked.extend([tok] * extra)

    secret = FreqySecret(pairs=chosen, key=key, modulus=modulus, tolerance=tolerance)
    return watermarked, secret


def detect_count(histogram: Counter, secret: FreqySecret, tolerance: int) -> int:
    """Number of watermark pairs whose congruence holds in the histogram.

    Pairs with either token absent do not count.
    """
    count = 0
    for tok_a, tok_b in secret.pairs:
        if tok_a not in histogram or tok_b not in histogram:
            continue
        s = pair_selector(tok_a, tok_b, secret.key, secret.modulus)
        if (histogram[tok_a] - histogram[tok_b]) % s <= tolerance:
            count += 1
    return count


def detect(dataset: Iterable[bytes], secret: FreqySecret, params: DetectParams) -> bool:
    hist = preprocess(dataset)
    return detect_count(hist, secret, params.tolerance) >= params.min_pairs


# --- dataset file format: newline-delimited UTF-8 tokens ---


def load_dataset(path) -> list[bytes]:
    with open(path, "r", encoding="utf-8") as fh:
        return [line.rstrip("\n").encode() for line in fh if line.rstrip("\n")]


def save_dataset(path, dataset: list[bytes]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok in dataset:
            fh.write(tok.decode() + "\n")


def serialize_dataset(dataset: list[bytes]) -> bytes:
    return b"\n".join(dataset)


def deserialize_dataset(blob: bytes) -> list[bytes]:
    return [tok for tok in blob.split(b"\n") if tok]
