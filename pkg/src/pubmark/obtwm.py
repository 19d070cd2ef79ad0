"""Keyed-partition watermarking for numeric tables.

Rows are assigned to partitions by a keyed hash of their primary key; each
partition encodes one watermark bit as the sign of its (re-centered) mean.
Detection recovers the bits and takes a majority vote against the secret
bit string.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
from dataclasses import dataclass
from typing import Optional

from .crypto import frame

SECRET_FORMAT_VERSION = 1

DEFAULT_NUM_PARTITIONS = 32
DEFAULT_DELTA = 0.5
DEFAULT_VOTE_THRESHOLD = 0.8

Row = tuple[bytes, float]


class ObtError(Exception):
    pass


class EmptyPartitionError(ObtError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"partition {index} is empty")


@dataclass
class ObtSecret:
    key: bytes
    num_partitions: int
    bits: str
    delta: float
    vote_threshold: float = DEFAULT_VOTE_THRESHOLD
    id_aux: Optional[dict] = None

    def __post_init__(self):
        if self.num_partitions < 1:
            raise ObtError("num_partitions must be >= 1")
        if len(self.bits) != self.num_partitions:
            raise ObtError("bit string length must equal num_partitions")
        if set(self.bits) - {"0", "1"}:
            raise ObtError("bit string may only contain 0 and 1")

    def to_json(self) -> str:
        doc = {
            "version": SECRET_FORMAT_VERSION,
            "scheme": "obt",
            "K": base64.b64encode(self.key).decode(),
            "num_partitions": self.num_partitions,
            "wm": self.bits,
            "delta": self.delta,
            "vote_threshold": self.vote_threshold,
        }
        if self.id_aux is not None:
            doc["id_aux"] = self.id_aux
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ObtSecret":
        doc = json.loads(text)
        if doc.get("version") != SECRET_FORMAT_VERSION:
            raise ObtError(f"unsupported secret version {doc.get('version')!r}")
        return cls(
            key=base64.b64decode(doc["K"]),
            num_partitions=int(doc["num_partitions"]),
            bits=doc["wm"],
            delta=float(doc["delta"]),
            vote_threshold=float(doc.get("vote_threshold", DEFAULT_VOTE_THRESHOLD)),
            id_aux=doc.get("id_aux"),
        )


def gen_secret(
    key: bytes,
    rng_bits,
    num_partitions: int = DEFAULT_NUM_PARTITIONS,
    delta: float = DEFAULT_DELTA,
    vote_threshold: float = DEFAULT_VOTE_THRESHOLD,
) -> ObtSecret:
    """Build a secret with `num_partitions` watermark bits drawn from rng_bits.

    `rng_bits` is any callable returning 0/1 (e.g. random.Random.getrandbits(1)).
    """
    bits = "".join(str(rng_bits() & 1) for _ in range(num_partitions))
    return ObtSecret(key=key, num_partitions=num_partitions, bits=bits, delta=delta,
                     vote_threshold=vote_threshold)


def partition(pk: bytes, key: bytes, num_partitions: int) -> int:
    """Keyed partition index: SHA-256(frame(pk) || key) mod num_partitions."""
    if num_partitions < 1:
        raise ObtError("num_partitions must be >= 1")
    digest = hashlib.sha256(frame(pk) + key).digest()
    return int.from_bytes(digest, "big") % num_partitions


def _group_rows(table: list[Row], secret: ObtSecret) -> list[list[int]]:
    groups: list[list[int]] = [[] for _ in range(secret.num_partitions)]
    for idx, (pk, _) in enumerate(table):
        groups[partition(pk, secret.key, secret.num_partitions)].append(idx)
    return groups


def obt_insert(table: list[Row], secret: ObtSecret) -> list[Row]:
    """Embed the watermark: center each partition to mean zero, then shift it
    by +delta for a 1 bit or -delta for a 0 bit.

    Zero embedding strength is a no-op. Every partition must be non-empty.
    """
    pks = [pk for pk, _ in table]
    if len(set(pks)) != len(pks):
        raise ObtError("primary keys must be unique")
    if secret.delta == 0:
        return list(table)
    groups = _group_rows(table, secret)
    for p, rows in enumerate(groups):
        if not rows:
            raise EmptyPartitionError(p)
    out = list(table)
    for p, rows in enumerate(groups):
        mean = sum(table[i][1] for i in rows) / len(rows)
        shift = secret.delta if secret.bits[p] == "1" else -secret.delta
        for i in rows:
            pk, v = table[i]
            out[i] = (pk, v - mean + shift)
    return out


def recovered_bits(table: list[Row], secret: ObtSecret) -> str:
    """Read one bit per partition from the sign of its mean (reference mean 0).

    Empty partitions recover as 'x' and never match.
    """
    groups = _group_rows(table, secret)
    bits = []
    for rows in groups:
        if not rows:
            bits.append("x")
            continue
        mean = sum(table[i][1] for i in rows) / len(rows)
        bits.append("1" if mean > 0 else "0")
    return "".join(bits)


def obt_detect(table: list[Row], secret: ObtSecret, vote_threshold: Optional[float] = None) -> bool:
    if vote_threshold is None:
        vote_threshold = secret.vote_threshold
    got = recovered_bits(table, secret)
    matched = sum(1 for a, b in zip(got, secret.bits) if a == b)
    return matched >= vote_threshold * secret.num_partitions


# --- table file format: CSV with header "pk,value" ---


def serialize_table(table: list[Row]) -> bytes:
    buf = io.StringIO()
    buf.write("pk,value\n")
    for pk, v in table:
        buf.write(f"{pk.decode()},{v!r}\n")
    return buf.getvalue().encode()


def deserialize_table(blob: bytes) -> list[Row]:
    lines = blob.decode().splitlines()
    if not lines or lines[0] != "pk,value":
        raise ObtError('table must start with a "pk,value" header')
    rows: list[Row] = []
    for line in lines[1:]:
        if not line:
            continue
        pk, _, val = line.partition(",")
        if not _:
            raise ObtError(f"malformed row: {line!r}")
        try:
            rows.append((pk.encode(), float(val)))
        except ValueError as exc:
            raise ObtError(f"malformed value in row: {line!r}") from exc
    return rows


def load_table(path) -> list[Row]:
    with open(path, "rb") as fh:
        return deserialize_table(fh.read())


def save_table(path, table: list[Row]) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_table(table))
