"""Framed binary wire protocol between holder/owner clients and the prover.

Frame layout, all integers big-endian:

    [u32 length][u8 msg_type][payload]      length = 1 + len(payload)

Message payloads:

    0x01 REGISTER    id:32B, scheme:u8, share_len:u32, share, csec_len:u32, csec
                     (an optional 32B owner-auth tag may follow csec)
    0x02 ACK         (empty)
    0x03 ERR         code:u8
    0x10 RA_HELLO    client_nonce:32B
    0x11 RA_REPORT   measurement:32B, epk:32B, sig:64B
    0x12 RA_FINISH   client_epk:32B, mac:16B
    0x13 VERIFY_REQ  sealed blob; plaintext = id:32B, dw_len:u32, dw, tkh_len:u32, tkh
    0x14 VERIFY_RES  sealed blob; plaintext = res:u8 (optional timing extension after)
    0x15 ABORT       code:u8
    0x18 CACHE_QRY   id:32B, h:32B, sim:f64
    0x19 CACHE_RES   present:u8, res:u8
    0x20-0x25        two-party-computation rounds (see below)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

MAX_FRAME = 64 * 1024 * 1024
ID_LEN = 32


class WireError(Exception):
    pass


class MsgType(IntEnum):
    REGISTER = 0x01
    ACK = 0x02
    ERR = 0x03
    RA_HELLO = 0x10
    RA_REPORT = 0x11
    RA_FINISH = 0x12
    VERIFY_REQ = 0x13
    VERIFY_RES = 0x14
    ABORT = 0x15
    CACHE_QRY = 0x18
    CACHE_RES = 0x19
    GC_REQ = 0x20
    GC_ACCEPT = 0x21
    GC_PAYLOAD = 0x22
    OT_SETUP = 0x23
    OT_CHOICES = 0x24
    OT_REPLY = 0x25


class ErrCode(IntEnum):
    DUPLICATE = 0x01
    UNAUTHORIZED = 0x02
    MALFORMED = 0x03
    STORAGE = 0x04


class AbortCode(IntEnum):
    UNKNOWN_ID = 0x01
    ID_MISMATCH = 0x02
    AUTH_FAIL = 0x03
    MALFORMED = 0x04
    REPLAY = 0x05
    BAD_ENTRY = 0x06
    RATE_LIMITED = 0x07
    CIRCUIT_MISMATCH = 0x08
    INTERNAL = 0x09


def encode_frame(msg_type: int, payload: bytes) -> bytes:
    if len(payload) + 1 > MAX_FRAME:
        raise WireError("frame too large")
    return struct.pack(">IB", len(payload) + 1, msg_type) + payload


def split_frame(frame: bytes) -> tuple[int, bytes]:
    """Parse one complete frame into (msg_type, payload)."""
    if len(frame) < 5:
        raise WireError("frame shorter than header")
    length, msg_type = struct.unpack(">IB", frame[:5])
    if length < 1 or length > MAX_FRAME:
        raise WireError(f"bad frame length {length}")
    if len(frame) != 4 + length:
        raise WireError("frame length field does not match body")
    return msg_type, frame[5:]


def _recv_exact(sock, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            raise EOFError("peer closed connection")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def send_frame(sock, msg_type: int, payload: bytes) -> None:
    sock.sendall(encode_frame(msg_type, payload))


def recv_frame(sock) -> tuple[int, bytes]:
    header = _recv_exact(sock, 4)
    (length,) = struct.unpack(">I", header)
    if length < 1 or length > MAX_FRAME:
        raise WireError(f"bad frame length {length}")
    body = _recv_exact(sock, length)
    return body[0], body[1:]


def write_frame_io(fh, msg_type: int, payload: bytes) -> None:
    """Frame writer for pipe-like file objects (the enclave worker channel)."""
    fh.write(encode_frame(msg_type, payload))
    fh.flush()


def read_frame_io(fh) -> tuple[int, bytes]:
    header = fh.read(4)
    if not header:
        raise EOFError("channel closed")
    if len(header) != 4:
        raise WireError("truncated frame header")
    (length,) = struct.unpack(">I", header)
    if length < 1 or length > MAX_FRAME:
        raise WireError(f"bad frame length {length}")
    body = fh.read(length)
    if len(body) != length:
        raise WireError("truncated frame body")
    return body[0], body[1:]


def _take(payload: bytes, offset: int, n: int, what: str) -> tuple[bytes, int]:
    if offset + n > len(payload):
        raise WireError(f"truncated {what}")
    return payload[offset : offset + n], offset + n


def _take_u32(payload: bytes, offset: int, what: str) -> tuple[int, int]:
    raw, offset = _take(payload, offset, 4, what)
    return struct.unpack(">I", raw)[0], offset


# --- registration ---

SCHEME_CODES = {"freqywm": 1, "obt": 2}
SCHEME_NAMES = {v: k for k, v in SCHEME_CODES.items()}


@dataclass(frozen=True)
class Register:
    asset_id: bytes
    scheme: int
    share: bytes
    csec: bytes
    auth_tag: bytes = b""

    def encode(self) -> bytes:
        if len(self.asset_id) != ID_LEN:
            raise WireError("asset id must be 32 bytes")
        return (
            self.asset_id
            + struct.pack(">B", self.scheme)
            + struct.pack(">I", len(self.share))
            + self.share
            + struct.pack(">I", len(self.csec))
            + self.csec
            + self.auth_tag
        )

    @classmethod
    def decode(cls, payload: bytes) -> "Register":
        asset_id, off = _take(payload, 0, ID_LEN, "id")
        scheme_raw, off = _take(payload, off, 1, "scheme")
        share_len, off = _take_u32(payload, off, "share_len")
        share, off = _take(payload, off, share_len, "share")
        csec_len, off = _take_u32(payload, off, "csec_len")
        csec, off = _take(payload, off, csec_len, "csec")
        tail = payload[off:]
        if tail and len(tail) != 32:
            raise WireError("trailing bytes after csec are not a 32-byte auth tag")
        return cls(asset_id=asset_id, scheme=scheme_raw[0], share=share, csec=csec,
                   auth_tag=tail)


@dataclass(frozen=True)
class Err:
    code: int

    def encode(self) -> bytes:
        return struct.pack(">B", self.code)

    @classmethod
    def decode(cls, payload: bytes) -> "Err":
        if len(payload) != 1:
            raise WireError("ERR payload must be one byte")
        return cls(code=payload[0])


@dataclass(frozen=True)
class Abort:
    code: int

    def encode(self) -> bytes:
        return struct.pack(">B", self.code)

    @classmethod
    def decode(cls, payload: bytes) -> "Abort":
        if len(payload) != 1:
            raise WireError("ABORT payload must be one byte")
        return cls(code=payload[0])


# --- remote attestation ---


@dataclass(frozen=True)
class RaHello:
    client_nonce: bytes

    def encode(self) -> bytes:
        if len(self.client_nonce) != 32:
            raise WireError("client nonce must be 32 bytes")
        return self.client_nonce

    @classmethod
    def decode(cls, payload: bytes) -> "RaHello":
        if len(payload) != 32:
            raise WireError("RA_HELLO payload must be 32 bytes")
        return cls(client_nonce=payload)


@dataclass(frozen=True)
class RaReport:
    measurement: bytes
    epk: bytes
    sig: bytes

    def encode(self) -> bytes:
        if len(self.measurement) != 32 or len(self.epk) != 32 or len(self.sig) != 64:
            raise WireError("RA_REPORT field lengths must be 32/32/64")
        return self.measurement + self.epk + self.sig

    @classmethod
    def decode(cls, payload: bytes) -> "RaReport":
        if len(payload) != 128:
            raise WireError("RA_REPORT payload must be 128 bytes")
        return cls(measurement=payload[:32], epk=payload[32:64], sig=payload[64:])


@dataclass(frozen=True)
class RaFinish:
    client_epk: bytes
    mac: bytes

    def encode(self) -> bytes:
        if len(self.client_epk) != 32 or len(self.mac) != 16:
            raise WireError("RA_FINISH field lengths must be 32/16")
        return self.client_epk + self.mac

    @classmethod
    def decode(cls, payload: bytes) -> "RaFinish":
        if len(payload) != 48:
            raise WireError("RA_FINISH payload must be 48 bytes")
        return cls(client_epk=payload[:32], mac=payload[32:])


# --- verification (plaintext layouts of the sealed payloads) ---


def encode_verify_request(asset_id: bytes, dw: bytes, tkh: bytes) -> bytes:
    if len(asset_id) != ID_LEN:
        raise WireError("asset id must be 32 bytes")
    return (
        asset_id
        + struct.pack(">I", len(dw))
        + dw
        + struct.pack(">I", len(tkh))
        + tkh
    )


def decode_verify_request(plaintext: bytes) -> tuple[bytes, bytes, bytes]:
    asset_id, off = _take(plaintext, 0, ID_LEN, "id")
    dw_len, off = _take_u32(plaintext, off, "dw_len")
    dw, off = _take(plaintext, off, dw_len, "dw")
    tkh_len, off = _take_u32(plaintext, off, "tkh_len")
    tkh, off = _take(plaintext, off, tkh_len, "tkh")
    if off != len(plaintext):
        raise WireError("trailing bytes in verify request")
    return asset_id, dw, tkh


def encode_verify_result(res: int, timings: tuple[float, float] | None = None) -> bytes:
    """res byte plus an optional 16-byte timing extension
    (reconstruct seconds, detect seconds)."""
    out = struct.pack(">B", res)
    if timings is not None:
        out += struct.pack(">dd", *timings)
    return out


def decode_verify_result(plaintext: bytes) -> tuple[int, tuple[float, float] | None]:
    if not plaintext:
        raise WireError("empty verify result")
    res = plaintext[0]
    if len(plaintext) == 1:
        return res, None
    if len(plaintext) == 17:
        return res, struct.unpack(">dd", plaintext[1:])
    raise WireError("verify result has unexpected length")


# --- cache front-end ---


@dataclass(frozen=True)
class CacheQry:
    asset_id: bytes
    h: bytes
    sim: float

    def encode(self) -> bytes:
        if len(self.asset_id) != ID_LEN or len(self.h) != 32:
            raise WireError("CACHE_QRY id and h must be 32 bytes")
        return self.asset_id + self.h + struct.pack(">d", self.sim)

    @classmethod
    def decode(cls, payload: bytes) -> "CacheQry":
        if len(payload) != 72:
            raise WireError("CACHE_QRY payload must be 72 bytes")
        (sim,) = struct.unpack(">d", payload[64:])
        if not 0.0 <= sim <= 100.0:
            raise WireError("similarity out of range")
        return cls(asset_id=payload[:32], h=payload[32:64], sim=sim)


@dataclass(frozen=True)
class CacheRes:
    present: int
    res: int

    def encode(self) -> bytes:
        return struct.pack(">BB", self.present, self.res)

    @classmethod
    def decode(cls, payload: bytes) -> "CacheRes":
        if len(payload) != 2:
            raise WireError("CACHE_RES payload must be 2 bytes")
        return cls(present=payload[0], res=payload[1])


# --- two-party computation rounds ---


@dataclass(frozen=True)
class GcReq:
    asset_id: bytes
    circuit_hash: bytes

    def encode(self) -> bytes:
        if len(self.asset_id) != ID_LEN or len(self.circuit_hash) != 32:
            raise WireError("GC_REQ fields must be 32 bytes each")
        return self.asset_id + self.circuit_hash

    @classmethod
    def decode(cls, payload: bytes) -> "GcReq":
        if len(payload) != 64:
            raise WireError("GC_REQ payload must be 64 bytes")
        return cls(asset_id=payload[:32], circuit_hash=payload[32:])


@dataclass(frozen=True)
class GcAccept:
    circuit_hash: bytes

    def encode(self) -> bytes:
        if len(self.circuit_hash) != 32:
            raise WireError("circuit hash must be 32 bytes")
        return self.circuit_hash

    @classmethod
    def decode(cls, payload: bytes) -> "GcAccept":
        if len(payload) != 32:
            raise WireError("GC_ACCEPT payload must be 32 bytes")
        return cls(circuit_hash=payload)


@dataclass(frozen=True)
class GcPayload:
    """Garbled tables, output decode bits, and the garbler's input labels."""

    tables: list[bytes]
    decode_bits: bytes
    garbler_labels: list[bytes]

    def encode(self) -> bytes:
        for t in self.tables:
            if len(t) != 32:
                raise WireError("each garbled table must be 32 bytes")
        for lab in self.garbler_labels:
            if len(lab) != 16:
                raise WireError("labels must be 16 bytes")
        return (
            struct.pack(">I", len(self.tables))
            + b"".join(self.tables)
            + struct.pack(">I", len(self.decode_bits))
            + self.decode_bits
            + struct.pack(">I", len(self.garbler_labels))
            + b"".join(self.garbler_labels)
        )

    @classmethod
    def decode(cls, payload: bytes) -> "GcPayload":
        n_tables, off = _take_u32(payload, 0, "table count")
        raw, off = _take(payload, off, 32 * n_tables, "tables")
        tables = [raw[i : i + 32] for i in range(0, len(raw), 32)]
        n_dec, off = _take_u32(payload, off, "decode length")
        decode_bits, off = _take(payload, off, n_dec, "decode bits")
        n_labels, off = _take_u32(payload, off, "label count")
        raw, off = _take(payload, off, 16 * n_labels, "labels")
        if off != len(payload):
            raise WireError("trailing bytes in GC_PAYLOAD")
        labels = [raw[i : i + 16] for i in range(0, len(raw), 16)]
        return cls(tables=tables, decode_bits=decode_bits, garbler_labels=labels)


@dataclass(frozen=True)
class OtSetup:
    sender_point: bytes

    def encode(self) -> bytes:
        return struct.pack(">I", len(self.sender_point)) + self.sender_point

    @classmethod
    def decode(cls, payload: bytes) -> "OtSetup":
        n, off = _take_u32(payload, 0, "point length")
        point, off = _take(payload, off, n, "point")
        if off != len(payload):
            raise WireError("trailing bytes in OT_SETUP")
        return cls(sender_point=point)


@dataclass(frozen=True)
class OtChoices:
    points: list[bytes]

    def encode(self) -> bytes:
        if not self.points:
            raise WireError("OT_CHOICES needs at least one point")
        elem = len(self.points[0])
        if any(len(p) != elem for p in self.points):
            raise WireError("OT points must share one length")
        return struct.pack(">II", len(self.points), elem) + b"".join(self.points)

    @classmethod
    def decode(cls, payload: bytes) -> "OtChoices":
        if len(payload) < 8:
            raise WireError("truncated OT_CHOICES")
        count, elem = struct.unpack(">II", payload[:8])
        if count < 1 or elem < 1 or len(payload) != 8 + count * elem:
            raise WireError("malformed OT_CHOICES")
        body = payload[8:]
        return cls(points=[body[i * elem : (i + 1) * elem] for i in range(count)])


@dataclass(frozen=True)
class OtReply:
    """Per transfer: two 16-byte encrypted labels, each with a 16-byte tag."""

    pairs: list[tuple[bytes, bytes, bytes, bytes]]

    def encode(self) -> bytes:
        out = [struct.pack(">I", len(self.pairs))]
        for e0, t0, e1, t1 in self.pairs:
            if any(len(x) != 16 for x in (e0, t0, e1, t1)):
                raise WireError("OT reply fields must be 16 bytes")
            out.append(e0 + t0 + e1 + t1)
        return b"".join(out)

    @classmethod
    def decode(cls, payload: bytes) -> "OtReply":
        count, off = _take_u32(payload, 0, "reply count")
        if len(payload) != 4 + count * 64:
            raise WireError("malformed OT_REPLY")
        pairs = []
        for i in range(count):
            base = 4 + i * 64
            chunk = payload[base : base + 64]
            pairs.append((chunk[:16], chunk[16:32], chunk[32:48], chunk[48:64]))
        return cls(pairs=pairs)
