"""Owner and holder flows.

The owner watermarks an asset, derives the token pair, registers the prover
side, and hands the holder a bundle that suffices for verification with no
further owner contact. The holder drives the cache query plus the enclave or
two-party verification session and reports Valid/Invalid with a five-task
timing breakdown.
"""

from __future__ import annotations

import base64
import datetime as _dt
import hashlib
import hmac as hmac_mod
import json
import os
import random
import socket
import time
from dataclasses import dataclass, field
from typing import Optional

from . import cache as cache_mod
from . import crypto, freqywm, obtwm, wire
from .config import FreqyParams, ObtParams, TwoPcParams
from .enclave import AttestationError, AttestationReport, HolderSession, verify_program
from .gc.circuit import (
    ReducedVerifyParams,
    build_verify_circuit,
    pack_selectors,
    verify_holder_bits,
)
from .gc.twopc import TwoPcError, run_evaluator
from .wire import MsgType

BUNDLE_VERSION = 1

TASKS = (
    "establish_session",
    "receive_data",
    "reconstruct_secret",
    "detect_watermark",
    "terminate_session",
)


class ClientError(Exception):
    pass


class RegistrationError(ClientError):
    pass


class ProtocolError(ClientError):
    def __init__(self, message: str, abort_code: Optional[int] = None):
        self.abort_code = abort_code
        super().__init__(message)


@dataclass
class OwnershipBundle:
    asset_id: bytes
    scheme: str
    mode: str
    tk_h: bytes
    asset_path: str
    prover: str
    measurement: bytes
    manufacturer_pvk: bytes
    license_text: str = ""
    twopc: Optional[dict] = None

    def to_json(self) -> str:
        doc = {
            "version": BUNDLE_VERSION,
            "id": self.asset_id.hex(),
            "tk_h": base64.b64encode(self.tk_h).decode(),
            "scheme": self.scheme,
            "asset_path": self.asset_path,
            "mode": self.mode,
            "prover": self.prover,
            "measurement": self.measurement.hex(),
            "manufacturer_pvk": base64.b64encode(self.manufacturer_pvk).decode(),
            "license": self.license_text,
        }
        if self.twopc is not None:
            doc["twopc"] = self.twopc
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "OwnershipBundle":
        doc = json.loads(text)
        if doc.get("version") != BUNDLE_VERSION:
            raise ClientError(f"unsupported bundle version {doc.get('version')!r}")
        return cls(
            asset_id=bytes.fromhex(doc["id"]),
            scheme=doc["scheme"],
            mode=doc["mode"],
            tk_h=base64.b64decode(doc["tk_h"]),
            asset_path=doc["asset_path"],
            prover=doc["prover"],
            measurement=bytes.fromhex(doc.get("measurement", "")),
            manufacturer_pvk=base64.b64decode(doc.get("manufacturer_pvk", "")),
            license_text=doc.get("license", ""),
            twopc=doc.get("twopc"),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "OwnershipBundle":
        with open(path) as fh:
            return cls.from_json(fh.read())


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ClientError(f"prover address must be host:port, got {addr!r}")
    return host, int(port)


def tokenize(scheme: str, blob: bytes) -> list[bytes]:
    """Asset bytes to the token multiset used for similarity and bucketing."""
    if scheme == "freqywm":
        return freqywm.deserialize_dataset(blob)
    rows = obtwm.deserialize_table(blob)
    return [pk + b"," + repr(v).encode() for pk, v in rows]


def _asset_bytes(scheme: str, path) -> bytes:
    if scheme == "freqywm":
        return freqywm.serialize_dataset(freqywm.load_dataset(path))
    return obtwm.serialize_table(obtwm.load_table(path))


def register_with_prover(
    prover: str, record_payload: bytes, timeout: float = 10.0
) -> None:
    host, port = parse_addr(prover)
    try:
        with socket.create_connection((host, port), timeout=timeout) as sock:
            wire.send_frame(sock, MsgType.REGISTER, record_payload)
            msg_type, payload = wire.recv_frame(sock)
    except (OSError, EOFError, wire.WireError) as exc:
        raise RegistrationError(f"prover unreachable or broke protocol: {exc}") from exc
    if msg_type == MsgType.ERR:
        code = wire.Err.decode(payload).code
        raise RegistrationError(f"registration rejected: {wire.ErrCode(code).name}")
    if msg_type != MsgType.ACK:
        raise RegistrationError(f"unexpected reply type {msg_type:#x}")


def _registration_payload(
    asset_id: bytes, scheme: str, share: bytes, csec: bytes, owner_psk: Optional[str]
) -> bytes:
    payload = wire.Register(
        asset_id=asset_id, scheme=wire.SCHEME_CODES[scheme], share=share, csec=csec
    ).encode()
    if owner_psk is not None:
        payload += hmac_mod.new(owner_psk.encode(), payload, hashlib.sha256).digest()
    return payload


@dataclass
class GenerateResult:
    bundle: OwnershipBundle
    bundle_path: str
    asset_path: str
    keystore_path: str
    secret_json: str


def owner_generate(
    asset_path,
    scheme: str,
    out_dir,
    prover: str,
    mode: str = "tee",
    owner_label: bytes = b"owner",
    date: Optional[str] = None,
    freqy: FreqyParams = FreqyParams(),
    obt: ObtParams = ObtParams(),
    twopc: TwoPcParams = TwoPcParams(),
    owner_psk: Optional[str] = None,
    manufacturer_pvk: bytes = b"",
    license_text: str = "",
    rng: Optional[random.Random] = None,
) -> GenerateResult:
    """Watermark, derive tokens, register with the prover, write the bundle.

    Files land in out_dir only after the prover acknowledges registration, so
    a failed registration leaves nothing behind.
    """
    if scheme not in ("freqywm", "obt"):
        raise ClientError(f"unknown scheme {scheme!r}")
    if mode not in ("tee", "tee-direct", "2pc"):
        raise ClientError(f"unknown mode {mode!r}")
    if mode == "2pc" and scheme != "freqywm":
        raise ClientError("2pc mode supports the frequency scheme only")
    rng = rng or random.Random()
    date = date or _dt.date.today().isoformat()

    wm_key = crypto.gen_key()
    twopc_doc = None

    if scheme == "freqywm":
        dataset = freqywm.load_dataset(asset_path)
        modulus = twopc.modulus if mode == "2pc" else freqy.modulus
        num_pairs = twopc.num_pairs if mode == "2pc" else freqy.num_pairs
        tolerance = twopc.tolerance if mode == "2pc" else freqy.tolerance
        watermarked, secret = freqywm.insert(
            dataset,
            wm_key,
            modulus=modulus,
            num_pairs=num_pairs,
            tolerance=tolerance,
            budget=freqy.budget,
        )
        secret.min_pairs = (
            twopc.min_pairs if mode == "2pc" else freqy.min_pairs
        ) or freqywm.default_min_pairs(num_pairs)
        dw_bytes = freqywm.serialize_dataset(watermarked)
        out_name = "watermarked.txt"
    else:
        table = obtwm.load_table(asset_path)
        secret = obtwm.gen_secret(
            wm_key,
            lambda: rng.getrandbits(1),
            num_partitions=obt.num_partitions,
            delta=obt.delta,
            vote_threshold=obt.vote_threshold,
        )
        watermarked = obtwm.obt_insert(table, secret)
        dw_bytes = obtwm.serialize_table(watermarked)
        out_name = "watermarked.csv"

    asset_id = crypto.idgen(owner_label, hashlib.sha256(dw_bytes).digest(), date.encode())
    secret.id_aux = {"owner": base64.b64encode(owner_label).decode(), "date": date}
    secret_json = secret.to_json()

    if mode == "tee":
        enc_key = crypto.gen_key()
        csec = crypto.encrypt(enc_key, secret_json.encode()).to_bytes()
        s_h, s_p = crypto.share(enc_key)
    elif mode == "tee-direct":
        csec = b""
        s_h, s_p = crypto.share(secret_json.encode())
    else:  # 2pc: share the packed per-pair selectors
        selectors = [
            freqywm.pair_selector(a, b, secret.key, secret.modulus)
            for a, b in secret.pairs
        ]
        packed = pack_selectors(selectors)
        csec = b""
        s_h, s_p = crypto.share(packed)
        twopc_doc = {
            "pairs": [
                [base64.b64encode(a).decode(), base64.b64encode(b).decode()]
                for a, b in secret.pairs
            ],
            "z": secret.modulus,
            "t": secret.tolerance,
            "k": secret.min_pairs,
            "freq_bits": twopc.freq_bits,
            "sij_bits": twopc.sij_bits,
        }

    payload = _registration_payload(asset_id, scheme, s_p.data, csec, owner_psk)
    register_with_prover(prover, payload)

    os.makedirs(out_dir, exist_ok=True)
    dw_path = os.path.join(out_dir, out_name)
    with open(dw_path, "wb") as fh:
        fh.write(dw_bytes)

    measurement = b""
    if mode in ("tee", "tee-direct"):
        measurement = verify_program(mode, idgen_check=False).measurement()

    bundle = OwnershipBundle(
        asset_id=asset_id,
        scheme=scheme,
        mode=mode,
        tk_h=s_h.data,
        asset_path=dw_path,
        prover=prover,
        measurement=measurement,
        manufacturer_pvk=manufacturer_pvk,
        license_text=license_text,
        twopc=twopc_doc,
    )
    bundle_path = os.path.join(out_dir, "bundle.json")
    bundle.save(bundle_path)

    keystore_path = os.path.join(out_dir, "owner_secret.json")
    with open(keystore_path, "w") as fh:
        fh.write(secret_json + "\n")

    return GenerateResult(
        bundle=bundle,
        bundle_path=bundle_path,
        asset_path=dw_path,
        keystore_path=keystore_path,
        secret_json=secret_json,
    )


@dataclass
class VerifyOutcome:
    valid: Optional[bool]
    served_from_cache: bool = False
    abort_code: Optional[int] = None
    timings: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return sum(self.timings.get(t, 0.0) for t in TASKS)


def _expected_measurement(bundle: OwnershipBundle, override: Optional[bytes]) -> bytes:
    if override is not None:
        return override
    if bundle.measurement:
        return bundle.measurement
    raise AttestationError("no expected measurement pinned")


def holder_verify(
    bundle: OwnershipBundle,
    suspect_path,
    prover: Optional[str] = None,
    use_cache: bool = True,
    expected_measurement: Optional[bytes] = None,
    manufacturer_pvk: Optional[bytes] = None,
    minhash_params: cache_mod.MinHashParams = cache_mod.MinHashParams(),
    timeout: float = 30.0,
) -> VerifyOutcome:
    """Run one verification against the prover named in the bundle.

    With use_cache, a cache query precedes the full protocol; a conclusive
    cached answer skips it entirely. Timings cover the five session tasks.
    """
    prover = prover or bundle.prover
    host, port = parse_addr(prover)
    suspect_bytes = _asset_bytes(bundle.scheme, suspect_path)
    timings: dict[str, float] = {t: 0.0 for t in TASKS}

    t0 = time.perf_counter()
    sock = socket.create_connection((host, port), timeout=timeout)
    connect_s = time.perf_counter() - t0
    try:
        if use_cache:
            ref_tokens = tokenize(bundle.scheme, _asset_bytes(bundle.scheme, bundle.asset_path))
            suspect_tokens = tokenize(bundle.scheme, suspect_bytes)
            h = cache_mod.minhash(suspect_tokens, minhash_params)
            sim = cache_mod.jaccard(ref_tokens, suspect_tokens)
            wire.send_frame(
                sock, MsgType.CACHE_QRY, wire.CacheQry(bundle.asset_id, h, sim).encode()
            )
            msg_type, payload = wire.recv_frame(sock)
            if msg_type != MsgType.CACHE_RES:
                raise ProtocolError(f"unexpected cache reply {msg_type:#x}")
            res = wire.CacheRes.decode(payload)
            if res.present:
                timings["establish_session"] = connect_s
                return VerifyOutcome(
                    valid=bool(res.res), served_from_cache=True, timings=timings
                )

        if bundle.mode in ("tee", "tee-direct"):
            return _verify_tee(
                bundle, suspect_bytes, sock, connect_s, timings,
                expected_measurement, manufacturer_pvk,
            )
        return _verify_2pc(bundle, suspect_bytes, sock, connect_s, timings)
    finally:
        sock.close()


def _verify_tee(
    bundle, suspect_bytes, sock, connect_s, timings, expected_measurement, manufacturer_pvk
) -> VerifyOutcome:
    pvk = manufacturer_pvk if manufacturer_pvk is not None else bundle.manufacturer_pvk
    if not pvk:
        raise AttestationError("no manufacturer verification key available")

    t0 = time.perf_counter()
    session = HolderSession(_expected_measurement(bundle, expected_measurement), pvk)
    wire.send_frame(sock, MsgType.RA_HELLO, wire.RaHello(session.hello()).encode())
    msg_type, payload = wire.recv_frame(sock)
    if msg_type == MsgType.ABORT:
        return VerifyOutcome(valid=None, abort_code=wire.Abort.decode(payload).code)
    if msg_type != MsgType.RA_REPORT:
        raise ProtocolError(f"expected RA_REPORT, got {msg_type:#x}")
    rep = wire.RaReport.decode(payload)
    mac = session.finish(AttestationReport(rep.measurement, rep.epk, rep.sig))
    wire.send_frame(sock, MsgType.RA_FINISH, wire.RaFinish(session.client_epk, mac).encode())
    timings["establish_session"] = connect_s + (time.perf_counter() - t0)

    request = wire.encode_verify_request(bundle.asset_id, suspect_bytes, bundle.tk_h)
    t1 = time.perf_counter()
    wire.send_frame(sock, MsgType.VERIFY_REQ, session.channel.seal(request))
    msg_type, payload = wire.recv_frame(sock)
    roundtrip = time.perf_counter() - t1
    if msg_type == MsgType.ABORT:
        return VerifyOutcome(
            valid=None, abort_code=wire.Abort.decode(payload).code, timings=timings
        )
    if msg_type != MsgType.VERIFY_RES:
        raise ProtocolError(f"expected VERIFY_RES, got {msg_type:#x}")
    res, ext = wire.decode_verify_result(session.channel.open(payload))
    reconstruct_s, detect_s = ext if ext is not None else (0.0, 0.0)
    timings["reconstruct_secret"] = reconstruct_s
    timings["detect_watermark"] = detect_s
    timings["receive_data"] = max(0.0, roundtrip - reconstruct_s - detect_s)

    t2 = time.perf_counter()
    sock.shutdown(socket.SHUT_WR)
    timings["terminate_session"] = time.perf_counter() - t2
    return VerifyOutcome(valid=res == 1, timings=timings)


class _SocketChannel:
    def __init__(self, sock):
        self._sock = sock

    def send(self, msg_type, payload):
        wire.send_frame(self._sock, msg_type, payload)

    def recv(self):
        return wire.recv_frame(self._sock)


def _verify_2pc(bundle, suspect_bytes, sock, connect_s, timings) -> VerifyOutcome:
    if not bundle.twopc:
        raise ClientError("bundle carries no two-party parameters")
    doc = bundle.twopc
    pairs = [(base64.b64decode(a), base64.b64decode(b)) for a, b in doc["pairs"]]
    params = ReducedVerifyParams(
        num_pairs=len(pairs),
        freq_bits=int(doc["freq_bits"]),
        sij_bits=int(doc["sij_bits"]),
        tolerance=int(doc["t"]),
    )
    circuit = build_verify_circuit(params)

    t0 = time.perf_counter()
    wire.send_frame(
        sock, MsgType.GC_REQ, wire.GcReq(bundle.asset_id, circuit.hash()).encode()
    )
    msg_type, payload = wire.recv_frame(sock)
    if msg_type == MsgType.ABORT:
        return VerifyOutcome(valid=None, abort_code=wire.Abort.decode(payload).code)
    if msg_type != MsgType.GC_ACCEPT:
        raise ProtocolError(f"expected GC_ACCEPT, got {msg_type:#x}")
    timings["establish_session"] = connect_s + (time.perf_counter() - t0)

    hist = freqywm.preprocess(freqywm.deserialize_dataset(suspect_bytes))
    diffs, present = [], []
    max_freq = (1 << params.freq_bits) - 1
    for tok_a, tok_b in pairs:
        fa, fb = min(hist.get(tok_a, 0), max_freq), min(hist.get(tok_b, 0), max_freq)
        diffs.append(fa - fb)
        present.append(tok_a in hist and tok_b in hist)
    holder_bits = verify_holder_bits(params, bundle.tk_h, diffs, present)

    chan = _SocketChannel(sock)
    sub: dict[str, float] = {}
    try:
        count = run_evaluator(chan, circuit, holder_bits, timings=sub)
    except TwoPcError as exc:
        raise ProtocolError(str(exc)) from exc
    # Breakdown attribution: garbled-material transfer counts as receiving
    # data, the label transfer reconstructs the shared input, and the local
    # garbled evaluation is the detection step.
    timings["receive_data"] = sub.get("transfer", 0.0)
    timings["reconstruct_secret"] = sub.get("ot", 0.0)
    timings["detect_watermark"] = sub.get("eval", 0.0)

    t2 = time.perf_counter()
    sock.shutdown(socket.SHUT_WR)
    timings["terminate_session"] = time.perf_counter() - t2
    return VerifyOutcome(valid=count >= int(doc["k"]), timings=timings)
