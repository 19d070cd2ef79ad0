"""The prover service: token registration and storage, verification session
orchestration for the enclave and two-party paths, and the cache front-end.

The untrusted host code in this module never touches reconstructed secrets:
in the enclave paths it only moves sealed frames, looks up token records by
id, and logs ids, timestamps and byte counts. Isolation tests snapshot
exactly what this module sees.
"""

from __future__ import annotations

import base64
import hmac as hmac_mod
import hashlib
import json
import logging
import socket
import socketserver
import subprocess
import sys
import threading
import time
from dataclasses import dataclass
from typing import Optional

from . import wire
from .cache import CacheEntry, ProportionalCache
from .config import ServiceConfig
from .enclave import (
    CACHE_NOTE,
    FETCH,
    FETCH_RES,
    RA_OK,
    EnclaveAbort,
    encode_fetch_res,
    initialize,
    load_manufacturer_private,
    verify_program,
)
from .gc.circuit import ReducedVerifyParams, build_verify_circuit
from .gc.twopc import garbler_payload
from .wire import AbortCode, ErrCode, MsgType, WireError

logger = logging.getLogger("pubmark.prover")


class DuplicateIdError(Exception):
    pass


class StoreError(Exception):
    pass


@dataclass(frozen=True)
class TokenRecord:
    asset_id: bytes
    scheme: int
    share: bytes
    csec: bytes


class TokenStore:
    """Durable keyed store: append-only JSON-line log plus an in-memory index.

    Reads are lock-free on the dict; writes serialize behind one lock and
    fsync before the record becomes visible.
    """

    def __init__(self, path):
        self.path = path
        self._lock = threading.Lock()
        self._index: dict[bytes, TokenRecord] = {}
        try:
            with open(path) as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    doc = json.loads(line)
                    rec = TokenRecord(
                        asset_id=bytes.fromhex(doc["id"]),
                        scheme=int(doc["scheme"]),
                        share=base64.b64decode(doc["share"]),
                        csec=base64.b64decode(doc["c_sec"]) if "c_sec" in doc else b"",
                    )
                    self._index[rec.asset_id] = rec
        except FileNotFoundError:
            pass

    def __len__(self) -> int:
        return len(self._index)

    def register(self, record: TokenRecord) -> None:
        with self._lock:
            if record.asset_id in self._index:
                raise DuplicateIdError(record.asset_id.hex())
            doc = {
                "id": record.asset_id.hex(),
                "scheme": record.scheme,
                "share": base64.b64encode(record.share).decode(),
            }
            if record.csec:
                doc["c_sec"] = base64.b64encode(record.csec).decode()
            line = json.dumps(doc)
            try:
                with open(self.path, "a") as fh:
                    fh.write(line + "\n")
                    fh.flush()
                    import os

                    os.fsync(fh.fileno())
            except OSError as exc:
                raise StoreError(str(exc)) from exc
            self._index[record.asset_id] = record

    def get(self, asset_id: bytes) -> Optional[TokenRecord]:
        return self._index.get(asset_id)


class RateLimiter:
    """Per-id token bucket; disabled when rate is None."""

    def __init__(self, rate: Optional[float], burst: int):
        self.rate = rate
        self.burst = burst
        self._state: dict[bytes, tuple[float, float]] = {}
        self._lock = threading.Lock()

    def allow(self, asset_id: bytes) -> bool:
        if self.rate is None:
            return True
        now = time.monotonic()
        with self._lock:
            tokens, last = self._state.get(asset_id, (float(self.burst), now))
            tokens = min(self.burst, tokens + (now - last) * self.rate)
            if tokens < 1.0:
                self._state[asset_id] = (tokens, now)
                return False
            self._state[asset_id] = (tokens - 1.0, now)
            return True


# --- enclave access: inline context object or out-of-process worker ---


class InlineEnclave:
    """Same-process enclave context; fast path for tests and benchmarks."""

    def __init__(self, manufacturer_key_path: str, mode: str, idgen_check: bool):
        self._ssk = load_manufacturer_private(manufacturer_key_path)
        self._mode = mode
        self._idgen_check = idgen_check
        self._program = verify_program(mode, idgen_check)
        self.session = None

    def ra_hello(self, client_nonce: bytes):
        report, self.session = initialize(self._program, self._ssk, client_nonce)
        return report.measurement, report.epk, report.sig

    def ra_finish(self, client_epk: bytes, mac: bytes) -> bool:
        return self.session is not None and self.session.finish(client_epk, mac)

    def verify(self, sealed: bytes, fetch):
        """Returns ('res', sealed_reply, result_bit) or ('abort', code)."""
        if self.session is None or self.session.channel is None:
            return ("abort", int(AbortCode.AUTH_FAIL))
        try:
            reply = self.session.resume(
                "verify", sealed, fetch=fetch, mode=self._mode, idgen_check=self._idgen_check
            )
            result = self.session.last_result
            return ("res", reply, result)
        except EnclaveAbort as exc:
            return ("abort", exc.code)
        finally:
            self.session.erase_all()

    def close(self) -> None:
        if self.session is not None:
            self.session.erase_all()


class ProcessEnclave:
    """Worker-process enclave; one session at a time behind a lock."""

    def __init__(self, manufacturer_key_path: str, mode: str, idgen_check: bool):
        self._proc = subprocess.Popen(
            [
                sys.executable,
                "-m",
                "pubmark.enclave_worker",
                "--manufacturer-key",
                manufacturer_key_path,
                "--mode",
                mode,
                "--idgen-check",
                str(int(idgen_check)),
            ],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
        )
        self.lock = threading.Lock()

    def _send(self, msg_type: int, payload: bytes) -> None:
        wire.write_frame_io(self._proc.stdin, msg_type, payload)

    def _recv(self) -> tuple[int, bytes]:
        return wire.read_frame_io(self._proc.stdout)

    def ra_hello(self, client_nonce: bytes):
        self._send(MsgType.RA_HELLO, wire.RaHello(client_nonce).encode())
        msg_type, payload = self._recv()
        if msg_type != MsgType.RA_REPORT:
            raise EnclaveAbort(AbortCode.INTERNAL, "worker did not attest")
        rep = wire.RaReport.decode(payload)
        return rep.measurement, rep.epk, rep.sig

    def ra_finish(self, client_epk: bytes, mac: bytes) -> bool:
        self._send(MsgType.RA_FINISH, wire.RaFinish(client_epk, mac).encode())
        msg_type, _ = self._recv()
        return msg_type == RA_OK

    def verify(self, sealed: bytes, fetch):
        self._send(MsgType.VERIFY_REQ, sealed)
        result_bit = None
        while True:
            msg_type, payload = self._recv()
            if msg_type == FETCH:
                try:
                    record = fetch(payload)
                except EnclaveAbort:
                    # deliver "not found"; the worker aborts with UNKNOWN_ID,
                    # the host-side code maps rate limiting before fetch
                    record = None
                self._send(FETCH_RES, encode_fetch_res(record))
            elif msg_type == CACHE_NOTE:
                result_bit = payload[0]
            elif msg_type == MsgType.VERIFY_RES:
                return ("res", payload, result_bit)
            elif msg_type == MsgType.ABORT:
                return ("abort", wire.Abort.decode(payload).code)
            else:
                return ("abort", int(AbortCode.INTERNAL))

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)


@dataclass
class _ConnState:
    enclave: object = None
    pending_query: Optional[tuple[bytes, bytes, float]] = None  # (id, h, sim)
    ot_sender: object = None
    lease_release: object = None


class ProverService:
    def __init__(self, config: ServiceConfig):
        if config.store_path is None:
            raise StoreError("store_path must be configured")
        if config.mode in ("tee", "tee-direct") and config.manufacturer_key is None:
            raise StoreError("manufacturer_key must be configured for enclave modes")
        self.config = config
        self.store = TokenStore(config.store_path)
        self.cache = ProportionalCache(
            config.cache_capacity, config.cache_threshold, rule=config.cache_rule
        )
        self._cache_lock = threading.Lock()
        self.limiter = RateLimiter(config.rate_limit, config.rate_burst)
        self.counters = {
            "enclave_invocations": 0,
            "cache_hits": 0,
            "cache_misses": 0,
            "verifications": 0,
            "registrations": 0,
        }
        self._counter_lock = threading.Lock()
        self.host_trace: list[bytes] = []
        self.log_lines: list[str] = []
        self._server: Optional[socketserver.ThreadingTCPServer] = None
        self._worker: Optional[ProcessEnclave] = None
        if config.mode in ("tee", "tee-direct") and config.enclave_isolation == "process":
            self._worker = ProcessEnclave(
                config.manufacturer_key, config.mode, config.idgen_check
            )

    # --- bookkeeping ---

    def _bump(self, key: str) -> None:
        with self._counter_lock:
            self.counters[key] += 1

    def _log(self, msg: str, *args) -> None:
        line = msg % args if args else msg
        logger.info("%s", line)
        if self.config.instrument:
            self.log_lines.append(line)

    def _trace(self, blob: bytes) -> None:
        if self.config.instrument:
            self.host_trace.append(blob)

    def host_visible_snapshot(self) -> bytes:
        """Everything the untrusted host has seen: relayed frames, its log,
        the token store file, and the cache contents."""
        parts = list(self.host_trace)
        parts.append("\n".join(self.log_lines).encode())
        try:
            with open(self.config.store_path, "rb") as fh:
                parts.append(fh.read())
        except FileNotFoundError:
            pass
        with self._cache_lock:
            parts.append(self.cache.snapshot_csv().encode())
        return b"\x00".join(parts)

    # --- enclave leasing ---

    def _lease_enclave(self, state: _ConnState) -> None:
        if self._worker is not None:
            self._worker.lock.acquire()
            state.enclave = self._worker
            state.lease_release = self._worker.lock.release
        else:
            state.enclave = InlineEnclave(
                self.config.manufacturer_key, self.config.mode, self.config.idgen_check
            )
            state.lease_release = state.enclave.close

    # --- serving ---

    def start(self) -> tuple[str, int]:
        service = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                threading.current_thread().name = "pubmark-prover-conn"
                service.handle_connection(self.request)

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = Server((self.config.host, self.config.port), Handler)
        addr = self._server.server_address
        thread = threading.Thread(
            target=self._server.serve_forever, name="pubmark-prover-accept", daemon=True
        )
        thread.start()
        self._log("listening on %s:%d mode=%s", addr[0], addr[1], self.config.mode)
        return addr[0], addr[1]

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
        if self._worker is not None:
            self._worker.close()
            self._worker = None

    def handle_connection(self, sock: socket.socket) -> None:
        # The anonymity shim: the session layer gets a transport handle with
        # no peer address; nothing below this line reads it.
        state = _ConnState()
        try:
            while True:
                try:
                    msg_type, payload = wire.recv_frame(sock)
                except (EOFError, ConnectionError, OSError):
                    return
                except WireError:
                    self._safe_send(sock, MsgType.ERR, wire.Err(ErrCode.MALFORMED).encode())
                    return
                self._trace(wire.encode_frame(msg_type, payload))
                try:
                    replies = self.dispatch(state, msg_type, payload)
                except Exception as exc:  # never crash the service on a frame
                    self._log("internal error handling frame type=%#x: %s", msg_type, exc)
                    replies = [(MsgType.ABORT, wire.Abort(AbortCode.INTERNAL).encode())]
                for rtype, rpayload in replies:
                    self._trace(wire.encode_frame(rtype, rpayload))
                    try:
                        wire.send_frame(sock, rtype, rpayload)
                    except (ConnectionError, OSError):
                        return
        finally:
            if state.lease_release is not None:
                state.lease_release()

    def _safe_send(self, sock, msg_type, payload) -> None:
        try:
            self._trace(wire.encode_frame(msg_type, payload))
            wire.send_frame(sock, msg_type, payload)
        except (ConnectionError, OSError):
            pass

    # --- frame dispatch ---

    def dispatch(self, state: _ConnState, msg_type: int, payload: bytes):
        try:
            if msg_type == MsgType.REGISTER:
                return self._handle_register(payload)
            if msg_type == MsgType.CACHE_QRY:
                return self._handle_cache_query(state, payload)
            if msg_type == MsgType.RA_HELLO:
                return self._handle_ra_hello(state, payload)
            if msg_type == MsgType.RA_FINISH:
                return self._handle_ra_finish(state, payload)
            if msg_type == MsgType.VERIFY_REQ:
                return self._handle_verify(state, payload)
            if msg_type == MsgType.GC_REQ:
                return self._handle_gc_req(state, payload)
            if msg_type == MsgType.OT_CHOICES:
                return self._handle_ot_choices(state, payload)
            return [(MsgType.ERR, wire.Err(ErrCode.MALFORMED).encode())]
        except WireError:
            if msg_type == MsgType.REGISTER:
                return [(MsgType.ERR, wire.Err(ErrCode.MALFORMED).encode())]
            return [(MsgType.ABORT, wire.Abort(AbortCode.MALFORMED).encode())]

    def _handle_register(self, payload: bytes):
        reg = wire.Register.decode(payload)
        if self.config.owner_psk is not None:
            expected = hmac_mod.new(
                self.config.owner_psk.encode(),
                payload[: len(payload) - 32] if reg.auth_tag else payload,
                hashlib.sha256,
            ).digest()
            if not reg.auth_tag or not hmac_mod.compare_digest(reg.auth_tag, expected):
                return [(MsgType.ERR, wire.Err(ErrCode.UNAUTHORIZED).encode())]
        if reg.scheme not in wire.SCHEME_NAMES:
            return [(MsgType.ERR, wire.Err(ErrCode.MALFORMED).encode())]
        record = TokenRecord(
            asset_id=reg.asset_id, scheme=reg.scheme, share=reg.share, csec=reg.csec
        )
        try:
            self.store.register(record)
        except DuplicateIdError:
            return [(MsgType.ERR, wire.Err(ErrCode.DUPLICATE).encode())]
        except StoreError:
            return [(MsgType.ERR, wire.Err(ErrCode.STORAGE).encode())]
        self._bump("registrations")
        self._log("registered id=%s bytes=%d", reg.asset_id.hex(), len(payload))
        return [(MsgType.ACK, b"")]

    def _handle_cache_query(self, state: _ConnState, payload: bytes):
        qry = wire.CacheQry.decode(payload)
        state.pending_query = (qry.asset_id, qry.h, qry.sim)
        with self._cache_lock:
            res = self.cache.get(qry.h, qry.asset_id, qry.sim)
        if res is None:
            self._bump("cache_misses")
            self._log("cache miss id=%s", qry.asset_id.hex())
            return [(MsgType.CACHE_RES, wire.CacheRes(0, 0).encode())]
        self._bump("cache_hits")
        self._log("cache hit id=%s", qry.asset_id.hex())
        return [(MsgType.CACHE_RES, wire.CacheRes(1, res).encode())]

    def _handle_ra_hello(self, state: _ConnState, payload: bytes):
        if self.config.mode == "2pc":
            return [(MsgType.ABORT, wire.Abort(AbortCode.MALFORMED).encode())]
        hello = wire.RaHello.decode(payload)
        if state.enclave is None:
            self._lease_enclave(state)
        measurement, epk, sig = state.enclave.ra_hello(hello.client_nonce)
        self._log("attestation requested")
        return [(MsgType.RA_REPORT, wire.RaReport(measurement, epk, sig).encode())]

    def _handle_ra_finish(self, state: _ConnState, payload: bytes):
        fin = wire.RaFinish.decode(payload)
        if state.enclave is None or not state.enclave.ra_finish(fin.client_epk, fin.mac):
            return [(MsgType.ABORT, wire.Abort(AbortCode.AUTH_FAIL).encode())]
        return []

    def _fetch_record(self, asset_id: bytes):
        if not self.limiter.allow(asset_id):
            raise EnclaveAbort(AbortCode.RATE_LIMITED, "per-id rate limit")
        rec = self.store.get(asset_id)
        if rec is None:
            self._log("fetch miss id=%s", asset_id.hex())
            return None
        self._log("fetch id=%s", asset_id.hex())
        return rec.scheme, rec.share, rec.csec

    def _handle_verify(self, state: _ConnState, payload: bytes):
        if self.config.mode == "2pc" or state.enclave is None:
            return [(MsgType.ABORT, wire.Abort(AbortCode.MALFORMED).encode())]
        started = time.perf_counter()
        self._bump("enclave_invocations")
        try:
            outcome = state.enclave.verify(payload, self._fetch_record)
        except EnclaveAbort as exc:
            outcome = ("abort", exc.code)
        if outcome[0] == "abort":
            self._log("verify abort code=%d bytes_in=%d", outcome[1], len(payload))
            return [(MsgType.ABORT, wire.Abort(outcome[1]).encode())]
        _, sealed_reply, result_bit = outcome
        self._bump("verifications")
        self._log(
            "verify done bytes_in=%d bytes_out=%d elapsed_ms=%.3f",
            len(payload),
            len(sealed_reply),
            1e3 * (time.perf_counter() - started),
        )
        if state.pending_query is not None and result_bit is not None:
            qid, qh, qsim = state.pending_query
            with self._cache_lock:
                self.cache.put(CacheEntry(h=qh, asset_id=qid, res=result_bit, sim=qsim))
            state.pending_query = None
        return [(MsgType.VERIFY_RES, sealed_reply)]

    # --- two-party path ---

    def _twopc_params(self, record: TokenRecord) -> ReducedVerifyParams:
        return ReducedVerifyParams(
            num_pairs=len(record.share) // 2,
            freq_bits=self.config.twopc_freq_bits,
            sij_bits=self.config.twopc_sij_bits,
            tolerance=self.config.twopc_tolerance,
        )

    def _handle_gc_req(self, state: _ConnState, payload: bytes):
        if self.config.mode != "2pc":
            return [(MsgType.ABORT, wire.Abort(AbortCode.MALFORMED).encode())]
        req = wire.GcReq.decode(payload)
        if not self.limiter.allow(req.asset_id):
            return [(MsgType.ABORT, wire.Abort(AbortCode.RATE_LIMITED).encode())]
        record = self.store.get(req.asset_id)
        if record is None:
            self._log("fetch miss id=%s", req.asset_id.hex())
            return [(MsgType.ABORT, wire.Abort(AbortCode.UNKNOWN_ID).encode())]
        if len(record.share) % 2 != 0 or not record.share:
            return [(MsgType.ABORT, wire.Abort(AbortCode.BAD_ENTRY).encode())]
        circuit = build_verify_circuit(self._twopc_params(record))
        if circuit.hash() != req.circuit_hash:
            self._log("circuit hash mismatch id=%s", req.asset_id.hex())
            return [(MsgType.ABORT, wire.Abort(AbortCode.CIRCUIT_MISMATCH).encode())]
        from .gc.circuit import verify_prover_bits

        prover_bits = verify_prover_bits(self._twopc_params(record), record.share)
        payload_msg, sender = garbler_payload(circuit, prover_bits)
        state.ot_sender = sender
        self._bump("verifications")
        self._log("garbled id=%s tables=%d", req.asset_id.hex(), len(payload_msg.tables))
        return [
            (MsgType.GC_ACCEPT, wire.GcAccept(req.circuit_hash).encode()),
            (MsgType.GC_PAYLOAD, payload_msg.encode()),
            (MsgType.OT_SETUP, wire.OtSetup(sender.setup()).encode()),
        ]

    def _handle_ot_choices(self, state: _ConnState, payload: bytes):
        if state.ot_sender is None:
            return [(MsgType.ABORT, wire.Abort(AbortCode.MALFORMED).encode())]
        choices = wire.OtChoices.decode(payload)
        try:
            replies = state.ot_sender.respond(choices.points)
        except Exception:
            state.ot_sender = None
            return [(MsgType.ABORT, wire.Abort(AbortCode.MALFORMED).encode())]
        state.ot_sender = None
        return [(MsgType.OT_REPLY, wire.OtReply(replies).encode())]


def serve_config(path) -> None:
    """Blocking entry point for the CLI."""
    cfg = ServiceConfig.from_json_file(path)
    service = ProverService(cfg)
    host, port = service.start()
    print(f"prover listening on {host}:{port} mode={cfg.mode}", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        service.stop()
