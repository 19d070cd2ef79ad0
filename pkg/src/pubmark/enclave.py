"""Software simulation of a measured, attestable execution environment.

An enclave session is created per connection: it generates an ephemeral
X25519 key, the simulated manufacturer key signs (measurement || ephemeral
public key) as the attestation report, and the holder completes a
Diffie-Hellman handshake bound to that report. All verification inputs and
reconstructed secrets live in tracked buffers that erase_all() zeroizes.

The same session logic runs either in-process (fast, unit tests) or inside a
separate worker process reached over a pipe (the isolation analogue used by
the prover service; see enclave_worker).
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
import json
import secrets
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from . import crypto, freqywm, obtwm, wire
from .crypto import AuthCiphertext
from .wire import AbortCode

RA_INFO = b"pubmark-ra-v1"
DIR_CLIENT = b"\x00\x00\x00\x01"
DIR_ENCLAVE = b"\x00\x00\x00\x02"

PROGRAM_NAME = "verify-enclave"
PROGRAM_VERSION = "1"


class EnclaveAbort(Exception):
    def __init__(self, code: int, detail: str = ""):
        self.code = code
        super().__init__(f"enclave abort {AbortCode(code).name}: {detail}")


class AttestationError(Exception):
    pass


@dataclass(frozen=True)
class EnclaveProgram:
    """Measured program descriptor plus its resume entry table."""

    name: str
    version: str
    config: dict
    entries: dict = field(default_factory=dict, compare=False)

    def measurement(self) -> bytes:
        doc = {"name": self.name, "version": self.version, "config": self.config}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).digest()


@dataclass(frozen=True)
class AttestationReport:
    measurement: bytes
    epk: bytes
    sig: bytes

    def verify(self, manufacturer_pvk: bytes) -> bool:
        return crypto.verify_sig(manufacturer_pvk, self.sig, self.measurement + self.epk)


def verify_program(mode: str, idgen_check: bool) -> EnclaveProgram:
    """The standard verification program; its measurement covers mode and the
    id-consistency flag so holders pin exactly what will run."""
    return EnclaveProgram(
        name=PROGRAM_NAME,
        version=PROGRAM_VERSION,
        config={"mode": mode, "idgen_check": idgen_check},
        entries={"verify": _verify_entry},
    )


def _derive_session_keys(shared: bytes, transcript: bytes) -> tuple[bytes, bytes]:
    okm = HKDF(
        algorithm=hashes.SHA256(),
        length=48,
        salt=b"",
        info=RA_INFO + transcript,
    ).derive(shared)
    return okm[:32], okm[32:]


def _confirm_mac(confirm_key: bytes, transcript: bytes) -> bytes:
    return hmac_mod.new(confirm_key, b"confirm" + transcript, hashlib.sha256).digest()[:16]


class SecureChannel:
    """AES-256-GCM channel with per-direction counters for replay protection."""

    def __init__(self, key: bytes, send_dir: bytes, recv_dir: bytes):
        self._key = key
        self._send_dir = send_dir
        self._recv_dir = recv_dir
        self._send_ctr = 0
        self._recv_ctr = 0

    def seal(self, plaintext: bytes) -> bytes:
        nonce = self._send_dir + self._send_ctr.to_bytes(8, "big")
        self._send_ctr += 1
        from cryptography.hazmat.primitives.ciphers.aead import AESGCM

        return nonce + AESGCM(self._key).encrypt(nonce, plaintext, None)

    def open(self, blob: bytes) -> bytes:
        if len(blob) < 12 + 16:
            raise EnclaveAbort(AbortCode.MALFORMED, "sealed blob too short")
        nonce, body = blob[:12], blob[12:]
        if nonce[:4] != self._recv_dir:
            raise EnclaveAbort(AbortCode.MALFORMED, "wrong channel direction")
        ctr = int.from_bytes(nonce[4:], "big")
        if ctr != self._recv_ctr:
            raise EnclaveAbort(AbortCode.REPLAY, "stale or out-of-order counter")
        from cryptography.hazmat.primitives.ciphers.aead import AESGCM
        from cryptography.exceptions import InvalidTag

        try:
            plaintext = AESGCM(self._key).decrypt(nonce, body, None)
        except InvalidTag as exc:
            raise EnclaveAbort(AbortCode.AUTH_FAIL, "channel authentication failed") from exc
        self._recv_ctr += 1
        return plaintext


class EnclaveSession:
    """One attested verification session inside the simulated enclave."""

    def __init__(self, program: EnclaveProgram, manufacturer_ssk: bytes):
        self.program = program
        self._ssk = manufacturer_ssk
        self._eph = X25519PrivateKey.generate()
        self.epk = self._eph.public_key().public_bytes_raw()
        self.client_nonce: Optional[bytes] = None
        self.channel: Optional[SecureChannel] = None
        self.last_result: Optional[int] = None
        self._buffers: list[bytearray] = []

    # --- attestation handshake ---

    def report(self, client_nonce: bytes) -> AttestationReport:
        self.client_nonce = client_nonce
        m = self.program.measurement()
        sig = crypto.sign(self._ssk, m + self.epk)
        return AttestationReport(measurement=m, epk=self.epk, sig=sig)

    def finish(self, client_epk: bytes, mac: bytes) -> bool:
        if self.client_nonce is None:
            return False
        transcript = (
            self.client_nonce + self.program.measurement() + self.epk + client_epk
        )
        try:
            shared = self._eph.exchange(X25519PublicKey.from_public_bytes(client_epk))
        except ValueError:
            return False
        session_key, confirm_key = _derive_session_keys(shared, transcript)
        if not hmac_mod.compare_digest(_confirm_mac(confirm_key, transcript), mac):
            return False
        self.channel = SecureChannel(session_key, send_dir=DIR_ENCLAVE, recv_dir=DIR_CLIENT)
        return True

    # --- controlled invocation ---

    def resume(self, entry: str, sealed_params: bytes, **ctx) -> bytes:
        """Run exactly one registered entry point over the secure channel.

        On any abort the session buffers are wiped before the error
        propagates; no partial output is produced.
        """
        if self.channel is None:
            raise EnclaveAbort(AbortCode.AUTH_FAIL, "session not established")
        fn = self.program.entries.get(entry)
        if fn is None:
            raise EnclaveAbort(AbortCode.BAD_ENTRY, f"no entry {entry!r}")
        try:
            plaintext = self.channel.open(sealed_params)
            out = fn(self, plaintext, **ctx)
            return self.channel.seal(out)
        except EnclaveAbort:
            self.erase_all()
            raise
        except Exception as exc:
            self.erase_all()
            raise EnclaveAbort(AbortCode.INTERNAL, str(exc)) from exc

    # --- sensitive-buffer bookkeeping ---

    def track(self, data: bytes) -> bytearray:
        buf = bytearray(data)
        self._buffers.append(buf)
        return buf

    def erase_all(self) -> None:
        """Zeroize every tracked session buffer; idempotent."""
        for buf in self._buffers:
            for i in range(len(buf)):
                buf[i] = 0
        self._buffers.clear()

    def memory_snapshot(self) -> bytes:
        """Residue probe for tests: live tracked buffers plus session metadata."""
        meta = json.dumps(
            {
                "program": self.program.config,
                "nonce": (self.client_nonce or b"").hex(),
                "last_result": self.last_result,
            }
        ).encode()
        return b"".join(bytes(b) for b in self._buffers) + meta


def initialize(
    program: EnclaveProgram, manufacturer_ssk: bytes, client_nonce: bytes
) -> tuple[AttestationReport, EnclaveSession]:
    """Start a session: run Init (ephemeral key generation) and attest to the
    measurement plus the init output."""
    session = EnclaveSession(program, manufacturer_ssk)
    return session.report(client_nonce), session


def _verify_entry(
    session: EnclaveSession,
    plaintext: bytes,
    fetch: Callable[[bytes], Optional[tuple[int, bytes, bytes]]],
    mode: str,
    idgen_check: bool,
) -> bytes:
    """The single registered entry point: reconstruct, detect, reply.

    `fetch` is the host-provided token lookup; it sees only the asset id.
    """
    asset_id, dw, tkh = wire.decode_verify_request(plaintext)
    session.track(dw)
    session.track(tkh)
    record = fetch(asset_id)
    if record is None:
        raise EnclaveAbort(AbortCode.UNKNOWN_ID, "id not in DB")
    scheme_code, share, csec = record
    session.track(share)

    t0 = time.perf_counter()
    try:
        if mode == "tee":
            key = crypto.reconstruct(tkh, share)
            session.track(key)
            sec_blob = crypto.decrypt(key, AuthCiphertext.from_bytes(csec))
        else:  # tee-direct: the shares carry the secret itself
            sec_blob = crypto.reconstruct(tkh, share)
    except crypto.AuthenticationError as exc:
        raise EnclaveAbort(AbortCode.AUTH_FAIL, "secret decryption failed") from exc
    except crypto.CryptoError as exc:
        raise EnclaveAbort(AbortCode.MALFORMED, str(exc)) from exc
    session.track(sec_blob)
    reconstruct_s = time.perf_counter() - t0

    scheme = wire.SCHEME_NAMES.get(scheme_code)
    if scheme is None:
        raise EnclaveAbort(AbortCode.MALFORMED, f"unknown scheme code {scheme_code}")

    try:
        if scheme == "freqywm":
            secret = freqywm.FreqySecret.from_json(sec_blob.decode())
        else:
            secret = obtwm.ObtSecret.from_json(sec_blob.decode())
    except Exception as exc:
        raise EnclaveAbort(AbortCode.MALFORMED, "undecodable secret") from exc

    if idgen_check:
        aux = secret.id_aux or {}
        try:
            import base64

            owner = base64.b64decode(aux["owner"])
            date = aux["date"].encode()
        except Exception as exc:
            raise EnclaveAbort(AbortCode.ID_MISMATCH, "missing id derivation inputs") from exc
        expected = crypto.idgen(owner, hashlib.sha256(dw).digest(), date)
        if expected != asset_id:
            raise EnclaveAbort(AbortCode.ID_MISMATCH, "id does not match asset")

    t1 = time.perf_counter()
    if scheme == "freqywm":
        dataset = freqywm.deserialize_dataset(dw)
        res = 1 if freqywm.detect(dataset, secret, secret.detect_params()) else 0
    else:
        table = obtwm.deserialize_table(dw)
        res = 1 if obtwm.obt_detect(table, secret) else 0
    detect_s = time.perf_counter() - t1

    session.last_result = res
    return wire.encode_verify_result(res, (reconstruct_s, detect_s))


class HolderSession:
    """Holder side of the attested handshake."""

    def __init__(self, expected_measurement: bytes, manufacturer_pvk: bytes):
        self.expected_measurement = expected_measurement
        self.manufacturer_pvk = manufacturer_pvk
        self.nonce = secrets.token_bytes(32)
        self._eph = X25519PrivateKey.generate()
        self.client_epk = self._eph.public_key().public_bytes_raw()
        self.channel: Optional[SecureChannel] = None

    def hello(self) -> bytes:
        return self.nonce

    def finish(self, report: AttestationReport) -> bytes:
        """Check the report, derive the channel, return the confirmation MAC.

        Aborts before anything secret is sent if the signature is bad or the
        measurement is not the pinned one.
        """
        if not report.verify(self.manufacturer_pvk):
            raise AttestationError("attestation signature invalid")
        if report.measurement != self.expected_measurement:
            raise AttestationError("unexpected enclave measurement")
        transcript = self.nonce + report.measurement + report.epk + self.client_epk
        shared = self._eph.exchange(X25519PublicKey.from_public_bytes(report.epk))
        session_key, confirm_key = _derive_session_keys(shared, transcript)
        self.channel = SecureChannel(session_key, send_dir=DIR_CLIENT, recv_dir=DIR_ENCLAVE)
        return _confirm_mac(confirm_key, transcript)


# --- manufacturer key files (PEM-like base64 armor) ---


def _armor(label: str, data: bytes) -> str:
    import base64

    b64 = base64.b64encode(data).decode()
    return f"-----BEGIN {label}-----\n{b64}\n-----END {label}-----\n"


def _dearmor(label: str, text: str) -> bytes:
    import base64

    begin, end = f"-----BEGIN {label}-----", f"-----END {label}-----"
    if begin not in text or end not in text:
        raise ValueError(f"not a {label} file")
    body = text.split(begin, 1)[1].split(end, 1)[0]
    return base64.b64decode("".join(body.split()))


PRIV_LABEL = "PUBMARK MANUFACTURER PRIVATE KEY"
PUB_LABEL = "PUBMARK MANUFACTURER PUBLIC KEY"


# --- host <-> enclave-worker channel (never appears on the public wire) ---

FETCH = 0xE2
FETCH_RES = 0xE3
CACHE_NOTE = 0xE5
RA_OK = 0xE6


def encode_fetch_res(record) -> bytes:
    import struct

    if record is None:
        return b"\x00"
    scheme, share, csec = record
    return (
        b"\x01"
        + struct.pack(">B", scheme)
        + struct.pack(">I", len(share))
        + share
        + struct.pack(">I", len(csec))
        + csec
    )


def decode_fetch_res(payload: bytes):
    import struct

    if not payload:
        raise wire.WireError("empty fetch result")
    if payload[0] == 0:
        return None
    if len(payload) < 10:
        raise wire.WireError("truncated fetch result")
    scheme = payload[1]
    (share_len,) = struct.unpack(">I", payload[2:6])
    share = payload[6 : 6 + share_len]
    off = 6 + share_len
    (csec_len,) = struct.unpack(">I", payload[off : off + 4])
    csec = payload[off + 4 : off + 4 + csec_len]
    if len(share) != share_len or len(csec) != csec_len:
        raise wire.WireError("truncated fetch result")
    return scheme, share, csec


def save_manufacturer_keys(priv_path, pub_path) -> tuple[bytes, bytes]:
    ssk, pvk = crypto.gen_signing_keypair()
    with open(priv_path, "w") as fh:
        fh.write(_armor(PRIV_LABEL, ssk))
    with open(pub_path, "w") as fh:
        fh.write(_armor(PUB_LABEL, pvk))
    return ssk, pvk


def load_manufacturer_private(path) -> bytes:
    with open(path) as fh:
        return _dearmor(PRIV_LABEL, fh.read())


def load_manufacturer_public(path) -> bytes:
    with open(path) as fh:
        return _dearmor(PUB_LABEL, fh.read())
