"""Shared cryptographic primitives.

Everything the protocol layers need: AES-256-GCM authenticated encryption,
2-out-of-2 XOR secret sharing, deterministic asset identifiers, and Ed25519
signatures for attestation reports.
"""

from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass
from typing import Callable, Union

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

KEY_LEN = 32
NONCE_LEN = 12
TAG_LEN = 16
ID_LEN = 32
SIG_LEN = 64

ROLE_HOLDER = "holder"
ROLE_PROVER = "prover"


class CryptoError(Exception):
    """Base error for this module."""


class AuthenticationError(CryptoError):
    """Decryption failed: ciphertext was tampered with or the key is wrong."""


class ShareError(CryptoError):
    """Secret-sharing misuse: empty secret or mismatched share lengths."""


def gen_key() -> bytes:
    """Generate a fresh 32-byte symmetric key from the system CSPRNG."""
    return secrets.token_bytes(KEY_LEN)


def frame(field: bytes) -> bytes:
    """Length-prefix a field (8-byte big-endian) so concatenations are unambiguous."""
    return len(field).to_bytes(8, "big") + field


def idgen(owner_label: bytes, asset_metadata: bytes, date: bytes) -> bytes:
    """Derive a 32-byte asset identifier from owner label, asset metadata and date.

    Each field is length-prefixed before hashing, so ("o1","m1","d1") and
    ("o1","m1d","1") hash to different identifiers.
    """
    h = hashlib.sha256()
    h.update(frame(owner_label))
    h.update(frame(asset_metadata))
    h.update(frame(date))
    return h.digest()


@dataclass(frozen=True)
class AuthCiphertext:
    """AES-GCM ciphertext: 12-byte nonce, body, 16-byte tag."""

    nonce: bytes
    body: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        return self.nonce + self.body + self.tag

    @classmethod
    def from_bytes(cls, blob: bytes) -> "AuthCiphertext":
        if len(blob) < NONCE_LEN + TAG_LEN:
            raise CryptoError("ciphertext blob too short")
        return cls(
            nonce=blob[:NONCE_LEN],
            body=blob[NONCE_LEN : len(blob) - TAG_LEN],
            tag=blob[len(blob) - TAG_LEN :],
        )


def encrypt(key: bytes, message: bytes) -> AuthCiphertext:
    """Encrypt under AES-256-GCM with a random 96-bit nonce.

    Each key encrypts exactly one secret in the ownership-generation flow, so
    random nonces carry no reuse risk.
    """
    if len(key) != KEY_LEN:
        raise CryptoError(f"key must be {KEY_LEN} bytes, got {len(key)}")
    nonce = secrets.token_bytes(NONCE_LEN)
    sealed = AESGCM(key).encrypt(nonce, message, None)
    return AuthCiphertext(nonce=nonce, body=sealed[:-TAG_LEN], tag=sealed[-TAG_LEN:])


def decrypt(key: bytes, ciphertext: AuthCiphertext) -> bytes:
    if len(key) != KEY_LEN:
        raise CryptoError(f"key must be {KEY_LEN} bytes, got {len(key)}")
    try:
        return AESGCM(key).decrypt(
            ciphertext.nonce, ciphertext.body + ciphertext.tag, None
        )
    except InvalidTag as exc:
        raise AuthenticationError("tampered ciphertext or wrong key") from exc


@dataclass(frozen=True)
class KeyShare:
    """One half of a 2-out-of-2 XOR sharing."""

    data: bytes
    role: str

    def __post_init__(self):
        if self.role not in (ROLE_HOLDER, ROLE_PROVER):
            raise ShareError(f"unknown share role {self.role!r}")


def xor_bytes(a: bytes, b: bytes) -> bytes:
    if len(a) != len(b):
        raise ShareError(f"length mismatch: {len(a)} vs {len(b)}")
    return bytes(x ^ y for x, y in zip(a, b))


def share(
    secret: bytes, rng: Callable[[int], bytes] = secrets.token_bytes
) -> tuple[KeyShare, KeyShare]:
    """Split a secret into a uniformly random holder share and its XOR complement.

    `rng` is a test hook; production callers keep the default CSPRNG.
    """
    if not secret:
        raise ShareError("cannot share an empty secret")
    holder = rng(len(secret))
    if len(holder) != len(secret):
        raise ShareError("rng returned wrong number of bytes")
    prover = xor_bytes(secret, holder)
    return KeyShare(holder, ROLE_HOLDER), KeyShare(prover, ROLE_PROVER)


def reconstruct(share_a: Union[KeyShare, bytes], share_b: Union[KeyShare, bytes]) -> bytes:
    """XOR two shares back into the secret. Commutative; errors on length mismatch."""
    a = share_a.data if isinstance(share_a, KeyShare) else share_a
    b = share_b.data if isinstance(share_b, KeyShare) else share_b
    return xor_bytes(a, b)


# --- signatures (Ed25519, raw 32-byte keys on the wire) ---


def gen_signing_keypair() -> tuple[bytes, bytes]:
    """Return (signing key, verification key) as raw 32-byte strings."""
    priv = Ed25519PrivateKey.generate()
    ssk = priv.private_bytes_raw()
    pvk = priv.public_key().public_bytes_raw()
    return ssk, pvk


def sign(ssk: bytes, message: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(ssk).sign(message)


def verify_sig(pvk: bytes, signature: bytes, message: bytes) -> bool:
    """Accept/reject; malformed encodings reject rather than raise."""
    try:
        Ed25519PublicKey.from_public_bytes(pvk).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False
