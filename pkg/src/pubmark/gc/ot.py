"""1-out-of-2 oblivious transfer, Diffie-Hellman style, over the 2048-bit
MODP group from RFC 3526.

Two messages per batch: the sender publishes A = g^a once, the receiver sends
one group element per transfer (g^r for choice 0, A*g^r for choice 1), and the
sender answers with both labels encrypted under the respective derived keys.
The receiver can only derive the key for its choice; an integrity tag on each
encrypted label lets it detect tampering.
"""

from __future__ import annotations

import hashlib
import secrets

# RFC 3526 group 14 (2048-bit MODP); generator 2.
P_HEX = (
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74"
    "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437"
    "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05"
    "98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
    "9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718"
    "3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF"
)
P = int(P_HEX, 16)
G = 2
Q = (P - 1) // 2
ELEM_LEN = 256
# Short exponents (standard short-exponent DH assumption) keep the modular
# exponentiations fast enough for batched transfers.
EXP_BITS = 256


def _rand_exponent() -> int:
    return secrets.randbits(EXP_BITS) | 1


class OtError(Exception):
    pass


def _elem_to_bytes(x: int) -> bytes:
    return x.to_bytes(ELEM_LEN, "big")


def _elem_from_bytes(raw: bytes) -> int:
    if len(raw) != ELEM_LEN:
        raise OtError(f"group element must be {ELEM_LEN} bytes")
    x = int.from_bytes(raw, "big")
    if not 2 <= x <= P - 2:
        raise OtError("group element out of range")
    return x


def _derive(point: int, index: int) -> tuple[bytes, bytes]:
    """Per-transfer (pad, tag key) from a shared group element."""
    okm = hashlib.sha256(
        b"pubmark-ot" + index.to_bytes(8, "big") + _elem_to_bytes(point)
    ).digest()
    return okm[:16], okm[16:]


def _tag(tag_key: bytes, ct: bytes) -> bytes:
    return hashlib.sha256(b"pubmark-ot-tag" + tag_key + ct).digest()[:16]


class OtSender:
    """Holds the (m0, m1) label pairs; m0/m1 must be 16 bytes each."""

    def __init__(self, pairs: list[tuple[bytes, bytes]], secret: int | None = None):
        for m0, m1 in pairs:
            if len(m0) != 16 or len(m1) != 16:
                raise OtError("OT messages must be 16 bytes")
        self.pairs = pairs
        self._a = secret if secret is not None else _rand_exponent()
        self.A = pow(G, self._a, P)
        # A^{-a}, reused to derive the choice-1 key from the choice-0 key
        self._a_neg = pow(pow(self.A, P - 2, P), self._a, P)

    def setup(self) -> bytes:
        return _elem_to_bytes(self.A)

    def respond(self, points: list[bytes]) -> list[tuple[bytes, bytes, bytes, bytes]]:
        if len(points) != len(self.pairs):
            raise OtError("choice count does not match message pairs")
        out = []
        for i, raw in enumerate(points):
            b_elem = _elem_from_bytes(raw)
            k0 = pow(b_elem, self._a, P)
            k1 = (k0 * self._a_neg) % P
            (pad0, tk0) = _derive(k0, i)
            (pad1, tk1) = _derive(k1, i)
            m0, m1 = self.pairs[i]
            e0 = bytes(x ^ y for x, y in zip(pad0, m0))
            e1 = bytes(x ^ y for x, y in zip(pad1, m1))
            out.append((e0, _tag(tk0, e0), e1, _tag(tk1, e1)))
        return out


class OtReceiver:
    """Holds the choice bits; learns exactly one label per transfer."""

    def __init__(self, bits: list[int], rand_fn=None):
        self.bits = [b & 1 for b in bits]
        # rand_fn(i) -> exponent; injectable so tests can pin randomness
        self._rand = rand_fn or (lambda _i: _rand_exponent())
        self._keys: list[int] = []

    def choose(self, sender_point: bytes) -> list[bytes]:
        a_elem = _elem_from_bytes(sender_point)
        points = []
        self._keys = []
        for i, bit in enumerate(self.bits):
            r = self._rand(i)
            b_elem = pow(G, r, P)
            if bit:
                b_elem = (b_elem * a_elem) % P
            self._keys.append(pow(a_elem, r, P))
            points.append(_elem_to_bytes(b_elem))
        return points

    def finish(self, replies: list[tuple[bytes, bytes, bytes, bytes]]) -> list[bytes]:
        if len(replies) != len(self.bits):
            raise OtError("reply count does not match choices")
        labels = []
        for i, (bit, (e0, t0, e1, t1)) in enumerate(zip(self.bits, replies)):
            ct, tag = (e1, t1) if bit else (e0, t0)
            pad, tag_key = _derive(self._keys[i], i)
            if _tag(tag_key, ct) != tag:
                raise OtError("tampered OT reply")
            labels.append(bytes(x ^ y for x, y in zip(pad, ct)))
        return labels
