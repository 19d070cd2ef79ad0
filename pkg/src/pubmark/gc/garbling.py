"""Half-gates garbling with free XOR and point-and-permute.

XOR and INV gates cost no ciphertexts; each AND gate ships exactly two
16-byte ciphertexts. Wire labels are 128-bit; the two labels of a wire differ
by a global delta whose low bit is forced to 1 so label parity doubles as the
permute bit.
"""

from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass

from .circuit import Circuit, CircuitError

LABEL_LEN = 16
ZERO16 = b"\x00" * LABEL_LEN


def _xor16(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


def _lsb(label: bytes) -> int:
    return label[-1] & 1


def _hash_label(label: bytes, tweak: int) -> bytes:
    """Keyed gate hash: SHA-256 over a fixed prefix, the gate tweak, and the label."""
    return hashlib.sha256(
        b"pubmark-halfgate" + tweak.to_bytes(8, "big") + label
    ).digest()[:LABEL_LEN]


@dataclass
class GarbledCircuit:
    """Garbled form: the agreed circuit plus one 32-byte table per AND gate."""

    circuit: Circuit
    tables: list[bytes]

    @property
    def ciphertext_count(self) -> int:
        return 2 * len(self.tables)


EncodingInfo = list[tuple[bytes, bytes]]
DecodingInfo = list[int]


def garble(circuit: Circuit, rng=secrets.token_bytes) -> tuple[GarbledCircuit, EncodingInfo, DecodingInfo]:
    """Garble a circuit; returns (F, e, d).

    e maps each input wire to its (false, true) label pair; d holds the
    permute bit of each output wire.
    """
    circuit.validate()
    delta = bytearray(rng(LABEL_LEN))
    delta[-1] |= 1
    delta = bytes(delta)

    label0 = [b""] * circuit.n_wires
    for w in range(circuit.n_inputs):
        label0[w] = rng(LABEL_LEN)

    tables: list[bytes] = []
    and_index = 0
    for g in circuit.gates:
        if g.op == "XOR":
            label0[g.out] = _xor16(label0[g.a], label0[g.b])
        elif g.op == "INV":
            label0[g.out] = _xor16(label0[g.a], delta)
        else:
            a0, b0 = label0[g.a], label0[g.b]
            a1, b1 = _xor16(a0, delta), _xor16(b0, delta)
            p_a, p_b = _lsb(a0), _lsb(b0)
            j1, j2 = 2 * and_index, 2 * and_index + 1
            and_index += 1

            h_a0, h_a1 = _hash_label(a0, j1), _hash_label(a1, j1)
            t_g = _xor16(_xor16(h_a0, h_a1), delta if p_b else ZERO16)
            w_g = _xor16(h_a0, t_g if p_a else ZERO16)

            h_b0, h_b1 = _hash_label(b0, j2), _hash_label(b1, j2)
            t_e = _xor16(_xor16(h_b0, h_b1), a0)
            w_e = _xor16(h_b0, _xor16(t_e, a0) if p_b else ZERO16)

            label0[g.out] = _xor16(w_g, w_e)
            tables.append(t_g + t_e)

    e = [(label0[w], _xor16(label0[w], delta)) for w in range(circuit.n_inputs)]
    d = [_lsb(label0[w]) for w in circuit.outputs]
    return GarbledCircuit(circuit, tables), e, d


def encode(e: EncodingInfo, bits: list[int]) -> list[bytes]:
    if len(bits) != len(e):
        raise CircuitError("encode width mismatch")
    return [pair[1] if bit else pair[0] for pair, bit in zip(e, bits)]


def eval_garbled(gc: GarbledCircuit, labels: list[bytes]) -> list[bytes]:
    """Evaluate garbled gates on input labels; returns output labels."""
    circuit = gc.circuit
    if len(labels) != circuit.n_inputs:
        raise CircuitError("eval width mismatch")
    if len(gc.tables) != circuit.n_and:
        raise CircuitError("table count does not match AND gates")
    wire = [b""] * circuit.n_wires
    for w, lab in enumerate(labels):
        wire[w] = lab
    and_index = 0
    for g in circuit.gates:
        if g.op == "XOR":
            wire[g.out] = _xor16(wire[g.a], wire[g.b])
        elif g.op == "INV":
            wire[g.out] = wire[g.a]
        else:
            table = gc.tables[and_index]
            t_g, t_e = table[:LABEL_LEN], table[LABEL_LEN:]
            j1, j2 = 2 * and_index, 2 * and_index + 1
            and_index += 1
            a_lab, b_lab = wire[g.a], wire[g.b]
            w_g = _xor16(_hash_label(a_lab, j1), t_g if _lsb(a_lab) else ZERO16)
            w_e = _xor16(
                _hash_label(b_lab, j2),
                _xor16(t_e, a_lab) if _lsb(b_lab) else ZERO16,
            )
            wire[g.out] = _xor16(w_g, w_e)
    return [wire[w] for w in circuit.outputs]


def decode(d: DecodingInfo, output_labels: list[bytes]) -> list[int]:
    if len(d) != len(output_labels):
        raise CircuitError("decode width mismatch")
    return [_lsb(lab) ^ bit for lab, bit in zip(output_labels, d)]
