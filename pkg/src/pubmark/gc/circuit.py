"""Boolean circuits over XOR/AND/INV gates, plus the reduced watermark
verification circuit evaluated under two-party computation.

Wire numbering: evaluator (holder) input wires first, then garbler (prover)
input wires, then gate outputs in topological order. Multi-bit words are
little-endian bit lists.
"""

from __future__ import annotations

import hashlib
import math
import random
import struct
from dataclasses import dataclass
from typing import Optional

OPS = ("XOR", "AND", "INV")


class CircuitError(Exception):
    pass


@dataclass(frozen=True)
class Gate:
    op: str
    a: int
    b: Optional[int]
    out: int


@dataclass
class Circuit:
    n_holder: int
    n_prover: int
    gates: list[Gate]
    outputs: list[int]
    n_wires: int

    @property
    def n_inputs(self) -> int:
        return self.n_holder + self.n_prover

    @property
    def n_and(self) -> int:
        return sum(1 for g in self.gates if g.op == "AND")

    def validate(self) -> None:
        defined = set(range(self.n_inputs))
        for g in self.gates:
            if g.op not in OPS:
                raise CircuitError(f"unknown gate op {g.op!r}")
            if g.a not in defined or (g.op != "INV" and g.b not in defined):
                raise CircuitError(f"gate reads undefined wire: {g}")
            if g.out in defined:
                raise CircuitError(f"wire {g.out} defined twice")
            defined.add(g.out)
        for w in self.outputs:
            if w not in defined:
                raise CircuitError(f"output wire {w} undefined")
        if self.n_wires != self.n_inputs + len(self.gates):
            raise CircuitError("wire count mismatch")

    def serialize(self) -> bytes:
        """Canonical byte form; its SHA-256 is the circuit hash both parties pin."""
        out = [struct.pack(">III", self.n_holder, self.n_prover, len(self.gates))]
        for g in self.gates:
            op_code = OPS.index(g.op)
            out.append(struct.pack(">BIII", op_code, g.a, 0 if g.b is None else g.b + 1, g.out))
        out.append(struct.pack(">I", len(self.outputs)))
        out.extend(struct.pack(">I", w) for w in self.outputs)
        return b"".join(out)

    def hash(self) -> bytes:
        return hashlib.sha256(b"circuit-v1" + self.serialize()).digest()


def evaluate(circuit: Circuit, holder_bits: list[int], prover_bits: list[int]) -> list[int]:
    """Plain topological evaluation; the oracle every garbling test checks against."""
    if len(holder_bits) != circuit.n_holder or len(prover_bits) != circuit.n_prover:
        raise CircuitError("input width mismatch")
    values = list(holder_bits) + list(prover_bits) + [0] * len(circuit.gates)
    for g in circuit.gates:
        if g.op == "XOR":
            values[g.out] = values[g.a] ^ values[g.b]
        elif g.op == "AND":
            values[g.out] = values[g.a] & values[g.b]
        else:
            values[g.out] = values[g.a] ^ 1
    return [values[w] for w in circuit.outputs]


class CircuitBuilder:
    def __init__(self, n_holder: int, n_prover: int):
        if n_holder + n_prover < 1:
            raise CircuitError("circuit needs at least one input wire")
        self.n_holder = n_holder
        self.n_prover = n_prover
        self._next = n_holder + n_prover
        self.gates: list[Gate] = []
        self._zero: Optional[int] = None

    def holder_wire(self, i: int) -> int:
        return i

    def prover_wire(self, i: int) -> int:
        return self.n_holder + i

    def _emit(self, op: str, a: int, b: Optional[int]) -> int:
        out = self._next
        self._next += 1
        self.gates.append(Gate(op, a, b, out))
        return out

    def xor(self, a: int, b: int) -> int:
        return self._emit("XOR", a, b)

    def and_(self, a: int, b: int) -> int:
        return self._emit("AND", a, b)

    def inv(self, a: int) -> int:
        return self._emit("INV", a, None)

    def or_(self, a: int, b: int) -> int:
        return self.inv(self.and_(self.inv(a), self.inv(b)))

    def const(self, bit: int) -> int:
        if self._zero is None:
            self._zero = self.xor(0, 0)
        return self.inv(self._zero) if bit else self._zero

    def const_word(self, value: int, width: int) -> list[int]:
        return [self.const((value >> i) & 1) for i in range(width)]

    def mux(self, sel: int, when_true: int, when_false: int) -> int:
        return self.xor(when_false, self.and_(sel, self.xor(when_true, when_false)))

    def mux_word(self, sel: int, when_true: list[int], when_false: list[int]) -> list[int]:
        return [self.mux(sel, t, f) for t, f in zip(when_true, when_false)]

    def xor_word(self, a: list[int], b: list[int]) -> list[int]:
        return [self.xor(x, y) for x, y in zip(a, b)]

    def sub_word(self, a: list[int], b: list[int]) -> tuple[list[int], int]:
        """a - b over equal-width words; returns (difference, borrow-out)."""
        if len(a) != len(b):
            raise CircuitError("sub_word width mismatch")
        borrow = self.const(0)
        diff = []
        for x, y in zip(a, b):
            t = self.xor(x, y)
            diff.append(self.xor(t, borrow))
            # borrow' = (!x & y) | (!(x^y) & borrow); the terms are disjoint
            borrow = self.xor(self.and_(self.inv(x), y), self.and_(self.inv(t), borrow))
        return diff, borrow

    def geq(self, a: list[int], b: list[int]) -> int:
        _, borrow = self.sub_word(a, b)
        return self.inv(borrow)

    def any_set(self, bits: list[int]) -> int:
        acc = bits[0]
        for b in bits[1:]:
            acc = self.or_(acc, b)
        return acc

    def mod_word(self, dividend: list[int], divisor: list[int]) -> list[int]:
        """dividend mod divisor via restoring division.

        Output width is len(divisor)+1 so the running remainder never
        overflows; a zero divisor degenerates to returning the dividend.
        """
        width = len(divisor) + 1
        div_ext = list(divisor) + [self.const(0)]
        rem = [self.const(0)] * width
        for bit in reversed(dividend):
            rem = [bit] + rem[:-1]
            diff, borrow = self.sub_word(rem, div_ext)
            keep = borrow  # borrow set means rem < divisor: keep rem
            rem = self.mux_word(keep, rem, diff)
        return rem

    def add_bit(self, acc: list[int], bit: int) -> list[int]:
        """Increment a little-endian counter word by one conditional bit."""
        carry = bit
        out = []
        for a in acc:
            out.append(self.xor(a, carry))
            carry = self.and_(a, carry)
        return out

    def build(self, outputs: list[int]) -> Circuit:
        c = Circuit(
            n_holder=self.n_holder,
            n_prover=self.n_prover,
            gates=list(self.gates),
            outputs=list(outputs),
            n_wires=self._next,
        )
        c.validate()
        return c


def int_to_bits(value: int, width: int) -> list[int]:
    if value < 0 or value >= (1 << width):
        raise CircuitError(f"{value} does not fit in {width} bits")
    return [(value >> i) & 1 for i in range(width)]


def bits_to_int(bits: list[int]) -> int:
    return sum(b << i for i, b in enumerate(bits))


@dataclass(frozen=True)
class ReducedVerifyParams:
    """Desk-scale verification circuit shape: per-pair selector shares plus
    holder-side frequency differences, all width-bounded."""

    num_pairs: int
    freq_bits: int = 16
    sij_bits: int = 16
    tolerance: int = 0

    @property
    def count_bits(self) -> int:
        return max(1, math.ceil(math.log2(self.num_pairs + 1)))

    @property
    def holder_bits_per_pair(self) -> int:
        # selector share, |f_i - f_j|, sign bit, both-tokens-present bit
        return self.sij_bits + self.freq_bits + 2

    @property
    def n_holder(self) -> int:
        return self.num_pairs * self.holder_bits_per_pair

    @property
    def n_prover(self) -> int:
        return self.num_pairs * self.sij_bits


def build_verify_circuit(params: ReducedVerifyParams) -> Circuit:
    """Count watermark pairs whose congruence holds, from XOR shares.

    Per pair the circuit reconstructs the selector from the two shares,
    reduces the holder's |frequency difference| modulo it, flips the residue
    for negative differences, compares against the constant tolerance, and
    masks with the presence bit. The output is the little-endian match count;
    comparing the count against the acceptance threshold happens in the clear.
    """
    if params.tolerance >= (1 << params.sij_bits):
        raise CircuitError("tolerance does not fit the selector width")
    b = CircuitBuilder(params.n_holder, params.n_prover)
    count = [b.const(0)] * params.count_bits
    t_const = b.const_word(params.tolerance, params.sij_bits + 1)
    for p in range(params.num_pairs):
        base = p * params.holder_bits_per_pair
        share_h = [b.holder_wire(base + i) for i in range(params.sij_bits)]
        off = base + params.sij_bits
        abs_d = [b.holder_wire(off + i) for i in range(params.freq_bits)]
        sign = b.holder_wire(off + params.freq_bits)
        present = b.holder_wire(off + params.freq_bits + 1)
        share_p = [b.prover_wire(p * params.sij_bits + i) for i in range(params.sij_bits)]

        selector = b.xor_word(share_h, share_p)
        rem = b.mod_word(abs_d, selector)
        rem_nonzero = b.any_set(rem)
        sel_ext = selector + [b.const(0)]
        wrapped, _ = b.sub_word(sel_ext, rem)
        use_wrap = b.and_(sign, rem_nonzero)
        residue = b.mux_word(use_wrap, wrapped, rem)
        match = b.geq(t_const, residue)
        count = b.add_bit(count, b.and_(match, present))
    return b.build(count)


def verify_holder_bits(
    params: ReducedVerifyParams,
    share_h: bytes,
    diffs: list[int],
    present: list[bool],
) -> list[int]:
    """Holder's input vector: share words plus |diff|, sign, presence per pair."""
    if len(share_h) != 2 * params.num_pairs:
        raise CircuitError("share length does not match pair count")
    bits: list[int] = []
    for p in range(params.num_pairs):
        word = int.from_bytes(share_h[2 * p : 2 * p + 2], "big")
        bits.extend(int_to_bits(word, params.sij_bits))
        d = diffs[p]
        bits.extend(int_to_bits(abs(d), params.freq_bits))
        bits.append(1 if d < 0 else 0)
        bits.append(1 if present[p] else 0)
    return bits


def verify_prover_bits(params: ReducedVerifyParams, share_p: bytes) -> list[int]:
    if len(share_p) != 2 * params.num_pairs:
        raise CircuitError("share length does not match pair count")
    bits: list[int] = []
    for p in range(params.num_pairs):
        word = int.from_bytes(share_p[2 * p : 2 * p + 2], "big")
        bits.extend(int_to_bits(word, params.sij_bits))
    return bits


def pack_selectors(selectors: list[int]) -> bytes:
    """Serialize per-pair selectors into the 16-bit words the shares split."""
    out = bytearray()
    for s in selectors:
        if not 0 <= s < (1 << 16):
            raise CircuitError(f"selector {s} out of 16-bit range")
        out += s.to_bytes(2, "big")
    return bytes(out)


def random_circuit(rng: random.Random, n_holder: int, n_prover: int, n_gates: int) -> Circuit:
    """Random well-formed circuit for correctness sweeps."""
    b = CircuitBuilder(n_holder, n_prover)
    wires = list(range(n_holder + n_prover))
    for _ in range(n_gates):
        op = rng.choice(OPS)
        if op == "INV":
            w = b.inv(rng.choice(wires))
        else:
            x, y = rng.choice(wires), rng.choice(wires)
            w = b.xor(x, y) if op == "XOR" else b.and_(x, y)
        wires.append(w)
    n_out = rng.randint(1, min(4, len(wires)))
    outputs = rng.sample(wires, n_out)
    return b.build(outputs)
