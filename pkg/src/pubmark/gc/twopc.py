"""Two-party verification sessions: the prover garbles, the holder evaluates.

Both sides speak (msg_type, payload) over a channel object; the prover
service adapts this to its socket loop, tests use an in-memory pair. The
prover sends (F, d, X_P) plus an OT setup in one burst, answers the single
OT round, and learns nothing afterwards; the holder recovers the match count
and applies the acceptance threshold locally.
"""

from __future__ import annotations

import queue
from typing import Optional

from .. import wire
from ..wire import MsgType
from .circuit import Circuit, bits_to_int
from .garbling import GarbledCircuit, decode, encode, eval_garbled, garble
from .ot import OtReceiver, OtSender


class TwoPcError(Exception):
    pass


class QueueChannel:
    """In-memory duplex endpoint for exercising both roles in one process."""

    def __init__(self, inbox: "queue.Queue", outbox: "queue.Queue"):
        self._inbox = inbox
        self._outbox = outbox

    def send(self, msg_type: int, payload: bytes) -> None:
        self._outbox.put((msg_type, payload))

    def recv(self) -> tuple[int, bytes]:
        return self._inbox.get(timeout=30)


def queue_channel_pair() -> tuple[QueueChannel, QueueChannel]:
    a, b = queue.Queue(), queue.Queue()
    return QueueChannel(a, b), QueueChannel(b, a)


def garbler_payload(circuit: Circuit, prover_bits: list[int]) -> tuple[wire.GcPayload, OtSender]:
    """Garble and split: the payload shipped to the evaluator plus the OT
    sender loaded with the evaluator's input label pairs."""
    gc, e, d = garble(circuit)
    x_p = encode(e[circuit.n_holder :], prover_bits)
    payload = wire.GcPayload(
        tables=gc.tables,
        decode_bits=bytes(d),
        garbler_labels=x_p,
    )
    sender = OtSender(e[: circuit.n_holder])
    return payload, sender


def run_garbler(channel, circuit: Circuit, prover_bits: list[int]) -> None:
    """Protocol body after the request round: send (F, d, X_P), serve one OT
    round, receive nothing back."""
    payload, sender = garbler_payload(circuit, prover_bits)
    channel.send(MsgType.GC_PAYLOAD, payload.encode())
    channel.send(MsgType.OT_SETUP, wire.OtSetup(sender.setup()).encode())
    msg_type, body = channel.recv()
    if msg_type != MsgType.OT_CHOICES:
        raise TwoPcError(f"expected OT_CHOICES, got {msg_type:#x}")
    choices = wire.OtChoices.decode(body)
    replies = sender.respond(choices.points)
    channel.send(MsgType.OT_REPLY, wire.OtReply(replies).encode())


def run_evaluator(
    channel, circuit: Circuit, holder_bits: list[int], timings: Optional[dict] = None
) -> int:
    """Receive the garbled material, run the OT round, evaluate and decode.

    Returns the circuit's integer output (the match count). When `timings` is
    given it receives the transfer / ot / eval durations in seconds.
    """
    import time

    t0 = time.perf_counter()
    msg_type, body = channel.recv()
    if msg_type == MsgType.ABORT:
        raise TwoPcError(f"prover aborted with code {wire.Abort.decode(body).code}")
    if msg_type != MsgType.GC_PAYLOAD:
        raise TwoPcError(f"expected GC_PAYLOAD, got {msg_type:#x}")
    payload = wire.GcPayload.decode(body)
    if len(payload.tables) != circuit.n_and:
        raise TwoPcError("garbled table count does not match the agreed circuit")
    if len(payload.garbler_labels) != circuit.n_prover:
        raise TwoPcError("garbler label count mismatch")
    if len(payload.decode_bits) != len(circuit.outputs):
        raise TwoPcError("decode info width mismatch")

    msg_type, body = channel.recv()
    if msg_type != MsgType.OT_SETUP:
        raise TwoPcError(f"expected OT_SETUP, got {msg_type:#x}")
    setup = wire.OtSetup.decode(body)
    t1 = time.perf_counter()

    receiver = OtReceiver(holder_bits)
    channel.send(MsgType.OT_CHOICES, wire.OtChoices(receiver.choose(setup.sender_point)).encode())
    msg_type, body = channel.recv()
    if msg_type != MsgType.OT_REPLY:
        raise TwoPcError(f"expected OT_REPLY, got {msg_type:#x}")
    reply = wire.OtReply.decode(body)
    holder_labels = receiver.finish(reply.pairs)
    t2 = time.perf_counter()

    gc = GarbledCircuit(circuit, payload.tables)
    out_labels = eval_garbled(gc, holder_labels + payload.garbler_labels)
    bits = decode(list(payload.decode_bits), out_labels)
    t3 = time.perf_counter()
    if timings is not None:
        timings["transfer"] = t1 - t0
        timings["ot"] = t2 - t1
        timings["eval"] = t3 - t2
    return bits_to_int(bits)


def run_2pc_verify(
    circuit: Circuit, holder_bits: list[int], prover_bits: list[int]
) -> int:
    """Run both roles over an in-memory channel; used by tests and the
    equivalence harness."""
    import threading

    chan_h, chan_p = queue_channel_pair()
    errors: list[Exception] = []

    def garbler():
        try:
            run_garbler(chan_p, circuit, prover_bits)
        except Exception as exc:  # surfaced after join
            errors.append(exc)

    t = threading.Thread(target=garbler, daemon=True)
    t.start()
    count = run_evaluator(chan_h, circuit, holder_bits)
    t.join(timeout=30)
    if errors:
        raise errors[0]
    return count
