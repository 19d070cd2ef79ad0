from .circuit import (
    Circuit,
    CircuitBuilder,
    Gate,
    ReducedVerifyParams,
    build_verify_circuit,
    evaluate,
    random_circuit,
)
from .garbling import GarbledCircuit, decode, encode, eval_garbled, garble
from .ot import OtError, OtReceiver, OtSender

__all__ = [
    "Circuit",
    "CircuitBuilder",
    "Gate",
    "ReducedVerifyParams",
    "build_verify_circuit",
    "evaluate",
    "random_circuit",
    "GarbledCircuit",
    "garble",
    "encode",
    "eval_garbled",
    "decode",
    "OtSender",
    "OtReceiver",
    "OtError",
]
