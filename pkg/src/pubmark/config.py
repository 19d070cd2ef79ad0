"""Dataclass configs for the prover service and experiment defaults."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from typing import Optional

MODES = ("tee", "tee-direct", "2pc")

MODE_ENV_VAR = "PUPPY_MODE"


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 0
    mode: str = "tee"
    cache_capacity: int = 250
    cache_threshold: float = 70.0
    cache_rule: str = "literal"
    manufacturer_key: Optional[str] = None
    store_path: Optional[str] = None
    owner_psk: Optional[str] = None
    idgen_check: bool = False
    enclave_isolation: str = "inline"
    rate_limit: Optional[float] = None
    rate_burst: int = 5
    report_timings: bool = True
    instrument: bool = False
    twopc_tolerance: int = 0
    twopc_freq_bits: int = 16
    twopc_sij_bits: int = 16

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.enclave_isolation not in ("inline", "process"):
            raise ValueError("enclave_isolation must be 'inline' or 'process'")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json_file(cls, path) -> "ServiceConfig":
        with open(path) as fh:
            doc = json.load(fh)
        cfg = cls(**doc)
        env_mode = os.environ.get(MODE_ENV_VAR)
        if env_mode:
            if env_mode not in MODES:
                raise ValueError(f"{MODE_ENV_VAR} must be one of {MODES}")
            cfg.mode = env_mode
        return cfg


@dataclass
class FreqyParams:
    modulus: int = 257
    num_pairs: int = 30
    tolerance: int = 0
    min_pairs: Optional[int] = None
    budget: Optional[int] = None


@dataclass
class ObtParams:
    num_partitions: int = 32
    delta: float = 0.5
    vote_threshold: float = 0.8


@dataclass
class TwoPcParams:
    num_pairs: int = 4
    modulus: int = 256  # power of two in 2PC mode
    tolerance: int = 0
    min_pairs: Optional[int] = None
    freq_bits: int = 16
    sij_bits: int = 16
