"""Publicly verifiable watermarking with an untrusted prover.

An owner watermarks an asset, splits the verification capability into a
holder token and a prover token, and goes offline; the holder then verifies
ownership any number of times against the prover, either inside a simulated
attested enclave or via garbled-circuit two-party computation, with a
similarity-aware cache short-circuiting repeat verifications.
"""

from .client import OwnershipBundle, VerifyOutcome, holder_verify, owner_generate
from .config import ServiceConfig
from .prover import ProverService

__all__ = [
    "OwnershipBundle",
    "VerifyOutcome",
    "holder_verify",
    "owner_generate",
    "ServiceConfig",
    "ProverService",
]
