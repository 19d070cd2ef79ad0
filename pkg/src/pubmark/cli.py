"""Command-line front-ends: prover, owner, holder, harness.

Exit codes for holder verify: 0 Valid, 1 Invalid, 2 protocol or attestation
error, 3 usage error.
"""

from __future__ import annotations

import argparse
import sys

from . import harness
from .client import (
    ClientError,
    OwnershipBundle,
    ProtocolError,
    RegistrationError,
    TASKS,
    holder_verify,
    owner_generate,
)
from .config import FreqyParams, TwoPcParams
from .enclave import AttestationError, load_manufacturer_public
from .wire import AbortCode

EXIT_VALID = 0
EXIT_INVALID = 1
EXIT_PROTOCOL = 2
EXIT_USAGE = 3


def _prover_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="prover")
    sub = p.add_subparsers(dest="cmd", required=True)
    serve = sub.add_parser("serve", help="run the prover service")
    serve.add_argument("--config", required=True, help="service config JSON")
    return p


def _owner_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="owner")
    sub = p.add_subparsers(dest="cmd", required=True)
    gen = sub.add_parser("generate", help="watermark an asset and derive tokens")
    gen.add_argument("--asset", required=True)
    gen.add_argument("--scheme", choices=("freqywm", "obt"), required=True)
    gen.add_argument("--out-dir", required=True)
    gen.add_argument("--prover", required=True, help="host:port")
    gen.add_argument("--mode", choices=("tee", "tee-direct", "2pc"), default="tee")
    gen.add_argument("--owner-label", default="owner")
    gen.add_argument("--date", default=None, help="ISO day used in the asset id")
    gen.add_argument("--psk", default=None, help="owner registration pre-shared key")
    gen.add_argument("--manufacturer-key", default=None, help="manufacturer public key file")
    gen.add_argument("--license", dest="license_text", default="")
    gen.add_argument("--num-pairs", type=int, default=None)
    return p


def _holder_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="holder")
    sub = p.add_subparsers(dest="cmd", required=True)
    ver = sub.add_parser("verify", help="verify a suspect asset")
    ver.add_argument("--bundle", required=True)
    ver.add_argument("--suspect", required=True)
    ver.add_argument("--prover", default=None, help="host:port (default: bundle)")
    ver.add_argument("--no-cache", action="store_true")
    ver.add_argument("--expected-measurement", default=None, help="hex, overrides bundle pin")
    ver.add_argument("--manufacturer-key", default=None, help="manufacturer public key file")
    return p


def _harness_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="harness")
    sub = p.add_subparsers(dest="cmd", required=True)
    cache = sub.add_parser("cache", help="cache hit-ratio study")
    cache.add_argument("--capacities", default="10,20,50,100,250")
    cache.add_argument("--pairs", type=int, default=250)
    cache.add_argument("--trials", type=int, default=100)
    cache.add_argument("--seed", type=int, default=0)
    cache.add_argument("--requests", type=int, default=1000)
    cache.add_argument("--threshold", type=int, default=70)
    cache.add_argument("--out", required=True)
    lat = sub.add_parser("latency", help="five-task latency breakdown")
    lat.add_argument("--scheme", choices=("freqywm", "obt"), required=True)
    lat.add_argument("--mode", choices=("tee", "plain"), required=True)
    lat.add_argument("--runs", type=int, default=10)
    lat.add_argument("--seed", type=int, default=7)
    lat.add_argument("--out", required=True)
    return p


def _run_prover(args) -> int:
    from .prover import serve_config

    serve_config(args.config)
    return 0


def _run_owner(args) -> int:
    pvk = b""
    if args.manufacturer_key:
        pvk = load_manufacturer_public(args.manufacturer_key)
    freqy = FreqyParams()
    twopc = TwoPcParams()
    if args.num_pairs is not None:
        freqy.num_pairs = args.num_pairs
        twopc.num_pairs = args.num_pairs
    try:
        result = owner_generate(
            args.asset,
            args.scheme,
            args.out_dir,
            args.prover,
            mode=args.mode,
            owner_label=args.owner_label.encode(),
            date=args.date,
            owner_psk=args.psk,
            manufacturer_pvk=pvk,
            license_text=args.license_text,
            freqy=freqy,
            twopc=twopc,
        )
    except RegistrationError as exc:
        print(f"registration failed: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    print(f"id: {result.bundle.asset_id.hex()}")
    print(f"bundle: {result.bundle_path}")
    print(f"watermarked asset: {result.asset_path}")
    return 0


def _run_holder(args) -> int:
    bundle = OwnershipBundle.load(args.bundle)
    expected = bytes.fromhex(args.expected_measurement) if args.expected_measurement else None
    pvk = load_manufacturer_public(args.manufacturer_key) if args.manufacturer_key else None
    try:
        outcome = holder_verify(
            bundle,
            args.suspect,
            prover=args.prover,
            use_cache=not args.no_cache,
            expected_measurement=expected,
            manufacturer_pvk=pvk,
        )
    except AttestationError as exc:
        print(f"attestation failed: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (ProtocolError, ClientError, OSError) as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    if outcome.abort_code is not None:
        print(f"prover abort: {AbortCode(outcome.abort_code).name}", file=sys.stderr)
        return EXIT_PROTOCOL
    if outcome.served_from_cache:
        print("answered from prover cache")
    for task in TASKS:
        print(f"{task:22s} {1e3 * outcome.timings.get(task, 0.0):10.3f} ms")
    print(f"{'total':22s} {1e3 * outcome.total:10.3f} ms")
    print("Valid" if outcome.valid else "Invalid")
    return EXIT_VALID if outcome.valid else EXIT_INVALID


def _run_harness(args) -> int:
    if args.cmd == "cache":
        capacities = tuple(int(c) for c in args.capacities.split(","))
        rows = harness.cache_study(
            args.out,
            capacities=capacities,
            pairs=args.pairs,
            trials=args.trials,
            seed=args.seed,
            requests=args.requests,
            threshold=args.threshold,
        )
        for row in rows:
            print(f"{row['policy']:12s} c={row['capacity']:<4d} HR={row['mean_hit_ratio']:.4f}")
    else:
        rows = harness.latency_study(
            args.scheme, args.mode, args.out, runs=args.runs, seed=args.seed
        )
        for row in rows:
            print(f"{row['scheme']}/{row['mode']:6s} {row['task']:20s} {row['mean_ms']:9.3f} ms")
    return 0


_PARSERS = {
    "prover": (_prover_parser, _run_prover),
    "owner": (_owner_parser, _run_owner),
    "holder": (_holder_parser, _run_holder),
    "harness": (_harness_parser, _run_harness),
}


def main(argv=None, prog=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    if prog is None:
        if not argv or argv[0] not in _PARSERS:
            print(f"usage: pubmark {{{','.join(_PARSERS)}}} ...", file=sys.stderr)
            return EXIT_USAGE
        prog = argv.pop(0)
    build, run = _PARSERS[prog]
    try:
        args = build().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else EXIT_USAGE
    try:
        return run(args)
    except (ClientError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL


def prover_main() -> int:
    return main(prog="prover")


def owner_main() -> int:
    return main(prog="owner")


def holder_main() -> int:
    return main(prog="holder")


def harness_main() -> int:
    return main(prog="harness")


if __name__ == "__main__":
    sys.exit(main())
