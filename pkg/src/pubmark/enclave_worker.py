"""Out-of-process enclave runner.

The prover host launches this module as a child process and shuttles framed
messages over stdin/stdout. Secrets, keys, and assets only ever exist inside
this process; the host observes attestation frames, sealed blobs, token
fetch requests, and the cache-note result bit.

Channel frame types beyond the public wire set, defined in enclave:

    0xE2 FETCH       id:32B                        worker -> host
    0xE3 FETCH_RES   found flag + token record     host -> worker
    0xE5 CACHE_NOTE  res:u8                        worker -> host
    0xE6 RA_OK       (empty)                       worker -> host
"""

from __future__ import annotations

import argparse
import struct
import sys

from . import enclave, wire
from .enclave import (
    CACHE_NOTE,
    FETCH,
    FETCH_RES,
    RA_OK,
    EnclaveAbort,
    decode_fetch_res,
    initialize,
    verify_program,
)
from .wire import AbortCode, MsgType


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="pubmark-enclave-worker")
    ap.add_argument("--manufacturer-key", required=True)
    ap.add_argument("--mode", choices=("tee", "tee-direct"), required=True)
    ap.add_argument("--idgen-check", type=int, default=0)
    args = ap.parse_args(argv)

    ssk = enclave.load_manufacturer_private(args.manufacturer_key)
    program = verify_program(args.mode, bool(args.idgen_check))

    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer
    session = None

    def reply(msg_type, payload=b""):
        wire.write_frame_io(stdout, msg_type, payload)

    while True:
        try:
            msg_type, payload = wire.read_frame_io(stdin)
        except EOFError:
            return 0

        if msg_type == MsgType.RA_HELLO:
            hello = wire.RaHello.decode(payload)
            report, session = initialize(program, ssk, hello.client_nonce)
            reply(MsgType.RA_REPORT, wire.RaReport(report.measurement, report.epk, report.sig).encode())
        elif msg_type == MsgType.RA_FINISH:
            fin = wire.RaFinish.decode(payload)
            if session is not None and session.finish(fin.client_epk, fin.mac):
                reply(RA_OK)
            else:
                reply(MsgType.ABORT, wire.Abort(AbortCode.AUTH_FAIL).encode())
        elif msg_type == MsgType.VERIFY_REQ:
            if session is None or session.channel is None:
                reply(MsgType.ABORT, wire.Abort(AbortCode.AUTH_FAIL).encode())
                continue

            def fetch(asset_id: bytes):
                reply(FETCH, asset_id)
                ft, fp = wire.read_frame_io(stdin)
                if ft != FETCH_RES:
                    raise EnclaveAbort(AbortCode.INTERNAL, "bad fetch reply")
                return decode_fetch_res(fp)

            try:
                sealed = session.resume(
                    "verify",
                    payload,
                    fetch=fetch,
                    mode=args.mode,
                    idgen_check=bool(args.idgen_check),
                )
                if session.last_result is not None:
                    reply(CACHE_NOTE, struct.pack(">B", session.last_result))
                reply(MsgType.VERIFY_RES, sealed)
            except EnclaveAbort as exc:
                reply(MsgType.ABORT, wire.Abort(exc.code).encode())
            finally:
                session.erase_all()
        else:
            reply(MsgType.ABORT, wire.Abort(AbortCode.MALFORMED).encode())


if __name__ == "__main__":
    sys.exit(main())
