#!/usr/bin/env python3
"""One-file walkthrough: start a local prover, watermark an asset, hand the
holder its bundle, verify twice (the second answer comes from the cache),
then verify an unrelated asset.
"""

import random
import tempfile
from pathlib import Path

from pubmark import harness
from pubmark.client import holder_verify, owner_generate


def main() -> None:
    rng = random.Random()
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        asset = tmp / "dataset.txt"
        harness.make_freqy_asset(asset, rng)

        prover = harness.start_local_prover(tmp / "prover", mode="tee")
        print(f"prover listening on {prover.addr} (simulated enclave inline)")
        try:
            result = owner_generate(
                asset,
                "freqywm",
                tmp / "owner-out",
                prover.addr,
                manufacturer_pvk=prover.manufacturer_pub,
                rng=rng,
            )
            print(f"owner registered id {result.bundle.asset_id.hex()[:16]}... and went offline")

            outcome = holder_verify(result.bundle, result.asset_path)
            print(f"holder verification #1: {'Valid' if outcome.valid else 'Invalid'} "
                  f"({1e3 * outcome.total:.1f} ms, cache={outcome.served_from_cache})")

            outcome = holder_verify(result.bundle, result.asset_path)
            print(f"holder verification #2: {'Valid' if outcome.valid else 'Invalid'} "
                  f"(cache={outcome.served_from_cache})")

            unrelated = tmp / "unrelated.txt"
            harness.make_freqy_asset(unrelated, rng)
            outcome = holder_verify(result.bundle, unrelated, use_cache=False)
            print(f"unrelated asset: {'Valid' if outcome.valid else 'Invalid'}")
        finally:
            prover.stop()


if __name__ == "__main__":
    main()
