import random

import pytest

from pubmark import harness


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)


@pytest.fixture
def freqy_dataset(rng):
    return harness.make_freqy_dataset(rng, distinct=400, draws=3000)


@pytest.fixture
def freqy_asset(tmp_path, rng):
    path = tmp_path / "asset.txt"
    harness.make_freqy_asset(path, rng, distinct=400, draws=3000)
    return path


@pytest.fixture
def obt_asset(tmp_path, rng):
    path = tmp_path / "asset.csv"
    harness.make_obt_asset(path, rng, rows=600)
    return path


@pytest.fixture
def local_prover(tmp_path):
    """In-process prover in tee mode with an inline enclave."""
    prover = harness.start_local_prover(tmp_path / "prover", mode="tee")
    yield prover
    prover.stop()


@pytest.fixture
def local_prover_direct(tmp_path):
    prover = harness.start_local_prover(tmp_path / "prover-direct", mode="tee-direct")
    yield prover
    prover.stop()
