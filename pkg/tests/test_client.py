import base64
import json
import os
import subprocess
import sys
import time

import pytest

from pubmark import harness
from pubmark.client import (
    ClientError,
    OwnershipBundle,
    RegistrationError,
    holder_verify,
    owner_generate,
    parse_addr,
)
from pubmark.enclave import AttestationError


def run_cli(*args, timeout=60):
    return subprocess.run(
        [sys.executable, "-m", "pubmark.cli", *args],
        capture_output=True,
        text=True,
        timeout=timeout,
    )


class TestBundle:
    def test_json_schema_fields(self, local_prover, freqy_asset, tmp_path, rng):
        result = owner_generate(
            freqy_asset, "freqywm", tmp_path / "o", local_prover.addr,
            manufacturer_pvk=local_prover.manufacturer_pub, rng=rng,
        )
        doc = json.loads(open(result.bundle_path).read())
        assert doc["version"] == 1
        assert doc["scheme"] == "freqywm"
        bytes.fromhex(doc["id"])
        base64.b64decode(doc["tk_h"])
        assert os.path.exists(doc["asset_path"])

    def test_roundtrip(self, tmp_path):
        bundle = OwnershipBundle(
            asset_id=b"\x01" * 32,
            scheme="obt",
            mode="tee-direct",
            tk_h=b"\x02" * 48,
            asset_path="/tmp/x.csv",
            prover="127.0.0.1:1",
            measurement=b"\x03" * 32,
            manufacturer_pvk=b"\x04" * 32,
            license_text="no resale",
        )
        path = tmp_path / "b.json"
        bundle.save(path)
        assert OwnershipBundle.load(path) == bundle

    def test_parse_addr(self):
        assert parse_addr("127.0.0.1:8080") == ("127.0.0.1", 8080)
        with pytest.raises(ClientError):
            parse_addr("nope")


class TestOwnerGenerate:
    def test_unreachable_prover_writes_nothing(self, freqy_asset, tmp_path, rng):
        out_dir = tmp_path / "never"
        with pytest.raises(RegistrationError):
            owner_generate(freqy_asset, "freqywm", out_dir, "127.0.0.1:1", rng=rng)
        assert not out_dir.exists()

    def test_keystore_written(self, local_prover, freqy_asset, tmp_path, rng):
        result = owner_generate(
            freqy_asset, "freqywm", tmp_path / "o", local_prover.addr,
            manufacturer_pvk=local_prover.manufacturer_pub, rng=rng,
        )
        keystore = json.loads(open(result.keystore_path).read())
        assert keystore["scheme"] == "freqywm"
        assert "K" in keystore and "pairs" in keystore

    def test_obt_2pc_unsupported(self, local_prover, obt_asset, tmp_path, rng):
        with pytest.raises(ClientError):
            owner_generate(obt_asset, "obt", tmp_path / "o", local_prover.addr, mode="2pc", rng=rng)


class TestModeMatrix:
    @pytest.mark.parametrize("scheme", ["freqywm", "obt"])
    def test_direct_share_mode_verifies(self, scheme, local_prover_direct, tmp_path, rng):
        asset = tmp_path / ("a.txt" if scheme == "freqywm" else "a.csv")
        if scheme == "freqywm":
            harness.make_freqy_asset(asset, rng, distinct=400, draws=3000)
        else:
            harness.make_obt_asset(asset, rng, rows=600)
        result = owner_generate(
            asset, scheme, tmp_path / "o", local_prover_direct.addr, mode="tee-direct",
            manufacturer_pvk=local_prover_direct.manufacturer_pub, rng=rng,
        )
        outcome = holder_verify(result.bundle, result.asset_path, use_cache=False)
        assert outcome.valid is True


class TestAttestationPins:
    def test_measurement_pin_mismatch_sends_nothing(self, local_prover, freqy_asset, tmp_path, rng):
        result = owner_generate(
            freqy_asset, "freqywm", tmp_path / "o", local_prover.addr,
            manufacturer_pvk=local_prover.manufacturer_pub, rng=rng,
        )
        before = local_prover.service.counters["enclave_invocations"]
        with pytest.raises(AttestationError):
            holder_verify(
                result.bundle,
                result.asset_path,
                use_cache=False,
                expected_measurement=b"\x66" * 32,
            )
        assert local_prover.service.counters["enclave_invocations"] == before

    def test_wrong_manufacturer_key_rejected(self, local_prover, freqy_asset, tmp_path, rng):
        from pubmark import crypto

        result = owner_generate(
            freqy_asset, "freqywm", tmp_path / "o", local_prover.addr,
            manufacturer_pvk=local_prover.manufacturer_pub, rng=rng,
        )
        _, other_pvk = crypto.gen_signing_keypair()
        with pytest.raises(AttestationError):
            holder_verify(
                result.bundle, result.asset_path, use_cache=False, manufacturer_pvk=other_pvk
            )


class TestHolderEfficiency:
    def test_holder_cpu_under_100ms(self, tmp_path, rng):
        """Holder-side friendliness: CPU time per verification stays small.

        The prover runs in a separate process so process_time only counts the
        holder's own work.
        """
        workdir = tmp_path / "p"
        os.makedirs(workdir)
        from pubmark.enclave import save_manufacturer_keys
        from pubmark.config import ServiceConfig

        _, pvk = save_manufacturer_keys(workdir / "m.key", workdir / "m.pub")
        port = _free_port()
        cfg = ServiceConfig(
            mode="tee",
            manufacturer_key=str(workdir / "m.key"),
            store_path=str(workdir / "t.db"),
            port=port,
        )
        (workdir / "prover.json").write_text(cfg.to_json())
        proc = subprocess.Popen(
            [sys.executable, "-m", "pubmark.cli", "prover", "serve", "--config",
             str(workdir / "prover.json")],
            stdout=subprocess.PIPE,
            text=True,
        )
        try:
            assert "listening" in proc.stdout.readline()
            asset = tmp_path / "a.txt"
            harness.make_freqy_asset(asset, rng, distinct=400, draws=3000)
            result = owner_generate(
                asset, "freqywm", tmp_path / "o", f"127.0.0.1:{port}",
                manufacturer_pvk=pvk, rng=rng,
            )
            holder_verify(result.bundle, result.asset_path, use_cache=False)  # warm
            runs = 10
            cpu0 = time.process_time()
            for _ in range(runs):
                outcome = holder_verify(result.bundle, result.asset_path, use_cache=False)
                assert outcome.valid is True
            cpu_per_run = (time.process_time() - cpu0) / runs
            assert cpu_per_run < 0.100, f"holder CPU {cpu_per_run * 1e3:.1f} ms per verification"
        finally:
            proc.terminate()
            proc.wait(timeout=10)


def _free_port():
    import socket

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class TestCliFlows:
    @pytest.fixture
    def served(self, tmp_path, rng):
        from pubmark.config import ServiceConfig
        from pubmark.enclave import save_manufacturer_keys

        workdir = tmp_path / "svc"
        os.makedirs(workdir)
        _, _ = save_manufacturer_keys(workdir / "m.key", workdir / "m.pub")
        port = _free_port()
        cfg = ServiceConfig(
            mode="tee",
            manufacturer_key=str(workdir / "m.key"),
            store_path=str(workdir / "t.db"),
            port=port,
        )
        (workdir / "prover.json").write_text(cfg.to_json())
        proc = subprocess.Popen(
            [sys.executable, "-m", "pubmark.cli", "prover", "serve", "--config",
             str(workdir / "prover.json")],
            stdout=subprocess.PIPE,
            text=True,
        )
        assert "listening" in proc.stdout.readline()
        asset = tmp_path / "asset.txt"
        harness.make_freqy_asset(asset, rng, distinct=400, draws=3000)
        yield workdir, port, asset
        proc.terminate()
        proc.wait(timeout=10)

    def test_generate_verify_exit_codes(self, served, tmp_path):
        workdir, port, asset = served
        gen = run_cli(
            "owner", "generate", "--asset", str(asset), "--scheme", "freqywm",
            "--out-dir", str(tmp_path / "out"), "--prover", f"127.0.0.1:{port}",
            "--manufacturer-key", str(workdir / "m.pub"),
        )
        assert gen.returncode == 0, gen.stderr
        bundle = str(tmp_path / "out" / "bundle.json")
        suspect = str(tmp_path / "out" / "watermarked.txt")

        ok = run_cli("holder", "verify", "--bundle", bundle, "--suspect", suspect,
                     "--prover", f"127.0.0.1:{port}")
        assert ok.returncode == 0, ok.stderr
        assert "Valid" in ok.stdout
        for task in ("establish_session", "receive_data", "reconstruct_secret",
                     "detect_watermark", "terminate_session"):
            assert task in ok.stdout

        other = tmp_path / "other.txt"
        import random as _r

        harness.make_freqy_asset(other, _r.Random(4242), distinct=400, draws=3000)
        bad = run_cli("holder", "verify", "--bundle", bundle, "--suspect", str(other),
                      "--prover", f"127.0.0.1:{port}", "--no-cache")
        assert bad.returncode == 1, (bad.stdout, bad.stderr)
        assert "Invalid" in bad.stdout

    def test_attestation_failure_exit_code(self, served, tmp_path):
        workdir, port, asset = served
        gen = run_cli(
            "owner", "generate", "--asset", str(asset), "--scheme", "freqywm",
            "--out-dir", str(tmp_path / "out2"), "--prover", f"127.0.0.1:{port}",
            "--manufacturer-key", str(workdir / "m.pub"),
        )
        assert gen.returncode == 0
        bundle = str(tmp_path / "out2" / "bundle.json")
        suspect = str(tmp_path / "out2" / "watermarked.txt")
        res = run_cli(
            "holder", "verify", "--bundle", bundle, "--suspect", suspect,
            "--prover", f"127.0.0.1:{port}", "--no-cache",
            "--expected-measurement", "ab" * 32,
        )
        assert res.returncode == 2
        assert "attestation failed" in res.stderr

    def test_usage_errors_exit_3(self):
        res = run_cli("holder", "verify", "--bundle")
        assert res.returncode == 3
        res2 = run_cli("owner", "generate")
        assert res2.returncode == 3

    def test_unreachable_prover_exit_2(self, tmp_path, rng):
        asset = tmp_path / "a.txt"
        harness.make_freqy_asset(asset, rng, distinct=300, draws=2000)
        res = run_cli(
            "owner", "generate", "--asset", str(asset), "--scheme", "freqywm",
            "--out-dir", str(tmp_path / "o"), "--prover", "127.0.0.1:9",
        )
        assert res.returncode == 2
        assert "registration failed" in res.stderr


def test_mode_env_var_overrides_config(tmp_path, monkeypatch):
    from pubmark.config import ServiceConfig

    cfg = ServiceConfig(mode="tee", store_path="x", manufacturer_key="y")
    path = tmp_path / "cfg.json"
    path.write_text(cfg.to_json())
    monkeypatch.setenv("PUPPY_MODE", "tee-direct")
    loaded = ServiceConfig.from_json_file(path)
    assert loaded.mode == "tee-direct"
    monkeypatch.setenv("PUPPY_MODE", "bogus")
    with pytest.raises(ValueError):
        ServiceConfig.from_json_file(path)
    monkeypatch.delenv("PUPPY_MODE")
    assert ServiceConfig.from_json_file(path).mode == "tee"
