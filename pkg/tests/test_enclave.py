import base64
import hashlib

import pytest

from pubmark import crypto, freqywm, wire
from pubmark.enclave import (
    AttestationError,
    AttestationReport,
    EnclaveAbort,
    EnclaveProgram,
    HolderSession,
    SecureChannel,
    DIR_CLIENT,
    DIR_ENCLAVE,
    initialize,
    load_manufacturer_private,
    load_manufacturer_public,
    save_manufacturer_keys,
    verify_program,
)
from pubmark.wire import AbortCode


@pytest.fixture(scope="module")
def manufacturer():
    return crypto.gen_signing_keypair()


@pytest.fixture
def program():
    return verify_program("tee", idgen_check=False)


def complete_handshake(program, ssk, pvk):
    holder = HolderSession(program.measurement(), pvk)
    report, session = initialize(program, ssk, holder.hello())
    mac = holder.finish(report)
    assert session.finish(holder.client_epk, mac)
    return holder, session


class TestMeasurement:
    def test_stable_for_same_config(self):
        a = EnclaveProgram("p", "1", {"mode": "tee"})
        b = EnclaveProgram("p", "1", {"mode": "tee"})
        assert a.measurement() == b.measurement()

    def test_config_changes_measurement(self):
        a = verify_program("tee", idgen_check=False)
        b = verify_program("tee", idgen_check=True)
        c = verify_program("tee-direct", idgen_check=False)
        assert len({a.measurement(), b.measurement(), c.measurement()}) == 3


class TestAttestation:
    def test_report_verifies(self, manufacturer, program):
        ssk, pvk = manufacturer
        report, _ = initialize(program, ssk, b"\x00" * 32)
        assert report.verify(pvk)
        assert report.measurement == program.measurement()

    def test_two_initializations_fresh_ephemeral_keys(self, manufacturer, program):
        ssk, _ = manufacturer
        r1, _ = initialize(program, ssk, b"\x00" * 32)
        r2, _ = initialize(program, ssk, b"\x00" * 32)
        assert r1.measurement == r2.measurement
        assert r1.epk != r2.epk

    def test_tampered_measurement_rejected(self, manufacturer, program):
        ssk, pvk = manufacturer
        report, _ = initialize(program, ssk, b"\x00" * 32)
        forged = AttestationReport(b"\x00" * 32, report.epk, report.sig)
        assert not forged.verify(pvk)

    def test_wrong_manufacturer_key_rejected(self, program):
        other_ssk, _ = crypto.gen_signing_keypair()
        _, honest_pvk = crypto.gen_signing_keypair()
        report, _ = initialize(program, other_ssk, b"\x00" * 32)
        assert not report.verify(honest_pvk)


class TestRemoteAttestation:
    def test_honest_flow_derives_equal_keys(self, manufacturer, program):
        ssk, pvk = manufacturer
        holder, session = complete_handshake(program, ssk, pvk)
        sealed = holder.channel.seal(b"ping")
        assert session.channel.open(sealed) == b"ping"
        back = session.channel.seal(b"pong")
        assert holder.channel.open(back) == b"pong"

    def test_measurement_pin_mismatch_aborts_before_sending(self, manufacturer, program):
        ssk, pvk = manufacturer
        holder = HolderSession(b"\x13" * 32, pvk)
        report, _ = initialize(program, ssk, holder.hello())
        with pytest.raises(AttestationError):
            holder.finish(report)

    def test_mitm_key_substitution_fails_signature(self, manufacturer, program):
        ssk, pvk = manufacturer
        holder = HolderSession(program.measurement(), pvk)
        report, _ = initialize(program, ssk, holder.hello())
        attacker = HolderSession(program.measurement(), pvk)
        swapped = AttestationReport(report.measurement, attacker.client_epk, report.sig)
        with pytest.raises(AttestationError):
            holder.finish(swapped)

    def test_session_keys_unique_across_sessions(self, manufacturer, program):
        ssk, pvk = manufacturer
        keys = set()
        for _ in range(1000):
            holder = HolderSession(program.measurement(), pvk)
            report, session = initialize(program, ssk, holder.hello())
            holder.finish(report)
            keys.add(holder.channel._key)
        assert len(keys) == 1000

    def test_bad_mac_rejected(self, manufacturer, program):
        ssk, pvk = manufacturer
        holder = HolderSession(program.measurement(), pvk)
        report, session = initialize(program, ssk, holder.hello())
        mac = holder.finish(report)
        assert not session.finish(holder.client_epk, bytes(16))
        assert session.finish(holder.client_epk, mac)


class TestSecureChannel:
    def test_replay_detected(self):
        key = crypto.gen_key()
        tx = SecureChannel(key, DIR_CLIENT, DIR_ENCLAVE)
        rx = SecureChannel(key, DIR_ENCLAVE, DIR_CLIENT)
        sealed = tx.seal(b"first")
        assert rx.open(sealed) == b"first"
        with pytest.raises(EnclaveAbort) as exc_info:
            rx.open(sealed)
        assert exc_info.value.code == AbortCode.REPLAY

    def test_wrong_direction_rejected(self):
        key = crypto.gen_key()
        tx = SecureChannel(key, DIR_CLIENT, DIR_ENCLAVE)
        rx = SecureChannel(key, DIR_CLIENT, DIR_ENCLAVE)  # same direction both ways
        with pytest.raises(EnclaveAbort):
            rx.open(tx.seal(b"x"))

    def test_tampered_body_rejected(self):
        key = crypto.gen_key()
        tx = SecureChannel(key, DIR_CLIENT, DIR_ENCLAVE)
        rx = SecureChannel(key, DIR_ENCLAVE, DIR_CLIENT)
        blob = bytearray(tx.seal(b"payload"))
        blob[-1] ^= 1
        with pytest.raises(EnclaveAbort) as exc_info:
            rx.open(bytes(blob))
        assert exc_info.value.code == AbortCode.AUTH_FAIL


def make_record(mode="tee", idgen_aux=None, tolerance=0):
    """A registered freqywm token record plus matching holder inputs."""
    dataset = [b"a", b"a", b"b", b"b", b"c", b"c", b"d", b"d"]
    key = crypto.gen_key()
    dw, secret = freqywm.insert(dataset, key, num_pairs=2, tolerance=tolerance)
    secret.min_pairs = 2
    if idgen_aux is not None:
        secret.id_aux = idgen_aux
    blob = secret.to_json().encode()
    dw_bytes = freqywm.serialize_dataset(dw)
    if mode == "tee":
        enc_key = crypto.gen_key()
        csec = crypto.encrypt(enc_key, blob).to_bytes()
        s_h, s_p = crypto.share(enc_key)
    else:
        csec = b""
        s_h, s_p = crypto.share(blob)
    return dw_bytes, s_h.data, (1, s_p.data, csec)


class TestVerifyEntry:
    def run_verify(self, manufacturer, mode, record, request, idgen_check=False):
        ssk, pvk = manufacturer
        program = verify_program(mode, idgen_check)
        holder, session = complete_handshake(program, ssk, pvk)
        sealed = holder.channel.seal(request)
        reply = session.resume(
            "verify", sealed, fetch=lambda _id: record, mode=mode, idgen_check=idgen_check
        )
        return holder.channel.open(reply), session

    @pytest.mark.parametrize("mode", ["tee", "tee-direct"])
    def test_valid_roundtrip(self, manufacturer, mode):
        dw, tkh, record = make_record(mode)
        request = wire.encode_verify_request(b"\x01" * 32, dw, tkh)
        plain, session = self.run_verify(manufacturer, mode, record, request)
        res, ext = wire.decode_verify_result(plain)
        assert res == 1
        assert ext is not None and ext[0] >= 0 and ext[1] > 0
        assert session.last_result == 1

    def test_unknown_id_aborts(self, manufacturer):
        dw, tkh, _ = make_record()
        request = wire.encode_verify_request(b"\x01" * 32, dw, tkh)
        ssk, pvk = manufacturer
        program = verify_program("tee", False)
        holder, session = complete_handshake(program, ssk, pvk)
        with pytest.raises(EnclaveAbort) as exc_info:
            session.resume(
                "verify",
                holder.channel.seal(request),
                fetch=lambda _id: None,
                mode="tee",
                idgen_check=False,
            )
        assert exc_info.value.code == AbortCode.UNKNOWN_ID

    def test_unregistered_entry_aborts(self, manufacturer):
        ssk, pvk = manufacturer
        program = verify_program("tee", False)
        holder, session = complete_handshake(program, ssk, pvk)
        with pytest.raises(EnclaveAbort) as exc_info:
            session.resume("exfiltrate", holder.channel.seal(b"x"))
        assert exc_info.value.code == AbortCode.BAD_ENTRY

    def test_replayed_request_aborts(self, manufacturer):
        dw, tkh, record = make_record()
        request = wire.encode_verify_request(b"\x01" * 32, dw, tkh)
        ssk, pvk = manufacturer
        program = verify_program("tee", False)
        holder, session = complete_handshake(program, ssk, pvk)
        sealed = holder.channel.seal(request)
        session.resume("verify", sealed, fetch=lambda _id: record, mode="tee", idgen_check=False)
        with pytest.raises(EnclaveAbort) as exc_info:
            session.resume("verify", sealed, fetch=lambda _id: record, mode="tee", idgen_check=False)
        assert exc_info.value.code == AbortCode.REPLAY

    def test_wrong_holder_share_aborts_auth(self, manufacturer):
        dw, tkh, record = make_record("tee")
        bad_tkh = bytes(len(tkh))
        request = wire.encode_verify_request(b"\x01" * 32, dw, bad_tkh)
        ssk, pvk = manufacturer
        program = verify_program("tee", False)
        holder, session = complete_handshake(program, ssk, pvk)
        with pytest.raises(EnclaveAbort) as exc_info:
            session.resume(
                "verify",
                holder.channel.seal(request),
                fetch=lambda _id: record,
                mode="tee",
                idgen_check=False,
            )
        assert exc_info.value.code == AbortCode.AUTH_FAIL

    def test_idgen_consistency_check(self, manufacturer):
        owner = b"owner-x"
        date = "2026-08-08"
        aux = {"owner": base64.b64encode(owner).decode(), "date": date}
        dw, tkh, record = make_record("tee", idgen_aux=aux)
        good_id = crypto.idgen(owner, hashlib.sha256(dw).digest(), date.encode())
        plain, _ = self.run_verify(
            manufacturer,
            "tee",
            record,
            wire.encode_verify_request(good_id, dw, tkh),
            idgen_check=True,
        )
        assert wire.decode_verify_result(plain)[0] == 1

        ssk, pvk = manufacturer
        program = verify_program("tee", True)
        holder, session = complete_handshake(program, ssk, pvk)
        with pytest.raises(EnclaveAbort) as exc_info:
            session.resume(
                "verify",
                holder.channel.seal(wire.encode_verify_request(b"\x09" * 32, dw, tkh)),
                fetch=lambda _id: record,
                mode="tee",
                idgen_check=True,
            )
        assert exc_info.value.code == AbortCode.ID_MISMATCH


class TestEraseAll:
    def test_no_secret_residue_after_verify(self, manufacturer):
        dw, tkh, record = make_record("tee-direct")
        secret_blob = crypto.reconstruct(tkh, record[1])
        request = wire.encode_verify_request(b"\x01" * 32, dw, tkh)
        ssk, pvk = manufacturer
        program = verify_program("tee-direct", False)
        holder, session = complete_handshake(program, ssk, pvk)
        session.resume(
            "verify",
            holder.channel.seal(request),
            fetch=lambda _id: record,
            mode="tee-direct",
            idgen_check=False,
        )
        assert secret_blob in session.memory_snapshot()
        session.erase_all()
        snap = session.memory_snapshot()
        assert secret_blob not in snap
        assert dw not in snap
        assert tkh not in snap

    def test_erase_is_idempotent(self, manufacturer):
        ssk, pvk = manufacturer
        program = verify_program("tee", False)
        _, session = complete_handshake(program, ssk, pvk)
        session.track(b"sensitive")
        session.erase_all()
        session.erase_all()
        assert b"sensitive" not in session.memory_snapshot()

    def test_abort_path_also_erases(self, manufacturer):
        dw, tkh, record = make_record("tee")
        request = wire.encode_verify_request(b"\x01" * 32, dw, tkh)
        ssk, pvk = manufacturer
        program = verify_program("tee", False)
        holder, session = complete_handshake(program, ssk, pvk)

        def faulty_fetch(_id):
            raise EnclaveAbort(AbortCode.RATE_LIMITED, "injected fault")

        with pytest.raises(EnclaveAbort):
            session.resume(
                "verify",
                holder.channel.seal(request),
                fetch=faulty_fetch,
                mode="tee",
                idgen_check=False,
            )
        snap = session.memory_snapshot()
        assert dw not in snap and tkh not in snap


def test_manufacturer_key_files_roundtrip(tmp_path):
    priv, pub = tmp_path / "m.key", tmp_path / "m.pub"
    ssk, pvk = save_manufacturer_keys(priv, pub)
    assert load_manufacturer_private(priv) == ssk
    assert load_manufacturer_public(pub) == pvk
    assert "BEGIN PUBMARK MANUFACTURER" in priv.read_text()
