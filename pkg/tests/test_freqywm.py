import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pubmark import crypto, freqywm
from pubmark.harness import make_freqy_dataset

CHI2_999_DOF256 = 331.6564


def test_preprocess_counts():
    assert freqywm.preprocess([b"a", b"a", b"b"]) == Counter({b"a": 2, b"b": 1})
    assert freqywm.preprocess([]) == Counter()


@given(st.lists(st.sampled_from([b"x", b"y", b"z", b"w"]), max_size=60))
@settings(max_examples=60, deadline=None)
def test_preprocess_order_insensitive(tokens):
    shuffled = list(tokens)
    random.Random(1).shuffle(shuffled)
    assert freqywm.preprocess(tokens) == freqywm.preprocess(shuffled)


class TestPairSelector:
    def test_deterministic(self):
        k = b"\x07" * 32
        assert freqywm.pair_selector(b"u", b"v", k, 257) == freqywm.pair_selector(
            b"u", b"v", k, 257
        )

    def test_range(self):
        k = crypto.gen_key()
        rng = random.Random(2)
        for _ in range(500):
            s = freqywm.pair_selector(rng.randbytes(4), rng.randbytes(4), k, 257)
            assert 1 <= s <= 257

    def test_modulus_too_small(self):
        with pytest.raises(freqywm.WatermarkError):
            freqywm.pair_selector(b"u", b"v", b"k" * 32, 1)

    def test_uniform_chi_square(self):
        # residue 0 maps onto z, so the selector is uniform over [1, z]
        k = b"\x55" * 32
        rng = random.Random(3)
        z = 257
        counts = Counter(
            freqywm.pair_selector(rng.randbytes(6), rng.randbytes(6), k, z)
            for _ in range(10_000)
        )
        expected = 10_000 / z
        chi2 = sum((counts.get(v, 0) - expected) ** 2 / expected for v in range(1, z + 1))
        assert chi2 < CHI2_999_DOF256


def zipf_dataset(seed=11, distinct=1000, draws=8000):
    return make_freqy_dataset(random.Random(seed), distinct=distinct, draws=draws)


class TestInsert:
    def test_roundtrip_all_pairs_hold(self):
        dataset = zipf_dataset()
        key = crypto.gen_key()
        dw, secret = freqywm.insert(dataset, key, num_pairs=30, tolerance=0)
        params = freqywm.DetectParams(tolerance=0, min_pairs=30)
        assert freqywm.detect(dw, secret, params)
        assert len(secret.pairs) == 30

    def test_distinct_frequency_dataset_requires_edits(self):
        # strictly decreasing frequencies leave no free pairs in the window
        dataset = []
        for i in range(80):
            dataset.extend([f"t{i:03d}".encode()] * (500 - 6 * i))
        key = b"\x13" * 32
        dw, secret = freqywm.insert(dataset, key, num_pairs=10, tolerance=0)
        assert len(dw) > len(dataset)
        assert freqywm.detect(dw, secret, freqywm.DetectParams(0, 10))

    def test_satisfied_pair_consumes_no_budget(self):
        # two tokens at equal frequency: difference 0 is 0 mod anything
        dataset = [b"a", b"b", b"c", b"d"] * 5
        dw, secret = freqywm.insert(dataset, b"\x01" * 32, num_pairs=2, tolerance=0, budget=0)
        assert sorted(dw) == sorted(dataset)

    def test_budget_exhaustion_lists_achieved_pairs(self):
        dataset = []
        for i in range(60):
            dataset.extend([f"t{i:03d}".encode()] * (400 - 6 * i))
        with pytest.raises(freqywm.InsertBudgetError) as exc_info:
            freqywm.insert(dataset, b"\x29" * 32, num_pairs=20, tolerance=0, budget=3)
        assert len(exc_info.value.achieved) < 20

    def test_too_few_distinct_tokens(self):
        with pytest.raises(freqywm.WatermarkError):
            freqywm.insert([b"a", b"b"] * 10, b"\x00" * 32, num_pairs=4)


class TestDetect:
    def test_empty_pair_list_rejects(self):
        secret = freqywm.FreqySecret(pairs=[], key=b"\x00" * 32, modulus=257)
        assert not freqywm.detect([b"a"], secret, freqywm.DetectParams(0, 1))

    def test_constructed_congruence(self):
        # find a key whose selector for (a, b) is 3, then 10-7=3 = 0 mod 3
        key = None
        for i in range(10_000):
            cand = i.to_bytes(32, "big")
            if freqywm.pair_selector(b"a", b"b", cand, 5) == 3:
                key = cand
                break
        assert key is not None
        secret = freqywm.FreqySecret(pairs=[(b"a", b"b")], key=key, modulus=5)
        dataset = [b"a"] * 10 + [b"b"] * 7
        assert freqywm.detect(dataset, secret, freqywm.DetectParams(0, 1))
        # 10-6=4, 4 mod 3 = 1 > 0
        assert not freqywm.detect(
            [b"a"] * 10 + [b"b"] * 6, secret, freqywm.DetectParams(0, 1)
        )

    def test_missing_tokens_do_not_count(self):
        secret = freqywm.FreqySecret(pairs=[(b"a", b"zz")], key=b"\x00" * 32, modulus=257)
        assert not freqywm.detect([b"a"] * 4, secret, freqywm.DetectParams(5, 1))

    def test_permutation_invariance(self):
        dataset = zipf_dataset(seed=21, distinct=300, draws=2000)
        dw, secret = freqywm.insert(dataset, crypto.gen_key(), num_pairs=10)
        params = freqywm.DetectParams(0, 10)
        shuffled = list(dw)
        random.Random(7).shuffle(shuffled)
        assert freqywm.detect(shuffled, secret, params)

    def test_monotonicity_in_tolerance_and_min_pairs(self):
        dataset = zipf_dataset(seed=31, distinct=300, draws=2000)
        dw, secret = freqywm.insert(dataset, crypto.gen_key(), num_pairs=12)
        hist = freqywm.preprocess(dw)
        base = freqywm.detect_count(hist, secret, 0)
        for t in (0, 1, 2, 5, 50):
            assert freqywm.detect_count(hist, secret, t) >= base
        # accepted at k implies accepted at every smaller k
        for k in range(1, base + 1):
            assert freqywm.detect(dw, secret, freqywm.DetectParams(0, k))

    def test_negative_difference_uses_mathematical_modulus(self):
        key = b"\x01" * 32
        s = freqywm.pair_selector(b"p", b"q", key, 257)
        secret = freqywm.FreqySecret(pairs=[(b"p", b"q")], key=key, modulus=257)
        # f_p - f_q = -s  ->  (-s) mod s = 0
        dataset = [b"p"] * 2 + [b"q"] * (2 + s)
        assert freqywm.detect(dataset, secret, freqywm.DetectParams(0, 1))


def test_robustness_to_random_deletion():
    # harness knobs for the smoke property: delete 1% of tokens, detect with
    # tolerance 1 to absorb off-by-one frequency drift; accept rate >= 90%
    deletion_rate = 0.01
    accepted = 0
    trials = 20
    for trial in range(trials):
        rng = random.Random(1000 + trial)
        dataset = make_freqy_dataset(rng, distinct=800, draws=6000)
        dw, secret = freqywm.insert(dataset, rng.randbytes(32), num_pairs=30)
        kept = [tok for tok in dw if rng.random() > deletion_rate]
        params = freqywm.DetectParams(tolerance=1, min_pairs=freqywm.default_min_pairs(30))
        if freqywm.detect(kept, secret, params):
            accepted += 1
    assert accepted >= 0.9 * trials


def test_secret_serialization_roundtrip():
    secret = freqywm.FreqySecret(
        pairs=[(b"a", b"b"), (b"c", b"d")],
        key=b"\x42" * 32,
        modulus=257,
        tolerance=1,
        min_pairs=2,
        id_aux={"owner": "b3duZXI=", "date": "2026-01-01"},
    )
    again = freqywm.FreqySecret.from_json(secret.to_json())
    assert again == secret


def test_secret_serialized_size_is_kilobyte_scale():
    dataset = zipf_dataset(seed=41)
    _, secret = freqywm.insert(dataset, crypto.gen_key(), num_pairs=30)
    size = len(secret.to_json().encode())
    assert 200 < size < 8192


def test_dataset_file_roundtrip(tmp_path):
    dataset = [b"alpha", b"beta", b"alpha"]
    path = tmp_path / "d.txt"
    freqywm.save_dataset(path, dataset)
    assert freqywm.load_dataset(path) == dataset
    blob = freqywm.serialize_dataset(dataset)
    assert freqywm.deserialize_dataset(blob) == dataset
