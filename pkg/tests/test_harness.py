import random

import pytest

from pubmark import harness
from pubmark.client import TASKS


@pytest.fixture(scope="module")
def small_rows():
    # desk-scale smoke run; the acceptance suite does the full-size study
    return harness.run_cache_experiment(
        capacities=(10, 50, 250), pairs=250, trials=10, seed=3, requests=500
    )


class TestCacheExperiment:
    def test_hit_ratio_in_unit_interval(self, small_rows):
        assert all(0.0 <= r["mean_hit_ratio"] <= 1.0 for r in small_rows)

    def test_fixed_similarity_full_capacity_hits_everything(self, small_rows):
        full = next(
            r for r in small_rows if r["policy"] == "LRU-Base" and r["capacity"] == 250
        )
        assert full["mean_hit_ratio"] == 1.0

    def test_fixed_similarity_monotone_in_capacity(self, small_rows):
        base = sorted(
            ((r["capacity"], r["mean_hit_ratio"]) for r in small_rows if r["policy"] == "LRU-Base")
        )
        ratios = [hr for _, hr in base]
        assert ratios == sorted(ratios)

    def test_proportional_beats_flexible_baseline(self, small_rows):
        import statistics

        prop = statistics.mean(
            r["mean_hit_ratio"] for r in small_rows if r["policy"] == "LRU-Prop"
        )
        base_r = statistics.mean(
            r["mean_hit_ratio"] for r in small_rows if r["policy"] == "LRU-Base-R"
        )
        assert prop > 10 * base_r

    def test_deterministic_under_fixed_seed(self):
        kw = dict(capacities=(10, 50), pairs=100, trials=5, seed=11, requests=300)
        assert harness.run_cache_experiment(**kw) == harness.run_cache_experiment(**kw)

    def test_csv_and_plots_emitted(self, tmp_path, small_rows):
        harness.write_cache_csv(small_rows, tmp_path / "hr.csv")
        text = (tmp_path / "hr.csv").read_text()
        assert text.startswith("policy,capacity,mean_hit_ratio,trials")
        assert len(text.splitlines()) == len(small_rows) + 1
        paths = harness.plot_cache(small_rows, tmp_path)
        assert all(p.endswith((".svg", ".png")) for p in paths)


class TestLatencyBreakdown:
    @pytest.mark.parametrize("scheme,mode", [
        ("freqywm", "plain"),
        ("obt", "plain"),
        ("freqywm", "tee"),
    ])
    def test_schema_all_tasks_present(self, tmp_path, scheme, mode):
        rows = harness.run_latency_breakdown(scheme, mode, tmp_path, runs=3, seed=5)
        tasks = {r["task"] for r in rows}
        assert tasks == set(TASKS) | {"total"}
        assert all(r["mean_ms"] >= 0.0 for r in rows)

    def test_task_sum_matches_total_within_5pct(self, tmp_path):
        rows = harness.run_latency_breakdown("freqywm", "plain", tmp_path, runs=3, seed=6)
        total = next(r["mean_ms"] for r in rows if r["task"] == "total")
        parts = sum(r["mean_ms"] for r in rows if r["task"] != "total")
        assert abs(parts - total) <= 0.05 * total

    def test_reconstruct_nonzero_and_small_next_to_establishment(self, tmp_path):
        rows = harness.run_latency_breakdown("freqywm", "tee", tmp_path, runs=5, seed=9)
        by_task = {r["task"]: r["mean_ms"] for r in rows}
        assert by_task["reconstruct_secret"] > 0.0
        assert by_task["reconstruct_secret"] < by_task["establish_session"]

    def test_csv_and_plot(self, tmp_path):
        rows = harness.latency_study("freqywm", "plain", tmp_path, runs=2, seed=8)
        csv_path = tmp_path / "latency_freqywm_plain.csv"
        assert csv_path.exists()
        assert (tmp_path / "latency_breakdown.svg").exists()
        assert (tmp_path / "latency_breakdown.png").exists()
        assert rows


def test_freqy_dataset_generator_properties():
    rng = random.Random(1)
    data = harness.make_freqy_dataset(rng, distinct=200, draws=1000)
    assert len(set(data)) == 200
    rng2 = random.Random(2)
    other = harness.make_freqy_dataset(rng2, distinct=200, draws=1000)
    assert set(data).isdisjoint(set(other))  # fresh vocabulary per call
