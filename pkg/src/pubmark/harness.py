"""Experiment harness: the cache hit-ratio study and the five-task latency
breakdown, both emitting CSV (the normative artifact) plus SVG/PNG plots.
"""

from __future__ import annotations

import csv
import os
import random
import statistics
import tempfile
import time
from dataclasses import dataclass
from typing import Optional

from . import crypto, freqywm, obtwm
from .cache import CacheEntry, LruTripleCache, ProportionalCache
from .client import TASKS, holder_verify, owner_generate
from .config import FreqyParams, ServiceConfig
from .enclave import save_manufacturer_keys
from .prover import ProverService

DEFAULT_CAPACITIES = (10, 20, 50, 100, 250)
DEFAULT_PAIRS = 250
DEFAULT_TRIALS = 100
DEFAULT_REQUESTS = 1000
DEFAULT_THRESHOLD = 70

POLICIES = ("LRU-Base", "LRU-Base-R", "LRU-Prop")


# --- cache study ---


@dataclass
class CacheWorkload:
    """One trial's material: entries to insert and the request stream.

    Each request re-asks one of the inserted (h, id) keys; fixed-similarity
    requests reuse the inserted similarity, flexible-similarity requests draw
    a fresh one per request.
    """

    entries: list[tuple[bytes, bytes, int, int]]  # (h, id, res, sim)
    request_keys: list[int]
    flexible_sims: list[int]


def generate_workload(
    rng: random.Random,
    pairs: int = DEFAULT_PAIRS,
    requests: int = DEFAULT_REQUESTS,
    threshold: int = DEFAULT_THRESHOLD,
) -> CacheWorkload:
    entries = [
        (
            rng.randbytes(32),
            rng.randbytes(32),
            rng.getrandbits(1),
            rng.randint(threshold, 100),
        )
        for _ in range(pairs)
    ]
    request_keys = [rng.randrange(pairs) for _ in range(requests)]
    flexible_sims = [rng.randint(0, 100) for _ in range(requests)]
    return CacheWorkload(entries, request_keys, flexible_sims)


def run_policy_trial(
    policy: str, capacity: int, workload: CacheWorkload, threshold: int = DEFAULT_THRESHOLD
) -> float:
    """Insert every entry, then replay the request stream; returns HT/R."""
    hits = 0
    if policy == "LRU-Prop":
        cache = ProportionalCache(capacity, threshold=float(threshold))
        for h, aid, res, sim in workload.entries:
            cache.put(CacheEntry(h=h, asset_id=aid, res=res, sim=float(sim)))
        for key, flex in zip(workload.request_keys, workload.flexible_sims):
            h, aid, _res, _sim = workload.entries[key]
            if cache.get(h, aid, float(flex)) is not None:
                hits += 1
    elif policy in ("LRU-Base", "LRU-Base-R"):
        lru = LruTripleCache(capacity)
        for h, aid, res, sim in workload.entries:
            lru.put(h, aid, res, float(sim))
        flexible = policy == "LRU-Base-R"
        for key, flex in zip(workload.request_keys, workload.flexible_sims):
            h, aid, _res, sim = workload.entries[key]
            asked = float(flex) if flexible else float(sim)
            if lru.get(h, aid, asked) is not None:
                hits += 1
    else:
        raise ValueError(f"unknown policy {policy!r}")
    return hits / len(workload.request_keys)


def run_cache_experiment(
    capacities=DEFAULT_CAPACITIES,
    pairs: int = DEFAULT_PAIRS,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    requests: int = DEFAULT_REQUESTS,
    threshold: int = DEFAULT_THRESHOLD,
    policies=POLICIES,
) -> list[dict]:
    """Mean hit ratio per (policy, capacity); one shared workload per trial so
    capacities and policies see identical request streams."""
    sums = {(p, c): 0.0 for p in policies for c in capacities}
    for trial in range(trials):
        rng = random.Random(seed * 1_000_003 + trial)
        workload = generate_workload(rng, pairs=pairs, requests=requests, threshold=threshold)
        for policy in policies:
            for capacity in capacities:
                sums[(policy, capacity)] += run_policy_trial(policy, capacity, workload, threshold)
    rows = [
        {
            "policy": policy,
            "capacity": capacity,
            "mean_hit_ratio": sums[(policy, capacity)] / trials,
            "trials": trials,
        }
        for policy in policies
        for capacity in capacities
    ]
    return rows


def write_cache_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["policy", "capacity", "mean_hit_ratio", "trials"])
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "mean_hit_ratio": f"{row['mean_hit_ratio']:.6f}"})


def plot_cache(rows: list[dict], out_dir) -> list[str]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    policies = sorted({r["policy"] for r in rows})
    for policy in policies:
        pts = sorted(
            ((r["capacity"], r["mean_hit_ratio"]) for r in rows if r["policy"] == policy)
        )
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=policy)
    ax.set_xlabel("cache capacity")
    ax.set_ylabel("mean hit ratio")
    ax.set_ylim(0, 1.05)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    paths = []
    for ext in ("svg", "png"):
        path = os.path.join(out_dir, f"cache_hit_ratio.{ext}")
        fig.savefig(path)
        paths.append(path)
    plt.close(fig)
    return paths


def cache_study(out_dir, **kwargs) -> list[dict]:
    os.makedirs(out_dir, exist_ok=True)
    rows = run_cache_experiment(**kwargs)
    write_cache_csv(rows, os.path.join(out_dir, "cache_hit_ratio.csv"))
    plot_cache(rows, out_dir)
    return rows


# --- latency breakdown ---


def make_freqy_dataset(
    rng: random.Random, distinct: int = 1000, draws: int = 8000
) -> list[bytes]:
    """Random Zipf-weighted token dataset over a per-call random vocabulary.

    Every vocabulary token appears at least once, so the distinct-token count
    is exactly `distinct`.
    """
    tag = rng.getrandbits(32)
    vocab = [f"tok{tag:08x}-{i:05d}".encode() for i in range(distinct)]
    weights = [1.0 / (i + 1) for i in range(distinct)]
    tokens = rng.choices(vocab, weights=weights, k=draws)
    tokens.extend(vocab)
    rng.shuffle(tokens)
    return tokens


def make_freqy_asset(path, rng: random.Random, distinct: int = 1000, draws: int = 8000) -> None:
    freqywm.save_dataset(path, make_freqy_dataset(rng, distinct, draws))


def make_obt_asset(path, rng: random.Random, rows: int = 1000) -> None:
    table = [(f"pk{i:06d}".encode(), rng.gauss(0.0, 1.0)) for i in range(rows)]
    obtwm.save_table(path, table)


@dataclass
class LocalProver:
    """An in-process prover service plus the key material clients need."""

    service: ProverService
    addr: str
    manufacturer_pub: bytes
    workdir: str

    def stop(self) -> None:
        self.service.stop()


def start_local_prover(
    workdir,
    mode: str = "tee",
    isolation: str = "inline",
    instrument: bool = False,
    cache_capacity: int = 250,
    cache_threshold: float = 70.0,
    idgen_check: bool = False,
    rate_limit: Optional[float] = None,
) -> LocalProver:
    os.makedirs(workdir, exist_ok=True)
    priv = os.path.join(workdir, "manufacturer.key")
    pub = os.path.join(workdir, "manufacturer.pub")
    _, pvk = save_manufacturer_keys(priv, pub)
    cfg = ServiceConfig(
        mode=mode,
        manufacturer_key=priv,
        store_path=os.path.join(workdir, "tokens.db"),
        enclave_isolation=isolation,
        instrument=instrument,
        cache_capacity=cache_capacity,
        cache_threshold=cache_threshold,
        idgen_check=idgen_check,
        rate_limit=rate_limit,
    )
    service = ProverService(cfg)
    host, port = service.start()
    return LocalProver(service=service, addr=f"{host}:{port}", manufacturer_pub=pvk, workdir=workdir)


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def _plain_verify_once(scheme: str, dw_bytes: bytes, tkh: bytes, share_p: bytes, csec: bytes) -> dict:
    """The five tasks executed as local function calls, no enclave wrapper.

    Session establishment still performs the ephemeral key exchange (a TLS
    stand-in); reconstruction and detection run directly on the host.
    """
    from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey

    from .enclave import DIR_CLIENT, DIR_ENCLAVE, SecureChannel, _derive_session_keys
    from .wire import decode_verify_request, encode_verify_request

    timings = {}

    holder_priv = X25519PrivateKey.generate()
    state = {}

    def establish():
        server_priv = X25519PrivateKey.generate()
        shared = holder_priv.exchange(server_priv.public_key())
        key, _ = _derive_session_keys(shared, b"plain-session")
        state["tx"] = SecureChannel(key, send_dir=DIR_CLIENT, recv_dir=DIR_ENCLAVE)
        state["rx"] = SecureChannel(key, send_dir=DIR_ENCLAVE, recv_dir=DIR_CLIENT)

    timings["establish_session"] = _timed(establish)

    def receive():
        sealed = state["tx"].seal(encode_verify_request(b"\x00" * 32, dw_bytes, tkh))
        state["plain"] = decode_verify_request(state["rx"].open(sealed))

    timings["receive_data"] = _timed(receive)

    def reconstruct():
        _, _, tkh_rx = state["plain"]
        if csec:
            key = crypto.reconstruct(tkh_rx, share_p)
            blob = crypto.decrypt(key, crypto.AuthCiphertext.from_bytes(csec))
        else:
            blob = crypto.reconstruct(tkh_rx, share_p)
        state["secret_blob"] = blob

    timings["reconstruct_secret"] = _timed(reconstruct)

    def detect():
        blob = state["secret_blob"].decode()
        _, dw_rx, _ = state["plain"]
        if scheme == "freqywm":
            secret = freqywm.FreqySecret.from_json(blob)
            state["res"] = freqywm.detect(
                freqywm.deserialize_dataset(dw_rx), secret, secret.detect_params()
            )
        else:
            secret = obtwm.ObtSecret.from_json(blob)
            state["res"] = obtwm.obt_detect(obtwm.deserialize_table(dw_rx), secret)

    timings["detect_watermark"] = _timed(detect)

    def terminate():
        state.clear()

    timings["terminate_session"] = _timed(terminate)
    return timings


def run_latency_breakdown(
    scheme: str,
    mode: str,
    out_dir,
    runs: int = 10,
    seed: int = 7,
    prover: Optional[LocalProver] = None,
) -> list[dict]:
    """Mean per-task latency over `runs` verifications; CSV plus stacked bars.

    mode "tee" drives a local prover over the wire; mode "plain" executes the
    same tasks as direct calls with no enclave in the path.
    """
    if scheme not in ("freqywm", "obt"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if mode not in ("tee", "plain"):
        raise ValueError(f"unknown mode {mode!r}")
    os.makedirs(out_dir, exist_ok=True)
    rng = random.Random(seed)

    with tempfile.TemporaryDirectory() as tmp:
        asset = os.path.join(tmp, "asset.txt" if scheme == "freqywm" else "asset.csv")
        if scheme == "freqywm":
            make_freqy_asset(asset, rng)
        else:
            make_obt_asset(asset, rng)

        per_run: list[dict] = []
        if mode == "tee":
            own_prover = prover is None
            local = prover or start_local_prover(os.path.join(tmp, "prover"), mode="tee")
            try:
                result = owner_generate(
                    asset,
                    scheme,
                    os.path.join(tmp, "owner"),
                    local.addr,
                    mode="tee",
                    manufacturer_pvk=local.manufacturer_pub,
                    rng=rng,
                )
                for _ in range(runs):
                    outcome = holder_verify(
                        result.bundle, result.asset_path, use_cache=False
                    )
                    if outcome.valid is not True:
                        raise RuntimeError("latency run did not verify Valid")
                    per_run.append(dict(outcome.timings))
            finally:
                if own_prover:
                    local.stop()
        else:
            secret_blob, dw_bytes, tkh, share_p, csec = _plain_artifacts(scheme, asset, rng)
            for _ in range(runs):
                per_run.append(_plain_verify_once(scheme, dw_bytes, tkh, share_p, csec))

    rows = []
    for task in TASKS:
        mean_ms = 1e3 * statistics.mean(r[task] for r in per_run)
        rows.append(
            {"scheme": scheme, "mode": mode, "task": task, "mean_ms": mean_ms, "runs": runs}
        )
    total_ms = 1e3 * statistics.mean(sum(r[t] for t in TASKS) for r in per_run)
    rows.append(
        {"scheme": scheme, "mode": mode, "task": "total", "mean_ms": total_ms, "runs": runs}
    )
    return rows


def _plain_artifacts(scheme: str, asset_path, rng: random.Random):
    """Owner-side material for the no-enclave pipeline (tee token layout)."""
    wm_key = crypto.gen_key()
    if scheme == "freqywm":
        dataset = freqywm.load_dataset(asset_path)
        watermarked, secret = freqywm.insert(dataset, wm_key, **_freqy_kwargs())
        secret.min_pairs = freqywm.default_min_pairs(len(secret.pairs))
        dw_bytes = freqywm.serialize_dataset(watermarked)
    else:
        table = obtwm.load_table(asset_path)
        secret = obtwm.gen_secret(wm_key, lambda: rng.getrandbits(1))
        watermarked = obtwm.obt_insert(table, secret)
        dw_bytes = obtwm.serialize_table(watermarked)
    blob = secret.to_json()
    enc_key = crypto.gen_key()
    csec = crypto.encrypt(enc_key, blob.encode()).to_bytes()
    s_h, s_p = crypto.share(enc_key)
    return blob, dw_bytes, s_h.data, s_p.data, csec


def _freqy_kwargs() -> dict:
    p = FreqyParams()
    return {
        "modulus": p.modulus,
        "num_pairs": p.num_pairs,
        "tolerance": p.tolerance,
        "budget": p.budget,
    }


def write_latency_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["scheme", "mode", "task", "mean_ms", "runs"])
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "mean_ms": f"{row['mean_ms']:.4f}"})


def plot_latency(rows: list[dict], out_dir) -> list[str]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    groups = sorted({(r["scheme"], r["mode"]) for r in rows})
    fig, ax = plt.subplots(figsize=(6, 4))
    bottoms = [0.0] * len(groups)
    labels = [f"{s}\n{m}" for s, m in groups]
    for task in TASKS:
        heights = []
        for g in groups:
            val = next(
                (r["mean_ms"] for r in rows if (r["scheme"], r["mode"]) == g and r["task"] == task),
                0.0,
            )
            heights.append(val)
        ax.bar(labels, heights, bottom=bottoms, label=task)
        bottoms = [b + h for b, h in zip(bottoms, heights)]
    ax.set_ylabel("mean latency (ms)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    paths = []
    for ext in ("svg", "png"):
        path = os.path.join(out_dir, f"latency_breakdown.{ext}")
        fig.savefig(path)
        paths.append(path)
    plt.close(fig)
    return paths


def latency_study(scheme: str, mode: str, out_dir, runs: int = 10, seed: int = 7) -> list[dict]:
    rows = run_latency_breakdown(scheme, mode, out_dir, runs=runs, seed=seed)
    write_latency_csv(rows, os.path.join(out_dir, f"latency_{scheme}_{mode}.csv"))
    plot_latency(rows, out_dir)
    return rows
