"""Workload generator, metrics harness, and the blocking baseline.

The harness drives a cache in-process (no network) so what gets measured is
data-structure contention, not I/O.  Key popularity is zipfian via a
precomputed CDF and binary search; every worker derives its RNG from
(seed, worker_rank) so the per-rank key sequence is identical regardless of
how many threads run beside it.

BaselineCache is the comparison system: the very same cache code behind one
global exclusive lock, one operation at a time.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass

import numpy as np

from .cache import Cache, CacheConfig, OutOfMemory
from .oracles import ClockSim, LruCache

_LATENCY_SAMPLE_EVERY = 64  # 1-in-64 ops is timed
_LATENCY_RESERVOIR_CAP = 1 << 16


@dataclass
class WorkloadSpec:
    alpha: float = 0.99
    keyspace: int = 100_000
    read_ratio: float = 0.99
    value_size: int = 100
    threads: int = 1
    ops: int = 1_000_000
    seed: int = 0


@dataclass
class RunMetrics:
    system: str
    alpha: float
    threads: int
    read_ratio: float
    ops: int
    elapsed_s: float
    throughput: float
    p50_ns: int
    p95_ns: int
    p99_ns: int
    hit_ratio: float
    evictions: int
    epoch_advances: int
    expansions: int
    oom_failures: int = 0


class ZipfSampler:
    """P(rank=i) = i^-alpha / H(n, alpha) over ranks 1..n, drawn by inverse CDF."""

    def __init__(self, n: int, alpha: float):
        if n < 1:
            raise ValueError("n must be >= 1")
        if alpha < 0:
            raise ValueError("alpha must be >= 0")
        self.n = n
        self.alpha = alpha
        weights = np.arange(1, n + 1, dtype=np.float64) ** -alpha
        cdf = np.cumsum(weights)
        cdf /= cdf[-1]
        cdf[-1] = 1.0
        self._cdf = cdf

    def sample_block(self, rng: np.random.Generator, m: int) -> np.ndarray:
        """m zero-based rank indexes (0 == most popular)."""
        return np.searchsorted(self._cdf, rng.random(m), side="right")

    def probability(self, rank: int) -> float:
        if rank == 1:
            return float(self._cdf[0])
        return float(self._cdf[rank - 1] - self._cdf[rank - 2])


_sampler_memo: dict = {}


def zipf_sample(rng, n: int, alpha: float) -> int:
    """One zipfian draw, rank in [1, n].  rng needs only .random()."""
    key = (n, alpha)
    sampler = _sampler_memo.get(key)
    if sampler is None:
        sampler = _sampler_memo[key] = ZipfSampler(n, alpha)
    return int(np.searchsorted(sampler._cdf, rng.random(), side="right")) + 1


def key_for(rank_index: int) -> bytes:
    """Stable key for a zero-based popularity rank."""
    return b"key:%08d" % rank_index


def key_sequence(spec: WorkloadSpec, rank: int, count: int) -> list[bytes]:
    """The first `count` keys worker `rank` would draw; thread-count independent."""
    rng = np.random.default_rng([spec.seed, rank, 0])
    sampler = ZipfSampler(spec.keyspace, spec.alpha)
    return [key_for(i) for i in sampler.sample_block(rng, count).tolist()]


class BaselineCache:
    """The identical cache serialized by one global exclusive region."""

    def __init__(self, config: CacheConfig):
        self._cache = Cache(config)
        self._lock = threading.Lock()

    def get(self, key: bytes):
        with self._lock:
            return self._cache.get(key)

    def set(self, key: bytes, value: bytes, flags: int = 0, expiry: int = 0) -> bool:
        with self._lock:
            return self._cache.set(key, value, flags, expiry)

    def delete(self, key: bytes) -> bool:
        with self._lock:
            return self._cache.delete(key)

    def stats(self):
        with self._lock:
            return self._cache.stats()


def make_target(system: str, spec: WorkloadSpec, memory_bytes: int):
    # the harness stores nothing larger than spec.value_size, so cap values
    # there; the default 1 MiB cap would reject small --memory-mb budgets
    config = CacheConfig(max_bytes=memory_bytes, value_cap=spec.value_size)
    if system == "fleec":
        return Cache(config)
    if system == "baseline":
        return BaselineCache(config)
    raise ValueError(f"unknown system {system!r} (expected fleec or baseline)")


def prewarm(target, spec: WorkloadSpec, memory_bytes: int) -> int:
    """Insert the keyspace most-popular-first up to ~90% of the budget.

    Returns how many keys were loaded.  The 10% headroom keeps warmup itself
    from evicting, so the run starts from a well-defined resident set.
    """
    charged = 64 + len(key_for(0)) + spec.value_size
    n = min(spec.keyspace, int(memory_bytes * 0.9) // charged)
    value = b"\x00" * spec.value_size
    for i in range(n):
        target.set(key_for(i), value)
    return n


def run_workload(spec: WorkloadSpec, target, system: str = "fleec") -> RunMetrics:
    """Drive `target` with spec.threads workers; aggregate RunMetrics.

    Callers are expected to prewarm the target (see prewarm)."""
    sampler = ZipfSampler(spec.keyspace, spec.alpha)
    per_thread = spec.ops // spec.threads
    counts = [per_thread] * spec.threads
    counts[0] += spec.ops - per_thread * spec.threads

    before = target.stats()
    latencies: list[list[int]] = [[] for _ in range(spec.threads)]
    ooms = [0] * spec.threads
    start = threading.Barrier(spec.threads + 1)
    value = b"\x00" * spec.value_size

    def worker(rank: int, n_ops: int) -> None:
        # keys and read/write flips use separate streams so key_sequence()
        # reproduces the key draw exactly, at any length
        rng_keys = np.random.default_rng([spec.seed, rank, 0])
        rng_rw = np.random.default_rng([spec.seed, rank, 1])
        lat = latencies[rank]
        get = target.get
        put = target.set
        start.wait()
        done = 0
        while done < n_ops:
            m = min(32768, n_ops - done)
            ranks = sampler.sample_block(rng_keys, m).tolist()
            reads = (rng_rw.random(m) < spec.read_ratio).tolist()
            for j in range(m):
                key = key_for(ranks[j])
                op_index = done + j
                if op_index % _LATENCY_SAMPLE_EVERY == 0 and len(lat) < _LATENCY_RESERVOIR_CAP:
                    t0 = time.perf_counter_ns()
                    if reads[j]:
                        get(key)
                    else:
                        try:
                            put(key, value)
                        except OutOfMemory:
                            ooms[rank] += 1
                    lat.append(time.perf_counter_ns() - t0)
                elif reads[j]:
                    get(key)
                else:
                    try:
                        put(key, value)
                    except OutOfMemory:
                        ooms[rank] += 1
            done += m

    threads = [
        threading.Thread(target=worker, args=(r, counts[r]), name=f"bench-{r}")
        for r in range(spec.threads)
    ]
    for t in threads:
        t.start()
    start.wait()
    t0 = time.perf_counter()
    for t in threads:
        t.join()
    elapsed = time.perf_counter() - t0

    after = target.stats()
    gets = (after.get_hits - before.get_hits) + (after.get_misses - before.get_misses)
    hit_ratio = (after.get_hits - before.get_hits) / gets if gets else 0.0
    merged = np.concatenate([np.asarray(l, dtype=np.int64) for l in latencies]) \
        if any(latencies) else np.asarray([0], dtype=np.int64)
    p50, p95, p99 = (int(x) for x in np.percentile(merged, [50, 95, 99]))
    return RunMetrics(
        system=system,
        alpha=spec.alpha,
        threads=spec.threads,
        read_ratio=spec.read_ratio,
        ops=spec.ops,
        elapsed_s=elapsed,
        throughput=spec.ops / elapsed if elapsed > 0 else 0.0,
        p50_ns=p50,
        p95_ns=p95,
        p99_ns=p99,
        hit_ratio=hit_ratio,
        evictions=after.evictions - before.evictions,
        epoch_advances=after.epoch_advances - before.epoch_advances,
        expansions=after.expansions - before.expansions,
        oom_failures=sum(ooms),
    )


def replay_hit_ratio(trace, policy, capacity_items: int) -> float:
    """Replay a key trace through an eviction policy oracle.

    policy is "strict_lru" or ("bucket_clock", K, buckets).  Each trace entry
    is one cache reference: a miss admits the key.  Capacity is in items.
    """
    if policy == "strict_lru":
        lru = LruCache(capacity_items)
        for key in trace:
            lru.access(key)
        return lru.hit_ratio
    kind, clock_max, buckets = policy
    if kind != "bucket_clock":
        raise ValueError(f"unknown policy {policy!r}")
    sim = ClockSim(
        max_bytes=capacity_items,
        clock_max=clock_max,
        initial_buckets=buckets,
        charge_fn=lambda key, value_len: 1,
    )
    for key in trace:
        if not sim.get(key):
            sim.set(key, 0)
    total = sim.hits + sim.misses
    return sim.hits / total if total else 0.0
