"""Single-threaded cache runs must replay bit-identically on the model.

Every counter in stats(), every eviction batch in order, and the final live
keyset have to agree; any divergence means the table's pinned operation
order drifted."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fleec import Cache, CacheConfig, OutOfMemory
from fleec.oracles import ClockSim


def sim_live_keys(sim):
    if sim.exp is None:
        return sorted(k for b in sim.buckets for k in b)
    keys = [k for b in sim.exp.new_buckets for k in b]
    keys += [k for i, b in enumerate(sim.exp.old_buckets)
             if not sim.exp.migrated[i] for k in b]
    return sorted(keys)


def run_pair(seed, ops, max_bytes, value_cap=96, clock_max=3,
             initial_buckets=4, migrate_batch=2, keyspace=48, exp_prob=0.0):
    clock = [1000.0]
    cache = Cache(CacheConfig(
        max_bytes=max_bytes, clock_max=clock_max,
        initial_buckets=initial_buckets, migrate_batch=migrate_batch,
        value_cap=value_cap, now_fn=lambda: clock[0]))
    sim = ClockSim(
        max_bytes=max_bytes, clock_max=clock_max,
        initial_buckets=initial_buckets, migrate_batch=migrate_batch,
        now_fn=lambda: clock[0])
    cache_batches, sim_batches = [], []
    cache.eviction_listener = cache_batches.append
    sim.eviction_listener = sim_batches.append

    rng = random.Random(seed)
    keys = [b"eq:%03d" % i for i in range(keyspace)]
    for step in range(ops):
        k = rng.choice(keys)
        r = rng.random()
        if r < 0.55:
            vlen = rng.randrange(value_cap + 1)
            expiry = 0
            if exp_prob and rng.random() < exp_prob:
                expiry = int(clock[0]) + rng.randrange(1, 20)
            real = model = None
            try:
                cache.set(k, b"x" * vlen, expiry=expiry)
            except OutOfMemory:
                real = "oom"
            try:
                sim.set(k, vlen, expiry=expiry)
            except OutOfMemory:
                model = "oom"
            assert real == model, (step, k)
        elif r < 0.85:
            assert (cache.get(k) is not None) == sim.get(k), (step, k)
        else:
            assert cache.delete(k) == sim.delete(k), (step, k)
        if exp_prob and rng.random() < 0.05:
            clock[0] += rng.choice([0.5, 1.0, 3.0])

    real = cache.stats().as_dict()
    model = sim.stats()
    assert real == model
    assert cache_batches == sim_batches
    assert sorted(k for k, _ in cache.live_items()) == sim_live_keys(sim)
    return real


def test_light_load_stays_quiet():
    s = run_pair(seed=1, ops=2000, max_bytes=1 << 22, keyspace=64)
    assert s["evictions"] == 0
    assert s["epoch_advances"] == 0
    assert s["expansions"] >= 1  # 64 keys from 4 buckets must still grow


def test_heavy_pressure_churn():
    s = run_pair(seed=2, ops=4000, max_bytes=4000, value_cap=96, keyspace=48)
    assert s["evictions"] > 100
    assert s["epoch_advances"] > 0


def test_expiring_keys():
    s = run_pair(seed=3, ops=3000, max_bytes=6000, keyspace=32, exp_prob=0.3)
    assert s["expired_reclaimed"] > 0


def test_tiny_table_aggressive_growth():
    s = run_pair(seed=4, ops=2500, max_bytes=100_000, value_cap=64,
                 initial_buckets=1, migrate_batch=1, keyspace=200)
    assert s["expansions"] >= 5


def test_no_driving_puts_still_agree():
    run_pair(seed=5, ops=1500, max_bytes=5000, migrate_batch=0, keyspace=40)


@pytest.mark.parametrize("seed", range(10, 22))
def test_seed_sweep(seed):
    run_pair(seed=seed, ops=600, max_bytes=2500 + 350 * (seed % 5),
             value_cap=80, keyspace=24 + seed)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 15),
                          st.integers(0, 64)),
                min_size=1, max_size=120))
def test_arbitrary_tapes_agree(tape):
    cache = Cache(CacheConfig(max_bytes=1800, clock_max=3, initial_buckets=2,
                              migrate_batch=2, value_cap=64))
    sim = ClockSim(max_bytes=1800, clock_max=3, initial_buckets=2,
                   migrate_batch=2)
    for op, ki, vlen in tape:
        k = b"h:%02d" % ki
        if op == 0:
            real = model = None
            try:
                cache.set(k, b"y" * vlen)
            except OutOfMemory:
                real = "oom"
            try:
                sim.set(k, vlen)
            except OutOfMemory:
                model = "oom"
            assert real == model
        elif op == 1:
            assert (cache.get(k) is not None) == sim.get(k)
        else:
            assert cache.delete(k) == sim.delete(k)
    assert cache.stats().as_dict() == sim.stats()
    assert sorted(k for k, _ in cache.live_items()) == sim_live_keys(sim)
