"""Bounded-memory cache tying together table, eviction, and reclamation.

Budget model: bytes_in_use counts every charged byte from the moment a set
reserves it until the byte is physically freed, so retired-but-unreclaimed
items (limbo) still pin the budget.  Reservation happens before insertion and
outside any reclamation critical section; under pressure the reserving thread
alternates try_reclaim with single CLOCK hand steps until the new item fits
or the step bound is exhausted, in which case the set fails with OutOfMemory
and the cache is unchanged.

The pressure loop bound is (clock_max + 1) x bucket_count hand steps: from a
freshly-touched table the first eviction needs up to clock_max full sweeps
(each sweep decrements every bucket once) plus one more visit.

Expiry is lazy: an expired item is detected on get, reported as a miss, and
removed then.  There is no sweeper thread.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field, fields

from .atomics import AtomicInt
from .clock_table import ClockTable
from .reclamation import EpochManager

#: Per-item accounting overhead added to key+value length (fixed, not tuned).
ITEM_OVERHEAD = 64

MAX_KEY_LEN = 250


class OutOfMemory(Exception):
    """Eviction and reclamation could not free enough bytes for a set."""


class Item:
    """Immutable cached record; replacement builds a new Item."""

    __slots__ = ("key", "value", "flags", "expiry", "charged", "freed")

    def __init__(self, key: bytes, value: bytes, flags: int = 0, expiry: int = 0):
        self.key = key
        self.value = value
        self.flags = flags
        self.expiry = expiry
        self.charged = ITEM_OVERHEAD + len(key) + len(value)
        self.freed = False

    def __repr__(self):
        return f"Item({self.key!r}, {len(self.value)}B, flags={self.flags})"


@dataclass
class CacheConfig:
    max_bytes: int
    clock_max: int = 3
    initial_buckets: int = 1024
    migrate_batch: int = 2
    thread_slots: int = 128
    value_cap: int = 1 << 20
    now_fn: callable = time.time

    def __post_init__(self):
        if self.clock_max < 1:
            raise ValueError("clock_max must be >= 1")
        n = self.initial_buckets
        if n < 1 or n & (n - 1):
            raise ValueError("initial_buckets must be a power of two >= 1")
        largest = ITEM_OVERHEAD + MAX_KEY_LEN + self.value_cap
        if self.max_bytes <= largest:
            raise ValueError(
                f"max_bytes ({self.max_bytes}) must exceed the largest admissible "
                f"item ({largest}); lower value_cap or raise the budget"
            )


@dataclass
class Stats:
    get_hits: int = 0
    get_misses: int = 0
    sets: int = 0
    deletes: int = 0
    evictions: int = 0
    evicted_bytes: int = 0
    expired_reclaimed: int = 0
    bytes_in_use: int = 0
    item_count: int = 0
    epoch_advances: int = 0
    expansions: int = 0

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class _ThreadCtx:
    """Per-thread state: epoch slot plus striped counters (summed on stats)."""

    __slots__ = ("rec", "hits", "misses", "sets", "deletes")

    def __init__(self, rec):
        self.rec = rec
        self.hits = 0
        self.misses = 0
        self.sets = 0
        self.deletes = 0


class _SlotReleaser:
    """Returns the epoch slot when a thread's locals are torn down."""

    __slots__ = ("manager", "rec")

    def __init__(self, manager, rec):
        self.manager = manager
        self.rec = rec

    def __del__(self):
        if self.rec is None:
            return
        try:
            self.manager.unregister(self.rec)
        except Exception:
            pass


def _check_key(key: bytes) -> None:
    if not isinstance(key, bytes):
        raise TypeError("key must be bytes")
    if not 0 < len(key) <= MAX_KEY_LEN:
        raise ValueError(f"key length must be in [1, {MAX_KEY_LEN}]")


class Cache:
    """Thread-safe bounded cache; share one instance across any many threads."""

    def __init__(self, config: CacheConfig):
        self._config = config
        self._max_bytes = config.max_bytes
        self._now = config.now_fn
        self._footprint = AtomicInt(0)
        self._manager = EpochManager(config.thread_slots, on_free=self._on_free)
        self._table = ClockTable(
            initial_buckets=config.initial_buckets,
            clock_max=config.clock_max,
            migrate_batch=config.migrate_batch,
        )
        self._evictions = AtomicInt(0)
        self._evicted_bytes = AtomicInt(0)
        self._expired = AtomicInt(0)
        self._tls = threading.local()
        self._ctxs = []  # every ctx ever created; append is GIL-atomic
        #: optional callable(list[bytes]) invoked with each eviction batch
        self.eviction_listener = None

    # -- plumbing ---------------------------------------------------------

    def _on_free(self, obj, nbytes: int) -> None:
        obj.freed = True  # poison canary; traversals assert it is never seen
        if nbytes:
            self._footprint.add(-nbytes)

    def _ctx(self) -> _ThreadCtx:
        try:
            return self._tls.ctx
        except AttributeError:
            rec = self._manager.register()
            ctx = _ThreadCtx(rec)
            self._tls.ctx = ctx
            self._tls.releaser = _SlotReleaser(self._manager, rec)
            self._ctxs.append(ctx)
            return ctx

    def detach_thread(self) -> None:
        """Release this thread's epoch slot early (optional; GC also does it)."""
        try:
            ctx = self._tls.ctx
        except AttributeError:
            return
        del self._tls.ctx
        releaser = self._tls.releaser
        if releaser is not None:
            releaser.rec = None  # disarm; unregister must happen exactly once
        self._tls.releaser = None
        self._manager.unregister(ctx.rec)

    # -- public operations ---------------------------------------------------

    def get(self, key: bytes):
        """Return the live Item or None.  Expired items are misses and are
        removed on the spot."""
        _check_key(key)
        ctx = self._ctx()
        rec = ctx.rec
        rec.enter(self._manager)
        try:
            item = self._table.get(key, rec)
            if item is not None and item.expiry and item.expiry <= self._now():
                if self._table.remove_if(key, item, rec):
                    self._expired.add(1)
                item = None
        finally:
            rec.exit()
        if item is None:
            ctx.misses += 1
            return None
        ctx.hits += 1
        return item

    def set(self, key: bytes, value: bytes, flags: int = 0, expiry: int = 0) -> bool:
        """Store key -> value.  Raises OutOfMemory when eviction cannot make
        room; the cache is unchanged in that case."""
        _check_key(key)
        if not isinstance(value, bytes):
            raise TypeError("value must be bytes")
        if len(value) > self._config.value_cap:
            raise ValueError(f"value exceeds cap of {self._config.value_cap} bytes")
        item = Item(key, value, flags, expiry)
        ctx = self._ctx()
        self._reserve(ctx, item.charged)
        rec = ctx.rec
        rec.enter(self._manager)
        try:
            self._table.put(key, item, rec)
        finally:
            rec.exit()
        ctx.sets += 1
        return True

    def delete(self, key: bytes) -> bool:
        _check_key(key)
        ctx = self._ctx()
        rec = ctx.rec
        rec.enter(self._manager)
        try:
            item = self._table.remove(key, rec)
        finally:
            rec.exit()
        if item is None:
            return False
        ctx.deletes += 1
        return True

    def stats(self) -> Stats:
        s = Stats()
        for ctx in self._ctxs:
            s.get_hits += ctx.hits
            s.get_misses += ctx.misses
            s.sets += ctx.sets
            s.deletes += ctx.deletes
        s.evictions = self._evictions.value
        s.evicted_bytes = self._evicted_bytes.value
        s.expired_reclaimed = self._expired.value
        s.bytes_in_use = self._footprint.value
        s.item_count = self._table.item_count.value
        s.epoch_advances = self._manager.advances.value
        s.expansions = self._table.expansions.value
        return s

    # -- memory pressure -----------------------------------------------------

    def _reserve(self, ctx: _ThreadCtx, nbytes: int) -> None:
        """Charge nbytes to the budget, evicting/reclaiming as needed.

        Runs outside any critical section so this thread's own epoch advances
        inside try_reclaim can succeed.
        """
        f = self._footprint
        while True:  # fast path
            cur = f.value
            if cur + nbytes > self._max_bytes:
                break
            if f.compare_and_set(cur, cur + nbytes):
                return
        rec = ctx.rec
        steps = 0
        while True:
            deficit = f.value + nbytes - self._max_bytes
            if deficit > 0:
                self._manager.try_reclaim(deficit)
            fitted = False
            while True:
                cur = f.value
                if cur + nbytes > self._max_bytes:
                    break
                if f.compare_and_set(cur, cur + nbytes):
                    fitted = True
                    break
            if fitted:
                return
            bound = (self._config.clock_max + 1) * self._table.bucket_count()
            if steps >= bound:
                raise OutOfMemory(
                    f"cannot reserve {nbytes} bytes: "
                    f"{f.value} of {self._max_bytes} in use after {steps} hand steps"
                )
            rec.enter(self._manager)
            try:
                kind, keys, freed = self._table.evict_step(rec)
            finally:
                rec.exit()
            steps += 1
            if kind == "evicted":
                self._evictions.add(len(keys))
                self._evicted_bytes.add(freed)
                listener = self.eviction_listener
                if listener is not None:
                    listener(list(keys))

    # -- maintenance ------------------------------------------------------------

    def drain_retired(self, rounds: int = 4) -> int:
        """Reclaim everything reclaimable (e.g. before shutdown or asserts).

        Each round allows up to two epoch advances; bounded, so laggard
        readers cannot hang it.  Returns total bytes freed.
        """
        total = 0
        for _ in range(rounds):
            freed = self._manager.try_reclaim(0)
            total += freed
            if self._manager.limbo_bytes.value == 0:
                break
        return total

    # -- debug / verification -----------------------------------------------------

    def live_items(self):
        """Quiescent snapshot of (key, Item); test aid, not concurrent-exact."""
        return list(self._table.iter_items())

    @property
    def table(self) -> ClockTable:
        return self._table

    @property
    def manager(self) -> EpochManager:
        return self._manager

    @property
    def config(self) -> CacheConfig:
        return self._config

    def now(self) -> float:
        """Current time per the injected clock."""
        return self._now()
