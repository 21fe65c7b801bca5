"""Deterministic single-threaded oracles for eviction behavior.

ClockSim mirrors the real cache step for step under single-threaded
execution: same hash, same routing and migration order, same CLOCK hand
arithmetic, same pressure-loop structure, and the same limbo/epoch byte
accounting (try_reclaim's early exit leaves bytes pinned, so the budget
model must be simulated, not idealized).  The equivalence test drives both
with identical traces and requires bit-identical hit/miss/eviction
sequences and final statistics.

LruCache is an exact strict-LRU reference used for hit-ratio comparisons.
"""

from __future__ import annotations

from collections import OrderedDict

from .cache import ITEM_OVERHEAD, OutOfMemory
from .clock_table import fnv1a_64


class _SimExpansion:
    __slots__ = ("old_buckets", "old_clocks", "new_buckets", "new_clocks",
                 "migrated", "cursor", "migrated_count", "total")

    def __init__(self, old_buckets, old_clocks):
        n = len(old_buckets)
        self.old_buckets = old_buckets
        self.old_clocks = old_clocks
        self.new_buckets = [dict() for _ in range(2 * n)]
        self.new_clocks = [0] * (2 * n)
        self.migrated = [False] * n
        self.cursor = 0
        self.migrated_count = 0
        self.total = n


class ClockSim:
    """Single-threaded model of Cache (same config knobs, same behavior)."""

    def __init__(self, max_bytes: int, clock_max: int = 3,
                 initial_buckets: int = 1024, migrate_batch: int = 2,
                 now_fn=None, charge_fn=None):
        self.max_bytes = max_bytes
        self.clock_max = clock_max
        self.migrate_batch = migrate_batch
        self.now = now_fn if now_fn is not None else (lambda: 0)
        self.charge = charge_fn if charge_fn is not None else (
            lambda key, value_len: ITEM_OVERHEAD + len(key) + value_len)
        self.buckets = [dict() for _ in range(initial_buckets)]  # key -> (charged, expiry)
        self.clocks = [0] * initial_buckets
        self.exp: _SimExpansion | None = None
        self.hand = 0
        self.count = 0
        self.footprint = 0
        self.epoch = 0
        self.advances = 0
        # limbo: per epoch-mod-3 slot, [newest_tag, pinned_bytes]
        self.slots = [[-1, 0], [-1, 0], [-1, 0]]
        self.hits = 0
        self.misses = 0
        self.sets = 0
        self.deletes = 0
        self.evictions = 0
        self.evicted_bytes = 0
        self.expired = 0
        self.expansions = 0
        self.eviction_listener = None

    # -- stats --------------------------------------------------------------

    def stats(self) -> dict:
        return {
            "get_hits": self.hits,
            "get_misses": self.misses,
            "sets": self.sets,
            "deletes": self.deletes,
            "evictions": self.evictions,
            "evicted_bytes": self.evicted_bytes,
            "expired_reclaimed": self.expired,
            "bytes_in_use": self.footprint,
            "item_count": self.count,
            "epoch_advances": self.advances,
            "expansions": self.expansions,
        }

    # -- reclamation model -----------------------------------------------------

    def _retire(self, nbytes: int) -> None:
        i = self.epoch % 3
        slot = self.slots[i]
        if self.epoch > slot[0]:
            slot[0] = self.epoch
        slot[1] += nbytes

    def _drain(self) -> int:
        safe = self.epoch - 2
        freed = 0
        for slot in self.slots:
            if slot[0] > safe or slot[1] == 0:
                continue
            freed += slot[1]
            self.footprint -= slot[1]
            slot[1] = 0
        return freed

    def _try_reclaim(self, target: int) -> int:
        freed = self._drain()
        for _ in range(2):
            if 0 < target <= freed:
                break
            self.epoch += 1
            self.advances += 1
            freed += self._drain()
        return freed

    # -- routing / expansion ----------------------------------------------------

    def _route(self, h: int):
        """(buckets, clocks, index) after migrating our bucket if needed."""
        exp = self.exp
        if exp is not None:
            i = h & (exp.total - 1)
            if not exp.migrated[i]:
                self._migrate_bucket(i)
            exp = self.exp  # migration may have finalized
            if exp is not None:
                return exp.new_buckets, exp.new_clocks, h & (len(exp.new_buckets) - 1)
        return self.buckets, self.clocks, h & (len(self.buckets) - 1)

    def _migrate_bucket(self, i: int) -> None:
        exp = self.exp
        mask = len(exp.new_buckets) - 1
        for key, rec in exp.old_buckets[i].items():
            kh = fnv1a_64(key)
            exp.new_buckets[kh & mask][key] = rec
        exp.old_buckets[i].clear()
        inherited = exp.old_clocks[i]
        exp.new_clocks[i] = inherited
        exp.new_clocks[i + exp.total] = inherited
        exp.migrated[i] = True
        exp.migrated_count += 1
        if exp.migrated_count == exp.total:
            self.buckets = exp.new_buckets
            self.clocks = exp.new_clocks
            self.exp = None
            self.expansions += 1

    def _maybe_expand(self) -> None:
        if self.exp is not None:
            return
        if 2 * self.count <= 3 * len(self.buckets):
            return
        self.exp = _SimExpansion(self.buckets, self.clocks)

    def _drive(self) -> None:
        for _ in range(self.migrate_batch):
            exp = self.exp
            if exp is None:
                return
            i = exp.cursor
            exp.cursor += 1
            if i >= exp.total:
                return
            if not exp.migrated[i]:
                self._migrate_bucket(i)

    # -- eviction ----------------------------------------------------------------

    def _evict_step(self):
        if self.exp is not None:
            buckets, clocks = self.exp.old_buckets, self.exp.old_clocks
            moved = self.exp.migrated
        else:
            buckets, clocks = self.buckets, self.clocks
            moved = None
        n = len(buckets)
        i = self.hand & (n - 1)
        self.hand += 1
        if moved is not None and moved[i]:
            return ("skipped", (), 0)
        b = buckets[i]
        if not b:
            return ("skipped", (), 0)
        c = clocks[i]
        if c > 0:
            clocks[i] = c - 1
            return ("decremented", (), 0)
        keys = sorted(b, key=lambda k: (fnv1a_64(k), k))
        freed = 0
        for k in keys:
            charged, _expiry = b.pop(k)
            self.count -= 1
            self._retire(charged)
            freed += charged
        return ("evicted", tuple(keys), freed)

    def pressure_walk(self, need: int = 1):
        """Step the hand until `need` items got evicted; returns
        (victim_keys, steps).  Test aid mirroring the pressure loop's walk."""
        victims = []
        steps = 0
        while len(victims) < need:
            kind, keys, freed = self._evict_step()
            steps += 1
            if kind == "evicted":
                victims.extend(keys)
                self.evictions += len(keys)
                self.evicted_bytes += freed
        return victims, steps

    def _reserve(self, nbytes: int) -> None:
        if self.footprint + nbytes <= self.max_bytes:
            self.footprint += nbytes
            return
        steps = 0
        while True:
            deficit = self.footprint + nbytes - self.max_bytes
            if deficit > 0:
                self._try_reclaim(deficit)
            if self.footprint + nbytes <= self.max_bytes:
                self.footprint += nbytes
                return
            if self.exp is not None:
                nbuckets = self.exp.total
            else:
                nbuckets = len(self.buckets)
            bound = (self.clock_max + 1) * nbuckets
            if steps >= bound:
                raise OutOfMemory(
                    f"cannot reserve {nbytes} bytes: "
                    f"{self.footprint} of {self.max_bytes} in use after {steps} hand steps"
                )
            kind, keys, freed = self._evict_step()
            steps += 1
            if kind == "evicted":
                self.evictions += len(keys)
                self.evicted_bytes += freed
                if self.eviction_listener is not None:
                    self.eviction_listener(list(keys))

    # -- public operations ----------------------------------------------------------

    def get(self, key: bytes) -> bool:
        h = fnv1a_64(key)
        buckets, clocks, i = self._route(h)
        rec = buckets[i].get(key)
        hit = rec is not None
        if hit:
            clocks[i] = self.clock_max  # touch happens before the expiry check
            charged, expiry = rec
            if expiry and expiry <= self.now():
                del buckets[i][key]
                self.count -= 1
                self._retire(charged)
                self.expired += 1
                hit = False
        if hit:
            self.hits += 1
        else:
            self.misses += 1
        return hit

    def set(self, key: bytes, value_len: int, expiry: int = 0) -> None:
        charged = self.charge(key, value_len)
        self._reserve(charged)
        h = fnv1a_64(key)
        buckets, clocks, i = self._route(h)
        old = buckets[i].get(key)
        buckets[i][key] = (charged, expiry)
        clocks[i] = self.clock_max
        if old is not None:
            self._retire(old[0])
            self._drive()
        else:
            self.count += 1
            self._maybe_expand()
            self._drive()
        self.sets += 1

    def delete(self, key: bytes) -> bool:
        h = fnv1a_64(key)
        buckets, _clocks, i = self._route(h)
        rec = buckets[i].pop(key, None)
        if rec is None:
            return False
        self.count -= 1
        self._retire(rec[0])
        self.deletes += 1
        return True


class LruCache:
    """Exact strict-LRU over a capacity measured in items or bytes."""

    def __init__(self, capacity: int, by_bytes: bool = False):
        self.capacity = capacity
        self.by_bytes = by_bytes
        self._map: OrderedDict = OrderedDict()
        self._used = 0
        self.hits = 0
        self.misses = 0

    def access(self, key: bytes, size: int = 1) -> bool:
        """One cache reference: hit refreshes recency, miss admits (evicting
        least-recently-used entries until the newcomer fits)."""
        if key in self._map:
            self._map.move_to_end(key)
            self.hits += 1
            return True
        self.misses += 1
        cost = size if self.by_bytes else 1
        while self._map and self._used + cost > self.capacity:
            _k, old_cost = self._map.popitem(last=False)
            self._used -= old_cost
        if self._used + cost <= self.capacity:
            self._map[key] = cost
            self._used += cost
        return False

    @property
    def hit_ratio(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0
