"""Lock-free hash table with per-bucket CLOCK counters and incremental growth.

Each bucket is a sorted non-blocking list plus a recency counter in [0, K].
Hits and inserts set the counter to K; a global hand (a monotone fetch-add
counter taken modulo the bucket count) sweeps buckets under memory pressure,
decrementing counters and emptying any bucket it finds at zero.

Expansion doubles the bucket array when live items exceed 1.5x the bucket
count.  Migration is incremental: every old bucket is claimed through a
per-bucket marker, detached, and its items re-inserted into the two child
buckets.  Any operation that lands on an unmigrated bucket while an expansion
is in flight migrates that bucket first (or waits on the claimant's marker),
and every put additionally drives a batch of B cursor-ordered migrations, so
the table finishes growing without a dedicated thread and nobody ever blocks
on a lock.

Operation ordering is part of the contract: single-threaded runs must be
reproducible step for step (the deterministic simulator in fleec.oracles
mirrors this module), so the put path is pinned as
insert -> touch -> [retire replaced | count+1 -> maybe-start-expansion] ->
drive batch, and the eviction step is pinned as empty-check -> clock check ->
whole-bucket removal in key order.
"""

from __future__ import annotations

import time
from functools import lru_cache

from . import lockfree_list as ll
from .atomics import AtomicInt, AtomicRef
from .lockfree_list import MOVED, Moved

FNV_OFFSET = 14695981039346656037
FNV_PRIME = 1099511628211
_MASK64 = (1 << 64) - 1


def fnv1a_64(key: bytes) -> int:
    h = FNV_OFFSET
    for b in key:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


# The hot path hashes the same small key set over and over; memoizing is a
# big win and the function is pure.
_hash_cached = lru_cache(maxsize=1 << 17)(fnv1a_64)


def bucket_of(key_hash: int, length: int) -> int:
    return key_hash & (length - 1)


class Bucket:
    __slots__ = ("handle", "clock")

    def __init__(self):
        self.handle = ll.new_handle()
        # Racy plain int by design: a lost touch or a lost decrement only
        # perturbs recency, never safety, and keeps reads store-cheap.
        self.clock = 0


class TableState:
    __slots__ = ("buckets", "expansion", "next")

    def __init__(self, buckets):
        self.buckets = buckets
        self.expansion = AtomicRef(None)
        self.next = None  # successor state, set when an expansion is installed


class ExpansionState:
    """Progress of one doubling: per-old-bucket markers plus a drive cursor.

    Marker values: 0 unclaimed, 1 claimed (detach in progress), 2 migrated.
    """

    def __init__(self, parent: TableState):
        n = len(parent.buckets)
        self.parent = parent
        self.total = n
        self.new_state = TableState(tuple(Bucket() for _ in range(2 * n)))
        self.markers = tuple(AtomicInt(0) for _ in range(n))
        self.cursor = AtomicInt(0)
        self.migrated_count = AtomicInt(0)


class ClockTable:
    def __init__(self, initial_buckets: int = 1024, clock_max: int = 3,
                 migrate_batch: int = 2):
        if initial_buckets < 1 or initial_buckets & (initial_buckets - 1):
            raise ValueError("initial_buckets must be a power of two >= 1")
        if clock_max < 1:
            raise ValueError("clock_max must be >= 1")
        self.clock_max = clock_max
        self.migrate_batch = migrate_batch
        self._state_ref = AtomicRef(TableState(tuple(Bucket() for _ in range(initial_buckets))))
        self.item_count = AtomicInt(0)
        self.hand = AtomicInt(0)
        self.expansions = AtomicInt(0)

    # -- routing -------------------------------------------------------------

    @property
    def state(self) -> TableState:
        return self._state_ref.value

    def bucket_count(self) -> int:
        return len(self._state_ref.value.buckets)

    def expansion_in_progress(self) -> bool:
        return self._state_ref.value.expansion.value is not None

    def _locate(self, h: int, rec):
        """Resolve (state, bucket) for h, migrating our bucket first if the
        state is mid-expansion.  The returned handle can still turn MOVED a
        beat later; list ops raise Moved and the caller re-locates."""
        state = self._state_ref.value
        while True:
            i = h & (len(state.buckets) - 1)
            exp = state.expansion.value
            if exp is not None:
                self._migrate_bucket(exp, i, rec, wait=True)
                state = exp.new_state
                continue
            if state.buckets[i].handle.value is MOVED:
                # stale state observed after a finalize; follow the chain
                state = state.next
                continue
            return state, state.buckets[i]

    # -- core operations ------------------------------------------------------

    def get(self, key: bytes, rec):
        h = _hash_cached(key)
        while True:
            _state, b = self._locate(h, rec)
            try:
                item = ll.find(b.handle, h, key)
            except Moved:
                continue
            break
        if item is not None:
            b.clock = self.clock_max
        return item

    def put(self, key: bytes, item, rec) -> bool:
        """Insert or replace.  Returns True if freshly inserted.

        Displaced items are retired here (we are inside the caller's critical
        section, so the tag is correct).
        """
        h = _hash_cached(key)
        while True:
            _state, b = self._locate(h, rec)
            try:
                old = ll.insert_or_replace(b.handle, h, key, item, rec)
            except Moved:
                continue
            break
        b.clock = self.clock_max
        if old is not None:
            rec.retire(old, old.charged)
            self._drive(rec)
            return False
        count = self.item_count.add(1)
        self._maybe_expand(count)
        self._drive(rec)
        return True

    def remove(self, key: bytes, rec):
        """Remove and retire; returns the Item or None."""
        h = _hash_cached(key)
        while True:
            _state, b = self._locate(h, rec)
            try:
                item = ll.remove(b.handle, h, key, rec)
            except Moved:
                continue
            break
        if item is None:
            return None
        self.item_count.add(-1)
        rec.retire(item, item.charged)
        return item

    def remove_if(self, key: bytes, expected_item, rec) -> bool:
        """Remove only if the key still maps to expected_item (lazy expiry).

        If a fresh replacement raced our logical delete, the fresh item is
        re-inserted (compensation) so no newer write is ever lost; in that
        case the expired item was already retired by the replacer and we
        report False.
        """
        h = _hash_cached(key)
        while True:
            _state, b = self._locate(h, rec)
            try:
                kind, got = ll.remove_if(b.handle, h, key, expected_item, rec)
            except Moved:
                continue
            break
        if kind == "absent":
            return False
        self.item_count.add(-1)
        if kind == "removed":
            rec.retire(got, got.charged)
            return True
        # mismatch: we killed a node that had just been given a fresh item
        while True:
            _state, b = self._locate(h, rec)
            try:
                if ll.insert_if_absent(b.handle, h, key, got, rec):
                    self.item_count.add(1)
                else:
                    # an even newer write landed first; the raced copy dies
                    rec.retire(got, got.charged)
            except Moved:
                continue
            break
        return False

    # -- eviction --------------------------------------------------------------

    def evict_step(self, rec):
        """One CLOCK hand step.  Returns (kind, keys, bytes_freed) with kind in
        {"evicted", "decremented", "skipped"}."""
        state = self._state_ref.value
        n = len(state.buckets)
        b = state.buckets[self.hand.fetch_add(1) & (n - 1)]
        head = b.handle.value
        if head is MOVED:
            return ("skipped", (), 0)
        if head.next.pair[0] is ll.TAIL:
            return ("skipped", (), 0)
        c = b.clock
        if c > 0:
            b.clock = c - 1
            return ("decremented", (), 0)
        keys = []
        freed = 0
        while True:
            target = self._first_live(b)
            if target is None:
                break
            kh, k = target
            try:
                item = ll.remove(b.handle, kh, k, rec)
            except Moved:
                break  # migration took the bucket; its items survive
            if item is None:
                continue  # raced with another remover; re-probe
            self.item_count.add(-1)
            rec.retire(item, item.charged)
            keys.append(k)
            freed += item.charged
        if not keys:
            return ("skipped", (), 0)
        return ("evicted", tuple(keys), freed)

    @staticmethod
    def _first_live(b: Bucket):
        head = b.handle.value
        if head is MOVED:
            return None
        curr = head.next.pair[0]
        while curr is not ll.TAIL:
            if curr.freed:
                raise ll.UseAfterFree(f"traversed reclaimed node {curr!r}")
            succ, marked = curr.next.pair
            if not marked and curr.item_ref.value is not ll.TOMBSTONE:
                return curr.key_hash, curr.key
            curr = succ
        return None

    # -- expansion ---------------------------------------------------------------

    def _maybe_expand(self, count: int) -> None:
        state = self._state_ref.value
        if state.expansion.value is not None:
            return
        if 2 * count <= 3 * len(state.buckets):
            return
        exp = ExpansionState(state)
        if state.expansion.compare_and_set(None, exp):
            state.next = exp.new_state

    def _drive(self, rec) -> None:
        """Opportunistically migrate up to B cursor-ordered buckets."""
        exp = self._state_ref.value.expansion.value
        if exp is None:
            return
        for _ in range(self.migrate_batch):
            i = exp.cursor.fetch_add(1)
            if i >= exp.total:
                return
            self._migrate_bucket(exp, i, rec, wait=False)

    def migrate_step(self, old_index: int, rec) -> bool:
        """Migrate one old bucket (helping entry point); waits out a claimant."""
        exp = self._state_ref.value.expansion.value
        if exp is None:
            return True
        return self._migrate_bucket(exp, old_index, rec, wait=True)

    def _migrate_bucket(self, exp: ExpansionState, i: int, rec, wait: bool) -> bool:
        marker = exp.markers[i]
        while True:
            s = marker.value
            if s == 2:
                return True
            if s == 0 and marker.compare_and_set(0, 1):
                break
            if not wait:
                return False
            time.sleep(0)  # claimant is mid-detach; its work is bounded
        parent_bucket = exp.parent.buckets[i]
        inherited = parent_bucket.clock
        first = ll.detach(parent_bucket.handle)
        entries = ll.drain_detached(first, rec) if first is not None else []
        new_buckets = exp.new_state.buckets
        mask = len(new_buckets) - 1
        for kh, k, item in entries:
            child = new_buckets[kh & mask]
            if not ll.insert_if_absent(child.handle, kh, k, item, rec):
                # a user write outran the migration; the stale copy dies and
                # its count contribution moves to the winning insert
                rec.retire(item, item.charged)
                self.item_count.add(-1)
        new_buckets[i].clock = inherited
        new_buckets[i + exp.total].clock = inherited
        marker.store(2)
        if exp.migrated_count.add(1) == exp.total:
            self._finalize(exp)
        return True

    def _finalize(self, exp: ExpansionState) -> None:
        if self._state_ref.compare_and_set(exp.parent, exp.new_state):
            # next must be readable before expansion reads None, or a late
            # router on the stale state would have nowhere to go
            exp.parent.next = exp.new_state
            self.expansions.add(1)
            exp.parent.expansion.store(None)

    # -- debug / verification ------------------------------------------------------

    def iter_items(self):
        """Quiescent snapshot of (key, item) pairs across all buckets.

        Mid-expansion, already-migrated buckets are read from their two
        children so an unfinished expansion hides nothing."""
        state = self._state_ref.value
        exp = state.expansion.value
        for idx, b in enumerate(state.buckets):
            if b.handle.value is MOVED:
                if exp is not None:
                    children = exp.new_state.buckets
                    for j in (idx, idx + exp.total):
                        if children[j].handle.value is not MOVED:
                            yield from ll.iter_live(children[j].handle)
                continue
            yield from ll.iter_live(b.handle)
