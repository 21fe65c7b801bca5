"""Epoch-based deferred reclamation that advances only under memory pressure.

Threads announce the global epoch on entering a critical section.  Retired
objects go to the retiring thread's limbo bag tagged with the global epoch
re-read at retire time (the retirer's own announcement may lag by one and
must not be used: garbage would become freeable a full epoch too early for
a reader that entered meanwhile).  An entry tagged e may be physically freed
once the global epoch reaches e + 2: freeing requires an advance past e + 1,
every advance re-checks all active readers, so any reader that could still
hold a pointer (necessarily entered before the retire, hence announcing
at most e) would have blocked it.

The deliberate deviation from the usual scheme: nothing here ever advances
the epoch on enter/exit.  Epochs move only inside try_reclaim, which is
called only when the cache actually needs bytes back, so an uncontended
workload with ample budget performs zero advances (counter-verified).
"""

from __future__ import annotations

from .atomics import AtomicInt, AtomicRef


class _Cell:
    """Cons cell of a limbo bag."""

    __slots__ = ("obj", "nbytes", "tag", "next")

    def __init__(self, obj, nbytes: int, tag: int, nxt):
        self.obj = obj
        self.nbytes = nbytes
        self.tag = tag
        self.next = nxt


class EpochRecord:
    """Per-thread slot: epoch announcement plus three rotating limbo bags.

    Bag i collects entries retired at epochs congruent to i mod 3.  Only the
    owner pushes; any thread may drain, so bag heads are CAS cells.  newest[i]
    is a monotone hint (the owner's last push tag) used to skip bags that
    cannot be safe yet; safety itself is re-checked per entry during a drain.
    """

    __slots__ = ("slot", "manager", "active", "announced", "bags", "newest")

    def __init__(self, slot: int, manager: "EpochManager"):
        self.slot = slot
        self.manager = manager
        self.active = False
        self.announced = 0
        self.bags = (AtomicRef(None), AtomicRef(None), AtomicRef(None))
        self.newest = [-1, -1, -1]

    def enter(self, manager: "EpochManager") -> None:
        if self.active:
            raise AssertionError("nested reclamation critical section")
        self.announced = manager.epoch.value
        self.active = True

    def exit(self) -> None:
        self.active = False

    def retire(self, obj, nbytes: int) -> None:
        """Queue obj for deferred free; tag is the global epoch, not the
        caller's possibly-stale announcement."""
        mgr = self.manager
        tag = mgr.epoch.value
        i = tag % 3
        bag = self.bags[i]
        while True:
            head = bag.value
            if bag.compare_and_set(head, _Cell(obj, nbytes, tag, head)):
                break
        if tag > self.newest[i]:
            self.newest[i] = tag
        if nbytes:
            mgr.limbo_bytes.add(nbytes)


class EpochManager:
    """Fixed-slot registration table plus the global epoch."""

    def __init__(self, slots: int = 128, on_free=None):
        self.epoch = AtomicInt(0)
        self.advances = AtomicInt(0)
        self.limbo_bytes = AtomicInt(0)
        self._slots = slots
        self._records = tuple(EpochRecord(i, self) for i in range(slots))
        self._claimed = AtomicInt(0)  # high-water mark of ever-claimed slots
        self._free = AtomicRef(None)  # cons stack of released slot indexes
        self._on_free = on_free

    # -- registration ------------------------------------------------------

    def register(self) -> EpochRecord:
        while True:
            head = self._free.value
            if head is None:
                break
            if self._free.compare_and_set(head, head.next):
                return self._records[head.obj]
        idx = self._claimed.fetch_add(1)
        if idx >= self._slots:
            raise RuntimeError(f"all {self._slots} reclamation thread slots in use")
        return self._records[idx]

    def unregister(self, rec: EpochRecord) -> None:
        rec.active = False
        while True:
            head = self._free.value
            if self._free.compare_and_set(head, _Cell(rec.slot, 0, 0, head)):
                return

    # -- reclaim -------------------------------------------------------------

    def try_reclaim(self, target_bytes: int) -> int:
        """Free safe bags; advance (at most twice) only if still short.

        target_bytes <= 0 means "free everything currently freeable".
        Returns bytes actually freed; laggard readers can pin this at 0.
        """
        freed = self._drain()
        for _ in range(2):
            if 0 < target_bytes <= freed:
                break
            if not self._try_advance():
                break
            freed += self._drain()
        return freed

    def _try_advance(self) -> bool:
        e = self.epoch.value
        for rec in self._records[: self._claimed.value]:
            if rec.active and rec.announced != e:
                return False
        if self.epoch.compare_and_set(e, e + 1):
            self.advances.add(1)
        return True  # either we advanced or someone else just did

    def _drain(self) -> int:
        """Free every entry tagged at least two epochs behind.

        A bag is attempted only when its newest-push hint is safe, but each
        entry's tag is re-checked: a concurrent advance can slip a fresh entry
        into a bag between the hint read and the swap, and such entries are
        pushed back rather than freed.
        """
        safe = self.epoch.value - 2
        freed = 0
        for rec in self._records[: self._claimed.value]:
            for i in (0, 1, 2):
                if rec.newest[i] > safe:
                    continue
                bag = rec.bags[i]
                if bag.value is None:
                    continue
                cell = bag.swap(None)
                while cell is not None:
                    nxt = cell.next
                    if cell.tag <= safe:
                        freed += cell.nbytes
                        if cell.nbytes:
                            self.limbo_bytes.add(-cell.nbytes)
                        if self._on_free is not None:
                            self._on_free(cell.obj, cell.nbytes)
                        else:
                            cell.obj.freed = True
                    else:
                        while True:  # unsafe straggler: give it back
                            head = bag.value
                            cell.next = head
                            if bag.compare_and_set(head, cell):
                                break
                    cell = nxt
        return freed
