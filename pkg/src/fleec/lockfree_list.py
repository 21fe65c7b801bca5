"""Sorted non-blocking singly linked list used as a hash bucket.

Deletion is two-phase: a CAS on the victim's next-reference sets the mark bit
(logical delete), and a later CAS swings the predecessor past it (physical
unlink).  Lists are ordered by (key_hash, key) with head/tail sentinels, so
every operation is a short ordered walk plus one or two CAS steps.

Item ownership protocol
-----------------------
A node's item_ref always holds a real Item while the node is unmarked.  The
thread that wins the node's mark CAS owns the extraction: it swaps item_ref
to TOMBSTONE and takes whatever it got.  Replacers CAS item_ref directly
(old -> new) and own the item they displaced; a replacer that reads TOMBSTONE
knows the node died under it and retries from a fresh search.  This gives
exactly-once retirement for every displaced item with no extra state.

Migration fence
---------------
detach() swings the list handle to MOVED and then marks the head sentinel's
next-reference.  Every insert CASes some predecessor's next field with an
expected mark of False, and the migration walk marks every node it passes,
so a racing insert either lands ahead of the walk (and is captured) or its
CAS fails and the retry observes MOVED.  The head node itself is never
logically deleted; its mark bit is reused as a write fence, and only on
lists that have already been detached.
"""

from __future__ import annotations

from .atomics import AtomicRef, MarkableRef


class Moved(Exception):
    """The list was detached for migration; retry through the table."""


class UseAfterFree(RuntimeError):
    """A traversal touched a node after physical reclamation (canary hit)."""


class _Sentinel:
    __slots__ = ("_name",)

    def __init__(self, name: str):
        self._name = name

    def __repr__(self):
        return self._name


#: Handle value of a list that has been detached by table expansion.
MOVED = _Sentinel("MOVED")
#: item_ref value of a node whose item has been extracted by the mark winner.
TOMBSTONE = _Sentinel("TOMBSTONE")


class Node:
    __slots__ = ("key_hash", "key", "item_ref", "next", "freed")

    def __init__(self, key_hash: int, key: bytes, item=None, succ=None):
        self.key_hash = key_hash
        self.key = key
        self.item_ref = AtomicRef(item) if item is not None else None
        self.next = MarkableRef(succ, False)
        self.freed = False

    def __repr__(self):
        return f"Node({self.key_hash:#x}, {self.key!r})"


# One shared tail: nothing is ever linked after it and its next never changes,
# so every list can end at the same node.
TAIL = Node(1 << 64, b"\xff" * 8)


def new_handle() -> AtomicRef:
    """A fresh empty list: AtomicRef -> head sentinel -> TAIL."""
    return AtomicRef(Node(-1, b"", succ=TAIL))


def _check(node: Node) -> None:
    if node.freed:
        raise UseAfterFree(f"traversed reclaimed node {node!r}")


def _search(handle: AtomicRef, key_hash: int, key: bytes, rec):
    """Return adjacent unmarked (left, right) with left < (key_hash, key) <= right.

    Physically unlinks marked nodes encountered on the way; the unlink winner
    retires the node (zero bytes: node memory rides the per-item overhead).
    """
    while True:
        head = handle.value
        if head is MOVED:
            raise Moved
        pred = head
        succ, marked = pred.next.pair
        if marked:
            raise Moved  # detach fence is up
        curr = succ
        restart = False
        while True:
            _check(curr)
            succ, marked = curr.next.pair
            if marked:
                if not pred.next.compare_and_set(curr, False, succ, False):
                    restart = True
                    break
                rec.retire(curr, 0)
                curr = succ
                continue
            if (
                curr is TAIL
                or curr.key_hash > key_hash
                or (curr.key_hash == key_hash and curr.key >= key)
            ):
                return pred, curr
            pred = curr
            curr = succ
        if restart:
            continue


def find(handle: AtomicRef, key_hash: int, key: bytes):
    """Read-only lookup: Item or None.  Never unlinks, never writes.

    A negative answer is only trustworthy if the list is still live: a node
    marked by a migration walk still logically holds its key, so every miss
    re-checks the handle and raises Moved when the list has been detached.
    """
    head = handle.value
    if head is MOVED:
        raise Moved
    curr = head.next.pair[0]
    while True:
        _check(curr)
        succ, marked = curr.next.pair
        if (
            curr is TAIL
            or curr.key_hash > key_hash
            or (curr.key_hash == key_hash and curr.key > key)
        ):
            break  # passed the slot: miss
        if curr.key_hash == key_hash and curr.key == key:
            if marked:
                break  # logically deleted (or migrating: handle check below)
            item = curr.item_ref.value
            if item is TOMBSTONE:
                break  # extraction won the race against our mark read
            return item
        curr = succ
    if handle.value is MOVED:
        raise Moved
    return None


def insert_or_replace(handle: AtomicRef, key_hash: int, key: bytes, item, rec):
    """Set semantics: returns the displaced Item, or None if freshly inserted.

    The displaced item is handed to the caller for retirement.
    """
    while True:
        pred, curr = _search(handle, key_hash, key, rec)
        if curr is not TAIL and curr.key_hash == key_hash and curr.key == key:
            while True:
                _ref, marked = curr.next.pair
                if marked:
                    break  # dying node; retry from search
                old = curr.item_ref.value
                if old is TOMBSTONE:
                    break
                if curr.item_ref.compare_and_set(old, item):
                    return old
            continue
        node = Node(key_hash, key, item=item, succ=curr)
        if pred.next.compare_and_set(curr, False, node, False):
            return None
        # pred changed under us (new neighbor, deletion, or migration fence)


def insert_if_absent(handle: AtomicRef, key_hash: int, key: bytes, item, rec) -> bool:
    """Insert only if no live node holds the key.  Used by migration re-insertion:
    a user write that raced ahead into the target list must win over the
    migrated copy.  Returns False (key present) without touching the list.
    """
    while True:
        pred, curr = _search(handle, key_hash, key, rec)
        if curr is not TAIL and curr.key_hash == key_hash and curr.key == key:
            return False
        node = Node(key_hash, key, item=item, succ=curr)
        if pred.next.compare_and_set(curr, False, node, False):
            return True


def remove(handle: AtomicRef, key_hash: int, key: bytes, rec):
    """Logical delete + one physical unlink attempt.

    Returns the extracted Item, or None if no live node matches.  The item is
    the caller's to retire; the node is retired here iff our unlink CAS won
    (a failed unlink leaves cleanup to the next search through this bucket).
    """
    while True:
        pred, curr = _search(handle, key_hash, key, rec)
        if curr is TAIL or curr.key_hash != key_hash or curr.key != key:
            if handle.value is MOVED:
                raise Moved  # the key may be mid-migration, not absent
            return None
        succ, marked = curr.next.pair
        if marked:
            continue
        if not curr.next.compare_and_set(succ, False, succ, True):
            continue
        item = curr.item_ref.swap(TOMBSTONE)
        # mark winner: the slot held a real item (possibly a racing replacement)
        if pred.next.compare_and_set(curr, False, succ, False):
            rec.retire(curr, 0)
        return item


def remove_if(handle: AtomicRef, key_hash: int, key: bytes, expected_item, rec):
    """Remove only if the node still holds expected_item (lazy-expiry path).

    Returns one of:
      ("removed", expected_item)    -- clean removal, caller retires the item
      ("mismatch", other_item)      -- a replacement raced our mark; the node
                                       died but its fresh item is handed back
                                       for compensating re-insertion
      ("absent", None)              -- no live node held the key
    """
    while True:
        pred, curr = _search(handle, key_hash, key, rec)
        if curr is TAIL or curr.key_hash != key_hash or curr.key != key:
            if handle.value is MOVED:
                raise Moved
            return ("absent", None)
        if curr.item_ref.value is not expected_item:
            return ("absent", None)
        succ, marked = curr.next.pair
        if marked:
            continue
        if not curr.next.compare_and_set(succ, False, succ, True):
            continue
        got = curr.item_ref.swap(TOMBSTONE)
        if pred.next.compare_and_set(curr, False, succ, False):
            rec.retire(curr, 0)
        if got is expected_item:
            return ("removed", got)
        return ("mismatch", got)


def detach(handle: AtomicRef):
    """Swing the handle to MOVED and fence the head against new inserts.

    Returns the first interior node of the detached chain, or None if the
    list was empty (or already detached: idempotent).
    """
    while True:
        head = handle.value
        if head is MOVED:
            return None
        if handle.compare_and_set(head, MOVED):
            break
    while True:
        succ, _marked = head.next.pair
        if head.next.compare_and_set(succ, False, succ, True):
            break
    return succ if succ is not TAIL else None


def drain_detached(first, rec):
    """Walk a detached chain, marking every node and extracting live items.

    Yields (key_hash, key, item) for each item this walk owns.  Nodes already
    marked by a racing remove are skipped: their mark winner owns them.  The
    chain's nodes are dropped by the runtime once unreachable; they never go
    through retire, so they are exempt from the freed-canary discipline.
    """
    node = first
    out = []
    while node is not None and node is not TAIL:
        _check(node)
        won = False
        while True:
            succ, marked = node.next.pair
            if marked:
                break
            if node.next.compare_and_set(succ, False, succ, True):
                won = True
                break
        if won:
            item = node.item_ref.swap(TOMBSTONE)
            if item is not TOMBSTONE:
                out.append((node.key_hash, node.key, item))
        node = succ
    return out


def iter_live(handle: AtomicRef):
    """Snapshot iteration over (key, item) of unmarked nodes. Test/debug aid."""
    head = handle.value
    if head is MOVED:
        raise Moved
    curr = head.next.pair[0]
    while curr is not TAIL:
        _check(curr)
        succ, marked = curr.next.pair
        if not marked:
            item = curr.item_ref.value
            if item is not TOMBSTONE:
                yield curr.key, item
        curr = succ
