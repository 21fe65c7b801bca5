"""Single-word atomic cells for CPython.

The interpreter guarantees that one attribute load or store is indivisible,
so loads here are plain reads and the hot read path acquires nothing.
Read-modify-write steps (compare-and-set, swap, fetch-add) run under striped
micro-locks because CPython exposes no hardware CAS; each lock guards exactly
one such step and is never held across a traversal, an allocation, or another
cell's operation.  At machine level these would be single instructions; this
is the portable rendering of them.
"""

from __future__ import annotations

import threading

_N_STRIPES = 1024
_STRIPES = tuple(threading.Lock() for _ in range(_N_STRIPES))


def _stripe_for(obj: object) -> threading.Lock:
    # ids are addresses; shift off allocator alignment bits before masking
    return _STRIPES[(id(obj) >> 4) & (_N_STRIPES - 1)]


class AtomicRef:
    """Mutable reference cell; compare_and_set matches by identity."""

    __slots__ = ("value", "_stripe")

    def __init__(self, value=None):
        self.value = value
        self._stripe = _stripe_for(self)

    def load(self):
        return self.value

    def store(self, value) -> None:
        self.value = value

    def swap(self, value):
        with self._stripe:
            old = self.value
            self.value = value
            return old

    def compare_and_set(self, expected, new) -> bool:
        with self._stripe:
            if self.value is expected:
                self.value = new
                return True
            return False

    def __repr__(self):
        return f"AtomicRef({self.value!r})"


class AtomicInt:
    """Integer cell with fetch-and-add; compare_and_set matches by equality."""

    __slots__ = ("value", "_stripe")

    def __init__(self, value: int = 0):
        self.value = value
        self._stripe = _stripe_for(self)

    def load(self) -> int:
        return self.value

    def store(self, value: int) -> None:
        self.value = value

    def fetch_add(self, delta: int) -> int:
        with self._stripe:
            old = self.value
            self.value = old + delta
            return old

    def add(self, delta: int) -> int:
        with self._stripe:
            new = self.value + delta
            self.value = new
            return new

    def compare_and_set(self, expected: int, new: int) -> bool:
        with self._stripe:
            if self.value == expected:
                self.value = new
                return True
            return False

    def __repr__(self):
        return f"AtomicInt({self.value})"


class MarkableRef:
    """A (reference, mark) pair updated as one word.

    The pair is stored as an immutable tuple replaced wholesale, so a plain
    read of ``.pair`` observes a consistent snapshot of both halves.  This is
    the mark-packed-into-the-pointer representation a non-blocking linked
    list needs: the mark and the successor change together or not at all.
    """

    __slots__ = ("pair", "_stripe")

    def __init__(self, ref=None, mark: bool = False):
        self.pair = (ref, mark)
        self._stripe = _stripe_for(self)

    def load(self):
        return self.pair

    def compare_and_set(self, expected_ref, expected_mark, new_ref, new_mark) -> bool:
        with self._stripe:
            ref, mark = self.pair
            if ref is expected_ref and mark == expected_mark:
                self.pair = (new_ref, new_mark)
                return True
            return False

    def attempt_mark(self, expected_ref) -> bool:
        return self.compare_and_set(expected_ref, False, expected_ref, True)

    def __repr__(self):
        ref, mark = self.pair
        return f"MarkableRef({ref!r}, marked={mark})"
