"""Deterministic interleaving explorer for the lock-free list layer.

Every load/store/CAS on a traced atomic cell becomes a scheduling point.
Worker threads run one list-operation script each and park at every point;
a driver replays a chosen schedule prefix, then extends it, enumerating
every distinct interleaving by depth-first search.  Outcomes are checked
against the set of sequential-map histories consistent with per-thread
program order and observed real-time precedence.

Cells created while a worker does not hold the floor (module import, test
setup on the main thread) never block: the gate is a no-op outside workers.
"""

import threading
from contextlib import contextmanager

from fleec import lockfree_list as ll
from fleec.atomics import AtomicRef, MarkableRef, _stripe_for
from fleec.clock_table import fnv1a_64
from fleec.reclamation import EpochManager

_tls = threading.local()

_REF_VALUE = AtomicRef.value
_REF_STRIPE = AtomicRef._stripe
_MR_PAIR = MarkableRef.pair
_MR_STRIPE = MarkableRef._stripe

# global step clock, ticked by the driver before each grant; workers read it
# only while holding the floor, so plain list access is race-free
_now = [0]


def _gate():
    w = getattr(_tls, "worker", None)
    if w is not None and w.active:
        w.park()


class TracedRef(AtomicRef):
    """AtomicRef whose every shared access parks at the scheduler gate.

    Construction writes through the raw slot: a cell is private until its
    creator publishes it, so the first visible access is the publish itself.
    Composite ops gate once, before taking the stripe; gating while holding
    a stripe could deadlock a parked worker against a running one.
    """

    __slots__ = ()

    def __init__(self, value=None):
        _REF_VALUE.__set__(self, value)
        _REF_STRIPE.__set__(self, _stripe_for(self))

    @property
    def value(self):
        _gate()
        return _REF_VALUE.__get__(self)

    @value.setter
    def value(self, new):
        _gate()
        _REF_VALUE.__set__(self, new)

    def load(self):
        return self.value

    def store(self, new):
        self.value = new

    def swap(self, new):
        _gate()
        with _REF_STRIPE.__get__(self):
            old = _REF_VALUE.__get__(self)
            _REF_VALUE.__set__(self, new)
            return old

    def compare_and_set(self, expected, new) -> bool:
        _gate()
        with _REF_STRIPE.__get__(self):
            if _REF_VALUE.__get__(self) is expected:
                _REF_VALUE.__set__(self, new)
                return True
            return False


class TracedMarkable(MarkableRef):
    __slots__ = ()

    def __init__(self, ref=None, mark=False):
        _MR_PAIR.__set__(self, (ref, mark))
        _MR_STRIPE.__set__(self, _stripe_for(self))

    @property
    def pair(self):
        _gate()
        return _MR_PAIR.__get__(self)

    def load(self):
        return self.pair

    def compare_and_set(self, expected_ref, expected_mark, new_ref, new_mark) -> bool:
        _gate()
        with _MR_STRIPE.__get__(self):
            ref, mark = _MR_PAIR.__get__(self)
            if ref is expected_ref and mark is expected_mark:
                _MR_PAIR.__set__(self, (new_ref, new_mark))
                return True
            return False


@contextmanager
def traced_cells():
    """Route new list nodes and handles through the traced cell types."""
    saved = (ll.AtomicRef, ll.MarkableRef)
    ll.AtomicRef, ll.MarkableRef = TracedRef, TracedMarkable
    try:
        yield
    finally:
        ll.AtomicRef, ll.MarkableRef = saved


class StalledWorker(RuntimeError):
    pass


class _Worker(threading.Thread):
    """Reusable cooperative worker: runs a callable gate to gate.

    Handshake: the driver sets ``go``; the worker runs until the next gate
    (where park() sets ``ready`` and waits for ``go`` again) or until the
    callable returns, which sets ``done`` before ``ready``.
    """

    def __init__(self, idx: int):
        super().__init__(name=f"interleave-{idx}", daemon=True)
        self.idx = idx
        self.go = threading.Event()
        self.ready = threading.Event()
        self.fn = None
        self.active = False
        self.done = True
        self.error = None
        self.start()

    def run(self):
        _tls.worker = self
        while True:
            self.go.wait()
            self.go.clear()
            try:
                self.fn()
            except BaseException as exc:  # surfaced by the driver
                self.error = exc
            self.active = False
            self.done = True
            self.ready.set()

    def park(self):
        self.ready.set()
        self.go.wait()
        self.go.clear()

    def arm(self, fn):
        self.fn = fn
        self.error = None
        self.done = False
        self.active = True

    def step(self):
        self.go.set()
        if not self.ready.wait(timeout=30.0):
            raise StalledWorker(f"worker {self.idx} made no progress")
        self.ready.clear()


_pool: list = []


def _workers(n: int):
    while len(_pool) < n:
        _pool.append(_Worker(len(_pool)))
    return _pool[:n]


def run_schedule(builder, prefix=()):
    """One complete run.  Follows ``prefix``, then always picks the lowest
    runnable worker.  Returns (schedule, runnable_sets, finish_result)."""
    fns, finish = builder()
    workers = _workers(len(fns))
    for w, fn in zip(workers, fns):
        w.arm(fn)
    _now[0] = 0
    schedule = []
    runnable_log = []
    while True:
        live = [w.idx for w in workers if not w.done]
        if not live:
            break
        if len(schedule) < len(prefix):
            pick = prefix[len(schedule)]
            if pick not in live:
                raise AssertionError("prefix replay diverged")
        else:
            pick = live[0]
        runnable_log.append(live)
        schedule.append(pick)
        _now[0] += 1
        workers[pick].step()
    for w in workers:
        if w.error is not None:
            raise AssertionError(
                f"worker {w.idx} raised under schedule={tuple(schedule)}"
            ) from w.error
    return tuple(schedule), runnable_log, finish()


def explore(builder, max_schedules=200_000):
    """Depth-first enumeration of every distinct schedule.

    Yields (schedule, outcome) per completed run.  Branches are discovered
    from the runnable sets of each run: at every step past the forced
    prefix, each not-taken runnable worker seeds a sibling prefix.
    """
    stack = [()]
    n = 0
    while stack:
        prefix = stack.pop()
        schedule, runnable_log, outcome = run_schedule(builder, prefix)
        n += 1
        if n > max_schedules:
            raise AssertionError(f"schedule explosion: over {max_schedules} runs")
        for pos in range(len(prefix), len(schedule)):
            for alt in runnable_log[pos]:
                if alt > schedule[pos]:
                    stack.append(schedule[:pos] + (alt,))
        yield schedule, outcome


class Payload:
    """Inert stand-in for a cache item; the label names it in outcomes."""

    __slots__ = ("label",)

    def __init__(self, label: str):
        self.label = label

    def __repr__(self):
        return f"P({self.label})"


def _label(item):
    return item.label if isinstance(item, Payload) else item


def _apply_real(op, handle, rec):
    kind, key = op[0], op[1]
    h = fnv1a_64(key)
    if kind == "ior":
        return _label(ll.insert_or_replace(handle, h, key, op[2], rec))
    if kind == "ifa":
        return ll.insert_if_absent(handle, h, key, op[2], rec)
    if kind == "rm":
        return _label(ll.remove(handle, h, key, rec))
    if kind == "find":
        return _label(ll.find(handle, h, key))
    raise ValueError(kind)


def _apply_model(op, m):
    kind, key = op[0], op[1]
    if kind == "ior":
        old = m.get(key)
        m[key] = op[2].label
        return old
    if kind == "ifa":
        if key in m:
            return False
        m[key] = op[2].label
        return True
    if kind == "rm":
        return m.pop(key, None)
    if kind == "find":
        return m.get(key)
    raise ValueError(kind)


def map_builder(scripts, pre=()):
    """Builder for map-operation scripts against one fresh list per run.

    scripts: per-thread sequences of ("ior", key, Payload) / ("ifa", key,
    Payload) / ("rm", key) / ("find", key).  ``pre`` seeds the list before
    workers start.  finish() reports per-op results, per-op step spans,
    the final live (key, label) set, and the physical key order.
    """

    def build():
        mgr = EpochManager(slots=8)
        handle = ll.new_handle()
        for key, payload in pre:
            ll.insert_or_replace(handle, fnv1a_64(key), key, payload, mgr.register())
        results = {}
        spans = {}

        def runner(tid, script):
            rec = mgr.register()

            def fn():
                for i, op in enumerate(script):
                    start = _now[0]
                    res = _apply_real(op, handle, rec)
                    results[(tid, i)] = res
                    spans[(tid, i)] = (start, _now[0])

            return fn

        fns = [runner(t, s) for t, s in enumerate(scripts)]

        def finish():
            live = list(ll.iter_live(handle))
            final = frozenset((k, _label(item)) for k, item in live)
            order = [k for k, _ in live]
            return results, spans, final, order

        return fns, finish

    return build


def linearizations(scripts, pre, preds):
    """Outcome set over every sequential order consistent with program
    order and the precedence map ``preds`` (op -> ops that must precede)."""
    ids = [[(t, i) for i in range(len(s))] for t, s in enumerate(scripts)]
    flat = sorted(oid for row in ids for oid in row)
    pre_labels = {k: p.label for k, p in pre}
    out = set()
    order = []

    def rec(placed):
        if len(order) == len(flat):
            m = dict(pre_labels)
            res = {}
            for oid in order:
                res[oid] = _apply_model(scripts[oid[0]][oid[1]], m)
            out.add((tuple(res[oid] for oid in flat), frozenset(m.items())))
            return
        for row in ids:
            done = sum(1 for oid in order if oid[0] == row[0][0]) if row else 0
            if done == len(row):
                continue
            oid = row[done]
            if preds[oid] - placed:
                continue
            order.append(oid)
            placed.add(oid)
            rec(placed)
            placed.discard(oid)
            order.pop()

    rec(set())
    return out


def check_map_scripts(scripts, pre=(), max_schedules=200_000):
    """Explore every interleaving; assert each outcome is a linearization.

    Also asserts the list stays physically sorted by (hash, key) in every
    run.  Returns (number of schedules, set of distinct observed outcomes).
    """
    flat = sorted((t, i) for t, s in enumerate(scripts) for i in range(len(s)))
    seen = set()
    count = 0
    lin_cache = {}
    with traced_cells():
        for schedule, (results, spans, final, order) in explore(
            map_builder(scripts, pre), max_schedules
        ):
            count += 1
            ranks = [(fnv1a_64(k), k) for k in order]
            assert ranks == sorted(ranks), (
                f"list out of order {order} schedule={schedule}"
            )
            observed = (tuple(results[oid] for oid in flat), final)
            prec = frozenset(
                (x, y)
                for x in flat
                for y in flat
                if x[0] != y[0] and spans[x][1] < spans[y][0]
            )
            if prec not in lin_cache:
                preds = {oid: set() for oid in flat}
                for x, y in prec:
                    preds[y].add(x)
                lin_cache[prec] = linearizations(scripts, pre, preds)
            assert observed in lin_cache[prec], (
                f"not linearizable: {observed} schedule={schedule} "
                f"allowed={sorted(lin_cache[prec], key=repr)}"
            )
            seen.add(observed)
    return count, seen
