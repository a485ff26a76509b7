"""Geometric segmented stacks.

A :class:`SegmentedStack` is a doubly-linked chain of :class:`Stacklet`
segments.  Allocation bumps a cursor on the top stacklet; when that does not
fit, a successor of ``max(2 * capacity, size)`` bytes is linked in (or the
cached empty successor is reused).  At most one empty stacklet is kept past
the top so that alloc/free cycles across a segment boundary do not hit the
heap every time.

Addresses are integers in a simulated address space: each stacklet reserves
``METADATA_BYTES + capacity`` addresses, the first ``METADATA_BYTES`` of
which stand for the header.  Every stacklet also owns a real ``bytearray``
of ``capacity`` bytes so that allocations can be handed out as buffers.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

#: Bytes charged per stacklet for its header (links, cursor, bounds).
METADATA_BYTES = 48
INITIAL_CAPACITY = 4096
ALIGNMENT = 16

_address_lock = threading.Lock()
_next_address = 1 << 20


def align(nbytes: int) -> int:
    """Round a request up to the allocation granularity (0 becomes 16)."""
    if nbytes <= 0:
        return ALIGNMENT
    return (nbytes + ALIGNMENT - 1) & ~(ALIGNMENT - 1)


def theorem1_bound(live: int, metadata: int = METADATA_BYTES) -> int:
    """Worst-case footprint of one segmented stack holding ``live`` bytes.

    ``(floor(log2(2M + 1)) + 1) * c + 4M``: at most ``floor(log2(2M+1))``
    occupied stacklets plus one cached, with at most ``2M`` bytes in the
    occupied ones and ``2M`` in the cached one.
    """
    if live < 1:
        raise ValueError("live bytes must be >= 1")
    if metadata < 0:
        raise ValueError("metadata size must be >= 0")
    n = int(math.floor(math.log2(2 * live + 1)))
    # guard against float rounding on exact powers of two
    while (1 << (n + 1)) <= 2 * live + 1:
        n += 1
    while (1 << n) > 2 * live + 1:
        n -= 1
    return (n + 1) * metadata + 4 * live


class Stacklet:
    __slots__ = ("prev", "next", "cursor", "lo", "hi", "memory", "stack")

    def __init__(self, capacity: int, stack: SegmentedStack | None = None) -> None:
        global _next_address
        with _address_lock:
            base = _next_address
            _next_address += align(METADATA_BYTES + capacity)
        self.prev: Stacklet | None = None
        self.next: Stacklet | None = None
        self.lo = base + METADATA_BYTES
        self.hi = self.lo + capacity
        self.cursor = self.lo
        self.memory = bytearray(capacity)
        self.stack = stack

    @property
    def capacity(self) -> int:
        return self.hi - self.lo

    @property
    def used(self) -> int:
        return self.cursor - self.lo

    def empty(self) -> bool:
        return self.cursor == self.lo

    def __repr__(self) -> str:
        return f"<Stacklet cap={self.capacity} used={self.used}>"


class StackletHeap:
    """Heap layer under every stack of a pool; tracks bytes and heap calls.

    All counters include metadata.  Updates are serialised by a lock; they
    happen only on stacklet creation and release, never on the bump path.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.live_bytes = 0
        self.peak_bytes = 0
        self.allocations = 0
        self.frees = 0

    def allocate(self, capacity: int, stack: SegmentedStack) -> Stacklet:
        stacklet = Stacklet(capacity, stack)
        with self._lock:
            self.allocations += 1
            self.live_bytes += capacity + METADATA_BYTES
            if self.live_bytes > self.peak_bytes:
                self.peak_bytes = self.live_bytes
        return stacklet

    def free(self, stacklet: Stacklet) -> None:
        with self._lock:
            self.frees += 1
            self.live_bytes -= stacklet.capacity + METADATA_BYTES
        stacklet.prev = stacklet.next = stacklet.stack = None

    def reset_peak(self) -> None:
        with self._lock:
            self.peak_bytes = self.live_bytes


@dataclass(frozen=True)
class StackMetrics:
    live_bytes: int
    footprint_bytes: int
    peak_footprint_bytes: int


class SegmentedStack:
    """FILO allocator over a chain of geometrically growing stacklets.

    Single owner at a time; ``owner`` records the worker id for debugging and
    is ``None`` while the stack is released.
    """

    __slots__ = ("base", "top", "heap", "footprint", "peak_footprint", "owner")

    def __init__(self, heap: StackletHeap | None = None, capacity: int = INITIAL_CAPACITY) -> None:
        self.heap = heap if heap is not None else StackletHeap()
        self.footprint = 0
        self.peak_footprint = 0
        self.owner: int | None = None
        self.base = self._new_stacklet(capacity)
        self.top = self.base

    def _new_stacklet(self, capacity: int) -> Stacklet:
        s = self.heap.allocate(capacity, self)
        self.footprint += capacity + METADATA_BYTES
        if self.footprint > self.peak_footprint:
            self.peak_footprint = self.footprint
        return s

    def _free_stacklet(self, s: Stacklet) -> None:
        self.footprint -= s.capacity + METADATA_BYTES
        self.heap.free(s)

    def empty(self) -> bool:
        top = self.top
        return top.cursor == top.lo and top.prev is None

    def alloc(self, nbytes: int) -> int:
        """Reserve ``align(nbytes)`` bytes; returns the start address."""
        size = align(nbytes)
        top = self.top
        cur = top.cursor
        if cur + size <= top.hi:
            top.cursor = cur + size
            return cur
        return self._alloc_slow(size)

    def _alloc_slow(self, size: int) -> int:
        top = self.top
        cached = top.next
        if cached is not None and cached.capacity >= size:
            nxt = cached
        else:
            if cached is not None:
                self._drop_chain(cached)
            nxt = self._new_stacklet(max(2 * top.capacity, size))
            nxt.prev = top
            top.next = nxt
        self.top = nxt
        addr = nxt.cursor
        nxt.cursor = addr + size
        return addr

    def dealloc(self, address: int, nbytes: int) -> None:
        """Release the most recent live allocation."""
        size = align(nbytes)
        top = self.top
        cur = top.cursor - size
        assert cur == address and cur >= top.lo, (
            f"non-FILO dealloc: address {address} size {size}, expected {cur}"
        )
        top.cursor = cur
        if cur == top.lo and top.prev is not None:
            self._pop_stacklet()

    def _pop_stacklet(self) -> None:
        top = self.top
        prev = top.prev
        beyond = top.next
        if beyond is not None:
            top.next = None
            self._drop_chain(beyond)
        # Small enough stacklets stay linked as the cached successor.
        if top.capacity > 2 * prev.capacity:
            prev.next = None
            self._free_stacklet(top)
        self.top = prev

    def _drop_chain(self, s: Stacklet | None) -> None:
        if s is not None and s.prev is not None:
            s.prev.next = None
        while s is not None:
            nxt = s.next
            self._free_stacklet(s)
            s = nxt

    def view(self, address: int, nbytes: int) -> memoryview:
        """Writable buffer over a live allocation on the top stacklet."""
        top = self.top
        if not (top.lo <= address and address + nbytes <= top.cursor):
            raise ValueError("address is not a live allocation on the top stacklet")
        off = address - top.lo
        return memoryview(top.memory)[off : off + nbytes]

    def stacklets(self) -> list[Stacklet]:
        out = []
        s = self.base
        while s is not None:
            out.append(s)
            s = s.next
        return out

    def cached(self) -> Stacklet | None:
        return self.top.next

    def live_bytes(self) -> int:
        total = 0
        s = self.top
        while s is not None:
            total += s.cursor - s.lo
            s = s.prev
        return total

    def metrics(self) -> StackMetrics:
        return StackMetrics(self.live_bytes(), self.footprint, self.peak_footprint)

    def destroy(self) -> None:
        """Return every stacklet to the heap.  The stack must be empty."""
        assert self.empty(), "destroying a stack with live allocations"
        self._drop_chain(self.base)
        self.base = self.top = None  # type: ignore[assignment]


def stack_new(heap: StackletHeap | None = None) -> SegmentedStack:
    return SegmentedStack(heap)
