"""Chase-Lev work-stealing deque.

The owning worker pushes and pops at the bottom (LIFO); any thread may steal
from the top (FIFO).  ``top`` only ever moves forward and is changed solely by
compare-and-exchange; ``bottom`` is written by the owner alone.

CPython offers no hardware compare-and-exchange, so :meth:`_cas_top` runs the
compare and the store under a private lock.  That lock is the only one in the
structure and is held for two attribute operations, never across a call.
Plain attribute loads and stores are already indivisible under the
interpreter lock, which gives every other access sequentially consistent
ordering (stronger than the acquire/release edges the algorithm needs).
"""

from __future__ import annotations

import enum
import threading
from typing import Any, NamedTuple

INITIAL_CAPACITY = 64


class Steal(enum.Enum):
    EMPTY = "empty"
    ABORT = "abort"
    SUCCESS = "success"


class StealResult(NamedTuple):
    tag: Steal
    item: Any = None

    def __bool__(self) -> bool:
        return self.tag is Steal.SUCCESS


EMPTY = StealResult(Steal.EMPTY)
ABORT = StealResult(Steal.ABORT)
_SUCCESS = Steal.SUCCESS
_make = tuple.__new__


class WorkStealingDeque:
    """Growable circular deque of opaque handles.

    ``None`` is reserved as the "nothing" answer of :meth:`pop` and may not be
    pushed.
    """

    __slots__ = ("_top", "_bottom", "_buffer", "_mask", "_retired", "_cas")

    def __init__(self, capacity: int = INITIAL_CAPACITY) -> None:
        if capacity < 1 or capacity & (capacity - 1):
            raise ValueError(f"capacity must be a power of two, got {capacity}")
        self._top = 0
        self._bottom = 0
        self._buffer: list = [None] * capacity
        self._mask = capacity - 1
        # Superseded buffers stay reachable so a thief holding one never reads freed storage.
        self._retired: list[list] = []
        self._cas = threading.Lock()

    def __len__(self) -> int:
        return max(self._bottom - self._top, 0)

    @property
    def capacity(self) -> int:
        return self._mask + 1

    @property
    def top(self) -> int:
        return self._top

    @property
    def bottom(self) -> int:
        return self._bottom

    def empty(self) -> bool:
        return self._bottom <= self._top

    def _cas_top(self, expected: int) -> bool:
        with self._cas:
            if self._top != expected:
                return False
            self._top = expected + 1
            return True

    def _grow(self, top: int, bottom: int) -> list:
        old = self._buffer
        old_mask = self._mask
        new_mask = 2 * old_mask + 1
        new = [None] * (new_mask + 1)
        for i in range(top, bottom):
            new[i & new_mask] = old[i & old_mask]
        self._retired.append(old)
        self._mask = new_mask
        self._buffer = new
        return new

    def push(self, item: Any) -> None:
        """Owner only."""
        b = self._bottom
        t = self._top
        buf = self._buffer
        if b - t > self._mask:
            buf = self._grow(t, b)
        buf[b & self._mask] = item
        self._bottom = b + 1

    def pop(self) -> Any:
        """Owner only.  Returns the newest handle, or ``None`` when empty."""
        b = self._bottom - 1
        buf = self._buffer
        self._bottom = b
        t = self._top
        if t < b:
            # More than one element: no thief can reach index b.
            i = b & self._mask
            item = buf[i]
            buf[i] = None
            return item
        if t == b:
            item = buf[b & self._mask]
            won = self._cas_top(t)
            self._bottom = b + 1
            return item if won else None
        self._bottom = b + 1
        return None

    def steal(self) -> StealResult:
        """Any thread.  Takes the oldest handle."""
        t = self._top
        b = self._bottom
        if t >= b:
            return EMPTY
        buf = self._buffer
        item = buf[t & (len(buf) - 1)]
        # compare-and-exchange on top, inlined
        cas = self._cas
        cas.acquire()
        if self._top != t:
            cas.release()
            return ABORT
        self._top = t + 1
        cas.release()
        return _make(StealResult, (_SUCCESS, item))
