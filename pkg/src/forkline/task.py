"""Tasks, frames and the continuation-stealing protocol.

A task is a generator function.  It talks to the runtime by yielding
operations::

    def fib(n):
        if n < 2:
            return n
        a, b = Slot(), Slot()
        yield fork(a, fib, n - 1)
        yield call(b, fib, n - 2)
        yield join
        return a.value + b.value

``fork`` runs the child immediately on the current worker and leaves the
parent's continuation in the worker's deque where thieves can take it.
``call`` does the same without exposing the parent.  ``join`` waits for every
child forked since the previous join.  The value a task returns is written to
the result address given at fork/call time (anything with a writable
``value`` attribute, or ``None`` to discard it).

Every frame is charged to the worker's segmented stack.  Control never nests
on the interpreter stack: :func:`resume` is a trampoline that switches
between generators in a flat loop, so arbitrarily deep task chains use a
constant number of native frames.

Frames are plain lists indexed by the constants below; they are created once
per task on the hottest path of the runtime and a list literal is several
times cheaper than any class instance.
"""

from __future__ import annotations

import inspect
import threading
from typing import Any, Callable, NamedTuple

from .cactus import ALIGNMENT, SegmentedStack, align

SENTINEL = 1 << 31

# Operation tags, also used as frame kinds.
FORK = 0
CALL = 1
ROOT = 2
JOIN = 3
ALLOC = 4
FREE = 5
MIGRATE = 6

# Frame layout.
GEN = 0
PARENT = 1
KIND = 2
RESULT = 3
STACKLET = 4
ADDR = 5
SIZE = 6
STEALS = 7
JOINS = 8
DECREMENTS = 9
IN_SCOPE = 10

#: Bytes charged per frame on top of the task's locals and evaluation stack.
FRAME_HEADER_BYTES = 64

_frame_bytes: dict[Callable, int] = {}

# Striped locks stand in for atomic read-modify-write on the join counter.
_STRIPES = tuple(threading.Lock() for _ in range(64))


class ProtocolError(RuntimeError):
    """A task broke the fork/join contract (FILO, fully-strict, scope rules)."""


class Slot:
    """A result address holding one value."""

    __slots__ = ("value",)

    def __init__(self, value: Any = None) -> None:
        self.value = value

    def __repr__(self) -> str:
        return f"Slot({self.value!r})"


class Cell:
    """A result address pointing into a typed buffer, e.g. stack memory."""

    __slots__ = ("buffer", "index")

    def __init__(self, buffer: Any, index: int) -> None:
        self.buffer = buffer
        self.index = index

    @property
    def value(self) -> Any:
        return self.buffer[self.index]

    @value.setter
    def value(self, v: Any) -> None:
        self.buffer[self.index] = v


class StackBuffer(NamedTuple):
    """Memory obtained with :func:`frame_alloc`."""

    address: int
    nbytes: int
    view: memoryview

    def cast(self, fmt: str) -> memoryview:
        return self.view.cast(fmt)


def fork(result: Any, fn: Callable, *args: Any) -> tuple:
    return (FORK, result, fn, args)


def call(result: Any, fn: Callable, *args: Any) -> tuple:
    return (CALL, result, fn, args)


join = (JOIN,)


def frame_alloc(nbytes: int) -> tuple:
    """Yield this to get a :class:`StackBuffer` on the worker's stack.

    Only valid outside a fork-join scope; release it with
    :func:`frame_dealloc` in reverse order before the task returns.
    """
    return (ALLOC, nbytes)


def frame_dealloc(buffer: StackBuffer) -> tuple:
    return (FREE, buffer)


def migrate_to(worker: int) -> tuple:
    """Yield this to continue the task on ``worker``."""
    return (MIGRATE, worker)


_local = threading.local()


def current_worker() -> int | None:
    """Id of the worker running the caller, or ``None`` outside a pool."""
    return getattr(_local, "worker_id", None)


def frame_bytes(fn: Callable) -> int:
    size = _frame_bytes.get(fn)
    if size is None:
        if not inspect.isgeneratorfunction(fn):
            raise TypeError(f"{fn!r} is not a generator function and cannot be a task")
        code = fn.__code__
        size = align(FRAME_HEADER_BYTES + 8 * (code.co_nlocals + code.co_stacksize))
        _frame_bytes[fn] = size
    return size


class WorkerStats:
    """Per-worker counters; written only by their worker."""

    __slots__ = (
        "steals", "steal_attempts", "aborts", "joins_suspended", "joins_reconciled",
        "implicit_joins", "adoptions", "releases", "balance_checks", "balance_violations",
        "adoption_violations", "owner_violations", "migrations", "sleeps",
        "sleeps_with_local_work", "roots",
    )

    def __init__(self) -> None:
        for name in self.__slots__:
            setattr(self, name, 0)

    def as_dict(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in self.__slots__}


class TaskContext:
    """Worker-local state: the owned stack, the deque and scheduling hooks."""

    __slots__ = (
        "worker_id", "stack", "deque", "rng", "heap", "pool", "group", "stats", "trace", "debug",
    )

    def __init__(self, worker_id, deque, heap, pool=None, rng=None, group=None, trace=None, debug=False):
        self.worker_id = worker_id
        self.deque = deque
        self.heap = heap
        self.pool = pool
        self.rng = rng
        self.group = group
        self.trace = trace
        self.debug = debug
        self.stats = WorkerStats()
        self.stack = SegmentedStack(heap)
        self.stack.owner = worker_id


def _fetch_sub_joins(frame: list, amount: int, decrement: bool) -> int:
    with _STRIPES[(id(frame) >> 4) & 63]:
        left = frame[JOINS] - amount
        frame[JOINS] = left
        if decrement:
            frame[DECREMENTS] += 1
        return left


def _emit(ctx: TaskContext, event: str, frame: list) -> None:
    if ctx.trace is not None:
        ctx.trace(event, ctx.worker_id, frame)


def _take_stack(ctx: TaskContext, target: SegmentedStack) -> SegmentedStack:
    """Adopt ``target`` as the worker's stack; the current one must be empty."""
    current = ctx.stack
    stats = ctx.stats
    stats.adoptions += 1
    if current is target:
        target.owner = ctx.worker_id
        return target
    if not current.empty():
        stats.adoption_violations += 1
        raise ProtocolError(f"worker {ctx.worker_id} adopted a stack while its own was not empty")
    if target.owner is not None and target.owner != ctx.worker_id:
        stats.owner_violations += 1
        raise ProtocolError(f"stack owned by worker {target.owner} adopted by {ctx.worker_id}")
    current.destroy()
    target.owner = ctx.worker_id
    ctx.stack = target
    return target


def _release_stack(ctx: TaskContext) -> SegmentedStack:
    """Give up the current stack (someone else will adopt it) and start a fresh one."""
    ctx.stats.releases += 1
    fresh = SegmentedStack(ctx.heap)
    fresh.owner = ctx.worker_id
    ctx.stack = fresh
    return fresh


def _reset(ctx: TaskContext, frame: list, steals: int) -> None:
    stats = ctx.stats
    stats.balance_checks += 1
    if frame[DECREMENTS] != steals:
        stats.balance_violations += 1
    frame[STEALS] = 0
    frame[JOINS] = SENTINEL
    frame[DECREMENTS] = 0


def _implicit_join(ctx: TaskContext, parent: list) -> list | None:
    """A forked child finished but its parent was stolen: register completion.

    Returns the parent when this worker was the last to join it.
    """
    ctx.stats.implicit_joins += 1
    parent_stack = parent[STACKLET].stack
    own = ctx.stack is parent_stack
    if own:
        # Give up ownership before the decrement publishes our completion.
        parent_stack.owner = None
    left = _fetch_sub_joins(parent, 1, True)
    if left == 0:
        _take_stack(ctx, parent_stack)
        _reset(ctx, parent, parent[STEALS])
        _emit(ctx, "implicit_join_last", parent)
        return parent
    if own:
        _release_stack(ctx)
    _emit(ctx, "implicit_join", parent)
    return None


def new_frame(ctx: TaskContext, fn: Callable, args: tuple, kind: int, result: Any, parent=None) -> list:
    size = frame_bytes(fn)
    stack = ctx.stack
    addr = stack.alloc(size)
    return [fn(*args), parent, kind, result, stack.top, addr, size, 0, SENTINEL, 0, False]


def resume(ctx: TaskContext, frame: list, value: Any = None) -> None:
    """Run ``frame`` and whatever it transfers control to.

    Returns when the worker has nothing left to run locally and must go back
    to the scheduler.  Every "resume X" of the protocol is a reassignment of
    ``frame`` followed by another turn of the loop.
    """
    deque = ctx.deque
    push = deque.push
    pop = deque.pop
    group = ctx.group
    sizes = _frame_bytes
    stack = ctx.stack
    sentinel = SENTINEL
    while True:
        try:
            op = frame[0].send(value)
        except StopIteration as stop:
            result = frame[3]
            if result is not None:
                result.value = stop.value
            # Deallocate the finished frame: it is the newest allocation on our stack.
            st = frame[4]
            addr = frame[5]
            if st is not stack.top or st.cursor - frame[6] != addr:
                raise ProtocolError("task returned with live stack allocations or on a foreign stack")
            st.cursor = addr
            if addr == st.lo and st.prev is not None:
                stack._pop_stacklet()
            kind = frame[2]
            if kind == CALL:
                frame = frame[1]
                value = None
                continue
            if kind == FORK:
                parent = pop()
                if parent is not None:
                    frame = parent
                    value = None
                    continue
                frame = _implicit_join(ctx, frame[1])
                if frame is None:
                    return
                stack = ctx.stack
                value = None
                continue
            ctx.stats.roots += 1
            ctx.pool._root_done(result)
            return
        value = None
        tag = op[0]
        if tag <= CALL:
            fn = op[2]
            size = sizes.get(fn)
            if size is None:
                size = frame_bytes(fn)
            st = stack.top
            addr = st.cursor
            if addr + size <= st.hi:
                st.cursor = addr + size
            else:
                addr = stack._alloc_slow(size)
                st = stack.top
            child = [fn(*op[3]), frame, tag, op[1], st, addr, size, 0, sentinel, 0, False]
            if tag == FORK:
                frame[10] = True
                push(frame)
                if group is not None and group.sleepers and not group.thieves:
                    ctx.pool._wake_group(group)
            frame = child
            continue
        if tag == JOIN:
            frame[10] = False
            steals = frame[7]
            if steals == 0:
                continue
            # Shortcut: every stranded child already checked in.
            if frame[8] == sentinel - steals or _fetch_sub_joins(frame, sentinel - steals, False) == 0:
                stack = _take_stack(ctx, frame[4].stack)
                ctx.stats.joins_reconciled += 1
                _reset(ctx, frame, steals)
                _emit(ctx, "join_last", frame)
                continue
            ctx.stats.joins_suspended += 1
            _emit(ctx, "join_suspend", frame)
            return
        if tag == ALLOC:
            if frame[10] or stack is not frame[4].stack:
                raise ProtocolError("frame_alloc inside a fork-join scope")
            size = align(op[1])
            addr = stack.alloc(size)
            value = StackBuffer(addr, size, stack.view(addr, size))
            continue
        if tag == FREE:
            buf = op[1]
            if frame[10] or stack is not frame[4].stack:
                raise ProtocolError("frame_dealloc inside a fork-join scope")
            try:
                stack.dealloc(buf.address, buf.nbytes)
            except AssertionError as exc:
                raise ProtocolError(str(exc)) from None
            buf.view.release()
            continue
        if tag == MIGRATE:
            target = op[1]
            if target == ctx.worker_id:
                continue
            ctx.stats.migrations += 1
            handoff = None
            frame_stack = frame[4].stack
            if stack is frame_stack:
                frame_stack.owner = None
                handoff = frame_stack
                stack = _release_stack(ctx)
            ctx.pool._submit_resume(target, frame, handoff)
            return
        raise TypeError(f"task yielded an unknown operation: {op!r}")


def start_root(ctx: TaskContext, fn: Callable, args: tuple, ticket: Any) -> None:
    frame = new_frame(ctx, fn, args, ROOT, ticket)
    resume(ctx, frame)


def resume_stolen(ctx: TaskContext, frame: list) -> None:
    """Continue a parent continuation taken from some deque."""
    frame[STEALS] += 1
    ctx.stats.steals += 1
    _emit(ctx, "steal", frame)
    resume(ctx, frame)


def resume_migrated(ctx: TaskContext, frame: list, handoff: SegmentedStack | None) -> None:
    if handoff is not None:
        _take_stack(ctx, handoff)
    resume(ctx, frame)


def serial_run(fn: Callable, *args: Any) -> Any:
    """Run a task on the calling thread with a private stack and deque.

    Forks still push and pop, so this is exactly a one-worker execution
    without any thieves.
    """
    from .wsq import WorkStealingDeque

    class _Solo:
        def _root_done(self, ticket):
            pass

    ctx = TaskContext(0, WorkStealingDeque(), heap=None, pool=_Solo())
    slot = Slot()
    start_root(ctx, fn, args, slot)
    return slot.value


__all__ = [
    "ALIGNMENT", "Cell", "ProtocolError", "SENTINEL", "Slot", "StackBuffer", "TaskContext",
    "call", "current_worker", "fork", "frame_alloc", "frame_dealloc", "join", "migrate_to",
    "resume", "serial_run",
]
