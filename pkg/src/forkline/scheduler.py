"""Worker pool, victim selection and the busy/lazy scheduling loops."""

from __future__ import annotations

import bisect
import glob
import itertools
import os
import random
import threading
import time
from collections import deque as _Queue
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from . import task as _task
from .cactus import StackletHeap
from .task import TaskContext, resume_migrated, resume_stolen, start_root
from .wsq import Steal, WorkStealingDeque

BUSY = "busy"
LAZY = "lazy"

_POISON = object()


# ---------------------------------------------------------------- topology


class NumaTopology:
    """Tree of the machine with one leaf per worker.

    Each leaf is described by its path from the root, e.g. ``(node, core)``.
    Groups are the subtrees hanging off the root; a one-level tree is a
    single group.
    """

    def __init__(self, paths: Sequence[Sequence[Any]], cpus: Sequence[int] | None = None, name: str = "custom"):
        if not paths:
            raise ValueError("topology needs at least one leaf")
        self.paths = [tuple(p) for p in paths]
        if len(set(self.paths)) != len(self.paths):
            raise ValueError("leaf paths must be distinct")
        self.cpus = list(cpus) if cpus is not None else None
        self.name = name
        keys: dict[Any, int] = {}
        self.group_of = []
        for p in self.paths:
            key = p[0] if len(p) > 1 else None
            self.group_of.append(keys.setdefault(key, len(keys)))
        self.groups = [[w for w, g in enumerate(self.group_of) if g == k] for k in range(len(keys))]

    def __len__(self) -> int:
        return len(self.paths)

    def distance(self, i: int, j: int) -> int:
        a, b = self.paths[i], self.paths[j]
        common = 0
        for x, y in zip(a, b):
            if x != y:
                break
            common += 1
        return max(len(a) - common, len(b) - common)

    def __repr__(self) -> str:
        return f"NumaTopology({self.name}, leaves={len(self)}, groups={len(self.groups)})"


def flat(workers: int) -> NumaTopology:
    return NumaTopology([(i,) for i in range(workers)], name=f"flat:{workers}")


def two_level(nodes: int, cores_per_node: int) -> NumaTopology:
    paths = [(n, c) for n in range(nodes) for c in range(cores_per_node)]
    return NumaTopology(paths, name=f"two-level:{nodes}x{cores_per_node}")


def _parse_cpulist(text: str) -> list[int]:
    out = []
    for part in text.strip().split(","):
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def system(workers: int | None = None) -> NumaTopology:
    """Topology read from sysfs; workers get pinned to the listed cpus."""
    allowed = sorted(os.sched_getaffinity(0))
    leaves = []
    for path in sorted(glob.glob("/sys/devices/system/node/node[0-9]*")):
        node = int(path.rsplit("node", 1)[1])
        try:
            with open(os.path.join(path, "cpulist")) as fh:
                cpus = _parse_cpulist(fh.read())
        except OSError:
            continue
        leaves.extend((node, cpu) for cpu in cpus if cpu in allowed)
    if not leaves:
        leaves = [(0, cpu) for cpu in allowed]
    if workers is not None:
        if workers > len(leaves):
            # More workers than cores: wrap around, sharing cores.
            leaves = [(leaves[i % len(leaves)][0], (leaves[i % len(leaves)][1], i)) for i in range(workers)]
        else:
            leaves = leaves[:workers]
    cpus = [leaf[1] if isinstance(leaf[1], int) else leaf[1][0] for leaf in leaves]
    return NumaTopology(leaves, cpus=cpus, name="system")


def parse_topology(text: str, workers: int) -> NumaTopology:
    """``flat``, ``system`` or ``two-level:NxC`` (the latter must cover ``workers``)."""
    if text in ("", "flat"):
        return flat(workers)
    if text == "system":
        return system(workers)
    if text.startswith("two-level:"):
        nodes, cores = (int(x) for x in text.split(":", 1)[1].lower().split("x"))
        if nodes * cores < workers:
            raise ValueError(f"{text} has {nodes * cores} cores, need {workers}")
        topo = two_level(nodes, cores)
        if nodes * cores > workers:
            topo = NumaTopology(topo.paths[:workers], name=topo.name)
        return topo
    raise ValueError(f"unknown topology {text!r}")


# ---------------------------------------------------------- victim choice


@dataclass(frozen=True)
class VictimTable:
    worker: int
    victims: tuple[int, ...]
    probabilities: tuple[float, ...]
    cdf: tuple[float, ...] = field(repr=False)

    def __len__(self) -> int:
        return len(self.victims)

    def probability(self, j: int) -> float:
        try:
            return self.probabilities[self.victims.index(j)]
        except ValueError:
            return 0.0


def build_victim_table(topology: NumaTopology, i: int) -> VictimTable:
    """Steal probabilities from worker ``i``: weight 1 / (n r^2).

    ``r`` is the tree distance to the victim and ``n`` the number of workers
    at that same distance from ``i``.
    """
    others = [j for j in range(len(topology)) if j != i]
    if not others:
        return VictimTable(i, (), (), ())
    dist = {j: topology.distance(i, j) for j in others}
    at_distance: dict[int, int] = {}
    for r in dist.values():
        at_distance[r] = at_distance.get(r, 0) + 1
    weights = [1.0 / (at_distance[dist[j]] * dist[j] ** 2) for j in others]
    total = sum(weights)
    probs = tuple(w / total for w in weights)
    cdf = list(itertools.accumulate(probs))
    cdf[-1] = 1.0
    return VictimTable(i, tuple(others), probs, tuple(cdf))


def select_victim(table: VictimTable, rng: random.Random) -> int:
    if not table.victims:
        raise ValueError("no victims: a single worker cannot steal")
    k = bisect.bisect_right(table.cdf, rng.random())
    return table.victims[min(k, len(table.victims) - 1)]


# ------------------------------------------------------------------- pool


class PoolClosed(RuntimeError):
    pass


class TaskFailed(RuntimeError):
    """A task raised; the pool was aborted."""


class Ticket:
    """Handle for a scheduled root task; also its result address."""

    __slots__ = ("value", "error", "_done")

    def __init__(self) -> None:
        self.value: Any = None
        self.error: BaseException | None = None
        self._done = threading.Event()

    def done(self) -> bool:
        return self._done.is_set()


class _Group:
    """Sleep bookkeeping for one NUMA group of a lazy pool."""

    __slots__ = ("index", "lock", "sleepers", "thieves", "members")

    def __init__(self, index: int, members: list[int]) -> None:
        self.index = index
        self.members = members
        self.lock = threading.Lock()
        self.sleepers: list[int] = []
        self.thieves = len(members)


def _env_int(name: str) -> int | None:
    raw = os.environ.get(name)
    if raw is None or raw.strip() == "":
        return None
    return int(raw)


class Pool:
    """A fixed set of worker threads running fork-join tasks.

    >>> with Pool(2) as pool:
    ...     pool.run(some_task, 10)

    Arguments left as ``None`` fall back to ``FORKLINE_THREADS``,
    ``FORKLINE_SCHED`` and ``FORKLINE_SEED``, then to one worker per cpu, the
    lazy scheduler and seed 0.
    """

    def __init__(
        self,
        threads: int | None = None,
        scheduler: str | None = None,
        topology: NumaTopology | str | None = None,
        seed: int | None = None,
        *,
        debug: bool = False,
        trace: Callable[[str, int, list], None] | None = None,
        pin: bool | None = None,
    ) -> None:
        if threads is None:
            threads = _env_int("FORKLINE_THREADS") or os.cpu_count() or 1
        if scheduler is None:
            scheduler = os.environ.get("FORKLINE_SCHED", LAZY).strip().lower() or LAZY
        if seed is None:
            seed = _env_int("FORKLINE_SEED") or 0
        if threads < 1:
            raise ValueError("need at least one worker")
        if scheduler not in (BUSY, LAZY):
            raise ValueError(f"scheduler must be 'busy' or 'lazy', got {scheduler!r}")
        if topology is None:
            topology = flat(threads)
        elif isinstance(topology, str):
            topology = parse_topology(topology, threads)
        if len(topology) != threads:
            raise ValueError(f"topology has {len(topology)} leaves for {threads} workers")
        self.threads = threads
        self.scheduler = scheduler
        self.topology = topology
        self.seed = seed
        self.debug = debug
        self.heap = StackletHeap()
        self.lazy = scheduler == LAZY
        self._closed = False
        self._stopping = False
        self._error: BaseException | None = None
        self._placement = itertools.count()
        self._pending: set[Ticket] = set()
        self._pending_lock = threading.Lock()
        self._active = 0
        self._active_lock = threading.Lock()
        self._queues = [_Queue() for _ in range(threads)]
        self._tables = [build_victim_table(topology, w) for w in range(threads)]
        self._groups = [_Group(k, members) for k, members in enumerate(topology.groups)]
        self._semaphores = [threading.Semaphore(0) for _ in range(threads)]
        self._contexts: list[TaskContext] = []
        for w in range(threads):
            group = self._groups[topology.group_of[w]] if self.lazy else None
            ctx = TaskContext(
                w, WorkStealingDeque(), self.heap, pool=self, rng=random.Random(seed * 1_000_003 + w),
                group=group, trace=trace, debug=debug,
            )
            self._contexts.append(ctx)
        self._failed_rounds_to_sleep = 2 * threads
        if pin is None:
            pin = topology.cpus is not None
        self._pin = pin and topology.cpus is not None and hasattr(os, "sched_setaffinity")
        self._workers = [
            threading.Thread(target=self._worker_main, args=(w,), name=f"forkline-{w}", daemon=True)
            for w in range(threads)
        ]
        for t in self._workers:
            t.start()

    # -- public -------------------------------------------------------------

    def __enter__(self) -> Pool:
        return self

    def __exit__(self, *exc: Any) -> None:
        self.shutdown()

    def schedule(self, fn: Callable, *args: Any) -> Ticket:
        """Submit a root task; workers are chosen round-robin."""
        return self.schedule_on(next(self._placement) % self.threads, fn, *args)

    def schedule_on(self, worker: int, fn: Callable, *args: Any) -> Ticket:
        if self._closed:
            raise PoolClosed("pool is shut down")
        if self._error is not None:
            raise TaskFailed("pool was aborted by a failing task") from self._error
        if not 0 <= worker < self.threads:
            raise ValueError(f"no worker {worker}")
        _task.frame_bytes(fn)
        ticket = Ticket()
        with self._pending_lock:
            self._pending.add(ticket)
        self._submit(worker, (_task.ROOT, fn, args, ticket))
        return ticket

    def sync_wait(self, ticket: Ticket, timeout: float | None = None) -> Any:
        if not ticket._done.wait(timeout):
            raise TimeoutError("root task did not finish in time")
        if ticket.error is not None:
            raise TaskFailed(f"task failed: {ticket.error!r}") from ticket.error
        return ticket.value

    def run(self, fn: Callable, *args: Any) -> Any:
        return self.sync_wait(self.schedule(fn, *args))

    def shutdown(self) -> None:
        if self._closed:
            return
        self._closed = True
        self._stopping = True
        for w in range(self.threads):
            self._submit(w, _POISON)
        current = threading.current_thread()
        for t in self._workers:
            if t is not current:
                t.join()
        for ctx in self._contexts:
            ctx.pool = None
            ctx.group = None

    def worker_stats(self) -> list[dict[str, int]]:
        return [ctx.stats.as_dict() for ctx in self._contexts]

    def stat(self, name: str) -> int:
        return sum(getattr(ctx.stats, name) for ctx in self._contexts)

    @property
    def peak_frame_bytes(self) -> int:
        return self.heap.peak_bytes

    def reset_peak(self) -> None:
        """Restart the high-water mark from current usage; call between roots."""
        self.heap.reset_peak()

    def awake_thieves(self) -> list[int]:
        return [g.thieves for g in self._groups]

    def sleeping(self) -> int:
        return sum(len(g.sleepers) for g in self._groups)

    # -- hooks used by the trampoline ----------------------------------------

    def _root_done(self, ticket: Ticket) -> None:
        with self._pending_lock:
            self._pending.discard(ticket)
        ticket._done.set()

    def _submit_resume(self, worker: int, frame: list, handoff: Any) -> None:
        self._submit(worker, (_task.MIGRATE, frame, handoff))

    def _wake_group(self, group: _Group) -> None:
        with group.lock:
            if group.sleepers:
                w = group.sleepers.pop()
                group.thieves += 1
                self._semaphores[w].release()

    # -- internals -------------------------------------------------------------

    def _submit(self, worker: int, item: Any) -> None:
        if not self.lazy:
            self._queues[worker].append(item)
            return
        group = self._groups[self.topology.group_of[worker]]
        # Enqueue under the group lock so a concurrent sleeper either sees the
        # item on its last check or is registered and gets woken here.
        with group.lock:
            self._queues[worker].append(item)
            if worker in group.sleepers:
                group.sleepers.remove(worker)
                group.thieves += 1
                self._semaphores[worker].release()

    def _abort(self, exc: BaseException) -> None:
        if self._error is None:
            self._error = exc
        self._stopping = True
        with self._pending_lock:
            pending = list(self._pending)
            self._pending.clear()
        for ticket in pending:
            ticket.error = exc
            ticket._done.set()
        for w in range(self.threads):
            self._queues[w].append(_POISON)
            self._semaphores[w].release()

    def _become_active(self, ctx: TaskContext) -> None:
        group = ctx.group
        with group.lock:
            group.thieves -= 1
        with self._active_lock:
            self._active += 1
            first = self._active == 1
        if first:
            # Work just appeared in a quiet pool: make sure every group has a thief.
            for g in self._groups:
                if not g.thieves and g.sleepers:
                    self._wake_group(g)
        elif not group.thieves and group.sleepers:
            self._wake_group(group)

    def _become_thief(self, ctx: TaskContext) -> None:
        with self._active_lock:
            self._active -= 1
        with ctx.group.lock:
            ctx.group.thieves += 1

    def _has_local_work(self, w: int) -> bool:
        return bool(self._queues[w]) or not self._contexts[w].deque.empty()

    def _try_sleep(self, ctx: TaskContext) -> bool:
        w = ctx.worker_id
        group = ctx.group
        with group.lock:
            if group.thieves <= 1 and self._active > 0:
                return False
            if self._has_local_work(w) or self._stopping:
                return False
            group.thieves -= 1
            group.sleepers.append(w)
        ctx.stats.sleeps += 1
        if self.debug:
            with group.lock:
                if w in group.sleepers and self._has_local_work(w):
                    ctx.stats.sleeps_with_local_work += 1
        self._semaphores[w].acquire()
        return True

    def _run_item(self, ctx: TaskContext, item: tuple) -> None:
        if item[0] == _task.ROOT:
            start_root(ctx, item[1], item[2], item[3])
        else:
            resume_migrated(ctx, item[1], item[2])

    def _worker_main(self, w: int) -> None:
        ctx = self._contexts[w]
        _task._local.worker_id = w
        if self._pin:
            try:
                os.sched_setaffinity(0, {self.topology.cpus[w]})
            except OSError:
                pass
        try:
            self._loop(ctx)
        except BaseException as exc:  # a faulting task aborts the runtime
            self._abort(exc)
        finally:
            _task._local.worker_id = None

    def _loop(self, ctx: TaskContext) -> None:
        w = ctx.worker_id
        queue = self._queues[w]
        own = ctx.deque
        table = self._tables[w]
        rng = ctx.rng
        stats = ctx.stats
        lazy = self.lazy
        limit = self._failed_rounds_to_sleep
        failed = 0
        while True:
            if queue:
                item = queue.popleft()
                if item is _POISON:
                    return
                if lazy:
                    self._become_active(ctx)
                self._run_item(ctx, item)
                if lazy:
                    self._become_thief(ctx)
                failed = 0
                continue
            if self._stopping:
                # Wait for the poison pill; never run new work after shutdown.
                if lazy:
                    self._semaphores[w].acquire(timeout=0.01)
                else:
                    time.sleep(1e-4)
                continue
            if not own.empty():
                # Left behind by a migration: the stranded child runs elsewhere.
                got = own.steal()
                if got:
                    if lazy:
                        self._become_active(ctx)
                    resume_stolen(ctx, got.item)
                    if lazy:
                        self._become_thief(ctx)
                continue
            if table.victims:
                victim = select_victim(table, rng)
                stats.steal_attempts += 1
                got = self._contexts[victim].deque.steal()
                if got.tag is Steal.SUCCESS:
                    if lazy:
                        self._become_active(ctx)
                    resume_stolen(ctx, got.item)
                    if lazy:
                        self._become_thief(ctx)
                    failed = 0
                    continue
                if got.tag is Steal.ABORT:
                    stats.aborts += 1
                    continue
            failed += 1
            if not lazy:
                time.sleep(0 if table.victims else 5e-5)
                continue
            if failed >= limit:
                failed = 0
                if self._try_sleep(ctx):
                    continue
            time.sleep(1e-6)


def max_threads() -> int:
    return os.cpu_count() or 1


__all__ = [
    "BUSY", "LAZY", "NumaTopology", "Pool", "PoolClosed", "TaskFailed", "Ticket", "VictimTable",
    "build_victim_table", "flat", "max_threads", "parse_topology", "select_victim", "system", "two_level",
]
