"""End-to-end acceptance checks, one verdict line per criterion.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the verdicts are
also repeated in the terminal summary.
"""

import os
import random
import statistics
import sys
import threading
import time

import numpy as np
import pytest

from forkline import Pool, Slot, current_worker, fork, join, migrate_to
from forkline.bench import harness, tasks
from forkline.cactus import INITIAL_CAPACITY, METADATA_BYTES, SegmentedStack, align, theorem1_bound
from forkline.metrics import fit_power_law, theorem2_bound
from forkline.scheduler import build_victim_table, flat, max_threads, select_victim, two_level
from forkline.wsq import Steal, WorkStealingDeque

from .helpers import Recorder, native_stack_pointer, python_depth
from .report import record

WORKER_COUNTS = sorted({1, 2, 4, max_threads()})
SCHEDULERS = ("busy", "lazy")
UTS_SEEDS = range(20)


def physical_cores():
    cpus = os.sched_getaffinity(0)
    cores = set()
    for c in cpus:
        base = f"/sys/devices/system/cpu/cpu{c}/topology/"
        try:
            with open(base + "physical_package_id") as a, open(base + "core_id") as b:
                cores.add((a.read().strip(), b.read().strip()))
        except OSError:
            return len(cpus)
    return len(cores)


# ---------------------------------------------------------------- shared sweep


def _instances():
    out = [
        harness.make_instance("fib", {"n": 34}),
        harness.make_instance("integrate", {"lo": 0.0, "hi": 1e4, "eps": 1e-9}),
        harness.make_instance("matmul", {"n": 1024}),
        harness.make_instance("nqueens", {"n": 12}),
    ]
    for preset in ("geometric-small", "binomial-small"):
        for r in UTS_SEEDS:
            for stack in (False, True):
                params = dict(harness.UTS_PRESETS[preset], r=r, stack=stack)
                inst = harness.make_instance("uts", params)
                inst.name = f"{inst.name}[{preset} r={r}]"
                out.append(inst)
    return out


@pytest.fixture(scope="session")
def sweep():
    """Every benchmark at every worker count under both schedulers.

    Records correctness, wall time and peak frame memory per cell.
    """
    start = time.perf_counter()
    instances = _instances()
    oracles = {}
    serial_time = {}
    for inst in instances:
        t = time.perf_counter()
        oracles[inst.name] = inst.serial()
        serial_time[inst.name] = time.perf_counter() - t
    cells = {}
    for sched in SCHEDULERS:
        for P in WORKER_COUNTS:
            with Pool(P, sched, seed=7) as pool:
                for inst in instances:
                    pool.reset_peak()
                    t = time.perf_counter()
                    value = inst.run(pool)
                    elapsed = time.perf_counter() - t
                    cells[(inst.name, sched, P)] = {
                        "ok": inst.same(value, oracles[inst.name]),
                        "time": elapsed,
                        "peak": pool.peak_frame_bytes,
                    }
                stats = pool.worker_stats()
            cells[("_stats", sched, P)] = stats
    return {"cells": cells, "elapsed": time.perf_counter() - start, "serial": serial_time,
            "names": [i.name for i in instances]}


# --------------------------------------------------------------- criterion 1


def test_results_match_serial_oracles(sweep):
    cells = sweep["cells"]
    bad = [k for k, v in cells.items() if k[0] != "_stats" and not v["ok"]]
    elapsed = sweep["elapsed"]
    ok = not bad and elapsed <= 600
    n = sum(1 for k in cells if k[0] != "_stats")
    record(1, ok, f"{n} runs, P={WORKER_COUNTS}, mismatches={len(bad)} {bad[:3]}, runtime {elapsed:.0f}s (limit 600s)")
    assert not bad
    assert elapsed <= 600


# --------------------------------------------------------------- criterion 2


def _deque_stress(items, thieves=3):
    q = WorkStealingDeque(64)
    taken = [[] for _ in range(thieves + 1)]
    done = threading.Event()

    def thief(k):
        add = taken[k].append
        steal = q.steal
        success, empty = Steal.SUCCESS, Steal.EMPTY
        nap = time.sleep
        while True:
            r = steal()
            if r[0] is success:
                add(r[1])
            elif r[0] is empty:
                if done.is_set() and q.empty():
                    return
                nap(0)

    threads = [threading.Thread(target=thief, args=(k + 1,)) for k in range(thieves)]
    for t in threads:
        t.start()
    add = taken[0].append
    push, pop = q.push, q.pop
    for i in range(items):
        push(i)
        if not i % 3:
            x = pop()
            if x is not None:
                add(x)
    while True:
        x = pop()
        if x is None:
            break
        add(x)
    done.set()
    for t in threads:
        t.join()
    return taken


def _quiescent_order_ok(rng):
    q = WorkStealingDeque(2)
    items = list(range(rng.randint(1, 200)))
    for x in items:
        q.push(x)
    k = rng.randint(0, len(items))
    stolen = [q.steal()[1] for _ in range(k)]
    popped = []
    while (x := q.pop()) is not None:
        popped.append(x)
    return stolen == items[:k] and popped == items[k:][::-1] and q.steal()[0] is Steal.EMPTY


def test_deque_conserves_items():
    start = time.perf_counter()
    items = 10**6
    lost = dup = 0
    order_violations = 0
    for _ in range(100):
        taken = _deque_stress(items)
        arrays = [np.asarray(t, dtype=np.int64) for t in taken]
        counts = np.bincount(np.concatenate(arrays), minlength=items)
        lost += int((counts == 0).sum())
        dup += int((counts > 1).sum())
        # a thief's steals come off the top, so each thief sees increasing items
        order_violations += sum(int((np.diff(a) < 0).any()) for a in arrays[1:])
    rng = random.Random(5)
    quiescent = all(_quiescent_order_ok(rng) for _ in range(1000))
    elapsed = time.perf_counter() - start
    ok = lost == 0 and dup == 0 and order_violations == 0 and quiescent and elapsed <= 120
    record(2, ok, f"100 x 1e6 items, 3 thieves: lost={lost} duplicated={dup} thief-order violations="
                  f"{order_violations}, quiescent order ok={quiescent}, runtime {elapsed:.0f}s (limit 120s)")
    assert lost == 0 and dup == 0 and order_violations == 0 and quiescent
    assert elapsed <= 120


# --------------------------------------------------------------- criterion 3


def test_stack_footprint_stays_bounded():
    start = time.perf_counter()
    worst = 0.0
    violations = 0
    for seed in range(10_000):
        rng = random.Random(seed)
        s = SegmentedStack()
        live = []
        live_bytes = peak = 0
        biggest = rng.choice((64, 1024, 8192, 100_000))
        for _ in range(rng.randint(1, 120)):
            if live and rng.random() < 0.45:
                addr, n = live.pop()
                s.dealloc(addr, n)
                live_bytes -= n
            else:
                n = align(rng.randint(0, biggest))
                live.append((s.alloc(n), n))
                live_bytes += n
            peak = max(peak, live_bytes)
            if peak:
                bound = theorem1_bound(peak, METADATA_BYTES) + INITIAL_CAPACITY + METADATA_BYTES
                worst = max(worst, s.footprint / bound)
                violations += s.footprint > bound
    elapsed = time.perf_counter() - start
    ok = violations == 0 and elapsed <= 60
    record(3, ok, f"10^4 FILO sequences: violations={violations}, worst footprint/bound={worst:.3f}, "
                  f"runtime {elapsed:.0f}s (limit 60s)")
    assert violations == 0
    assert elapsed <= 60


# --------------------------------------------------------------- criterion 4


def _fib_memory_points(sched, counts=(1, 2, 3, 4, 6, 8), reps=3, n=24):
    m1 = None
    points = []
    for P in counts:
        for _ in range(reps):
            with Pool(P, sched, seed=11) as pool:
                pool.reset_peak()
                pool.run(tasks.fib_task, n)
                peak = pool.peak_frame_bytes
            if P == 1:
                m1 = peak if m1 is None else max(m1, peak)
            points.append((P, peak))
    return [(P, m1, peak) for P, peak in points]


def test_peak_memory_within_pool_bound(sweep):
    start = time.perf_counter()
    cells = sweep["cells"]
    over = []
    worst = 0.0
    for name in sweep["names"]:
        for sched in SCHEDULERS:
            m1 = cells[(name, sched, 1)]["peak"]
            for P in WORKER_COUNTS:
                mp = cells[(name, sched, P)]["peak"]
                bound = theorem2_bound(P, m1, METADATA_BYTES)
                worst = max(worst, mp / bound)
                if mp > bound:
                    over.append((name, sched, P, mp, bound))
    exponents = {}
    for sched in SCHEDULERS:
        exponents[sched] = fit_power_law(_fib_memory_points(sched))
    elapsed = time.perf_counter() - start + sweep["elapsed"]
    fit_ok = all(f.n <= 1.1 for f in exponents.values())
    ok = not over and fit_ok and elapsed <= 900
    fits = ", ".join(f"{s} n={f.n:.3f}+-{f.n_stderr:.3f}" for s, f in exponents.items())
    record(4, ok, f"bound violations={len(over)} worst Mp/bound={worst:.4f}; fib memory fit {fits} (need n<=1.1); "
                  f"runtime incl. sweep {elapsed:.0f}s (limit 900s)")
    assert not over
    assert fit_ok
    assert elapsed <= 900


# --------------------------------------------------------------- criterion 5


def _chain(kind, depth):
    probe = {}

    def link(n, top=False):
        if top:
            probe["sp0"] = native_stack_pointer()
            probe["py0"] = python_depth()
        if n == 0:
            probe["sp"] = native_stack_pointer()
            probe["py"] = python_depth()
            return 0
        s = Slot()
        if kind == "fork":
            yield fork(s, link, n - 1)
        else:
            yield tasks.call(s, link, n - 1)
        yield join
        return s.value + 1

    with Pool(1, "busy") as pool:
        assert pool.run(link, depth, True) == depth
    return probe


def test_native_stack_independent_of_chain_depth():
    details = []
    ok = True
    for kind in ("fork", "call"):
        shallow, deep = _chain(kind, 1_000), _chain(kind, 100_000)
        py_same = shallow["py"] - shallow["py0"] == deep["py"] - deep["py0"]
        if shallow["sp"] is not None:
            used_shallow = shallow["sp0"] - shallow["sp"]
            used_deep = deep["sp0"] - deep["sp"]
            native_ok = abs(used_shallow - used_deep) <= 4096
            details.append(f"{kind}: native bytes {used_shallow} vs {used_deep}, interpreter frames equal={py_same}")
        else:
            native_ok = True
            details.append(f"{kind}: interpreter frames equal={py_same} (no native probe on this platform)")
        ok = ok and py_same and native_ok
    record(5, ok, "10^5-deep chains completed; " + "; ".join(details))
    assert ok


# --------------------------------------------------------------- criterion 6


def test_join_protocol_under_forced_steals():
    iterations = 10_000
    cur = {}
    passes = []

    def hook(event, worker, frame):
        if event == "steal":
            cur["stolen"].set()
        elif event == cur["want"]:
            cur["gate"].set()

    def child(i, mode, stolen, gate):
        # the parent continuation is always taken before this child returns
        if stolen is not None:
            stolen.wait(10)
        if mode == "child_last":
            gate.wait(10)
        return i * i
        yield

    def root(i, mode, stolen, gate):
        a, b = Slot(), Slot()
        yield fork(a, child, i, mode, stolen, gate)
        # from here on we run on the thief
        if mode == "owner_last":
            gate.wait(10)
        yield fork(b, child, i + 1, "plain", None, gate)
        yield join
        passes.append((i, a.value, b.value))
        return a.value + b.value

    start = time.perf_counter()
    wrong = 0
    with Pool(2, "busy", trace=hook, seed=3) as pool:
        for i in range(iterations):
            mode = ("child_last", "owner_last", "race")[i % 3]
            cur["stolen"], cur["gate"] = threading.Event(), threading.Event()
            cur["want"] = {"child_last": "join_suspend", "owner_last": "implicit_join"}.get(mode)
            got = pool.sync_wait(pool.schedule_on(0, root, i, mode, cur["stolen"], cur["gate"]), 30)
            wrong += got != i * i + (i + 1) * (i + 1)
        stats = {k: pool.stat(k) for k in ("steals", "joins_suspended", "joins_reconciled", "implicit_joins",
                                           "adoptions", "balance_checks", "balance_violations",
                                           "adoption_violations", "owner_violations")}
    once = sorted(p[0] for p in passes) == list(range(iterations))
    visible = all(a == i * i and b == (i + 1) ** 2 for i, a, b in passes)
    elapsed = time.perf_counter() - start
    ok = (once and visible and wrong == 0 and stats["steals"] >= iterations
          and stats["balance_checks"] >= iterations and stats["balance_violations"] == 0
          and stats["adoption_violations"] == 0 and stats["owner_violations"] == 0
          and stats["joins_suspended"] > 0 and stats["adoptions"] > 0)
    record(6, ok, f"{iterations} forced-steal rendezvous: exactly-once={once} results visible={visible} "
                  f"wrong={wrong} {stats} runtime {elapsed:.0f}s")
    assert ok


# --------------------------------------------------------------- criterion 7


def test_single_worker_overhead(sweep):
    serial = []
    for _ in range(3):
        t = time.perf_counter()
        tasks.fib_serial(34)
        serial.append(time.perf_counter() - t)
    ts = statistics.median(serial)
    ratios = {s: sweep["cells"][("fib", s, 1)]["time"] / ts for s in SCHEDULERS}
    ok = all(r <= 25 for r in ratios.values())
    cores = physical_cores()
    record("7a", ok, f"fib(34) T1/Ts = " + ", ".join(f"{s} {r:.1f}" for s, r in ratios.items())
           + f" (limit 25, Ts={ts:.2f}s)")
    assert ok


def test_speedup_on_four_cores(sweep):
    cores = physical_cores()
    if cores < 4:
        record("7b", True, f"speedup check needs >= 4 physical cores, found {cores}", skipped=True)
        pytest.skip(f"needs >= 4 physical cores, found {cores}")
    results = {}
    for name, n in (("fib", 34), ("nqueens", 12)):
        inst = harness.make_instance(name, {"n": n})
        samples = []
        for _ in range(3):
            t = time.perf_counter()
            inst.serial()
            samples.append(time.perf_counter() - t)
        ts = statistics.median(samples)
        for sched in SCHEDULERS:
            results[(name, sched)] = ts / sweep["cells"][(name, sched, 4)]["time"]
    ok = all(s >= 2.4 for s in results.values())
    record("7b", ok, "speedup at P=4: " + ", ".join(f"{k[0]}/{k[1]} {v:.2f}" for k, v in results.items())
           + " (need >= 2.4)")
    assert ok


# --------------------------------------------------------------- criterion 8


def _wait(predicate, timeout):
    end = time.monotonic() + timeout
    while not predicate():
        if time.monotonic() > end:
            return False
        time.sleep(1e-4)
    return True


def test_lazy_pool_quiescence_liveness_greed():
    with Pool(4, "lazy") as pool:
        asleep = _wait(lambda: pool.sleeping() == 4, 10)
        time.sleep(0.05)
        cpu0 = time.process_time()
        time.sleep(1.0)
        idle_cpu = time.process_time() - cpu0

    cycles = 10_000
    completed = 0
    with Pool(4, "lazy", debug=True) as pool:
        for i in range(cycles):
            if not _wait(lambda: pool.sleeping() == 4, 10):
                break
            if pool.sync_wait(pool.schedule(tasks.fib_task, 6), 10) != 8:
                break
            completed += 1
        for _ in range(20):
            pool.run(tasks.fib_task, 20)
            pool.run(tasks.nqueens_task, 7)
        greedy_breaks = pool.stat("sleeps_with_local_work")
        sleeps = pool.stat("sleeps")
    ok = asleep and idle_cpu < 0.010 and completed == cycles and greedy_breaks == 0
    record(8, ok, f"idle CPU over 1s = {idle_cpu * 1e3:.2f}ms (limit 10ms); {completed}/{cycles} submit-to-sleeping "
                  f"cycles; sleep-with-local-work events={greedy_breaks} over {sleeps} sleeps")
    assert asleep and idle_cpu < 0.010
    assert completed == cycles
    assert greedy_breaks == 0


# --------------------------------------------------------------- criterion 9


def test_victim_frequencies():
    # hand-evaluated probabilities per (topology, thief)
    cases = [
        ("flat:4 from 0", flat(4), 0, {1: 1 / 3, 2: 1 / 3, 3: 1 / 3}),
        ("two-level:2x2 from 0", two_level(2, 2), 0, {1: 0.8, 2: 0.1, 3: 0.1}),
        ("two-level:2x2 from 3", two_level(2, 2), 3, {2: 0.8, 0: 0.1, 1: 0.1}),
        # same node: r=1, n=3 -> 1/3 each; other node: r=2, n=4 -> 1/16 each; total 1.25
        ("two-level:2x4 from 0", two_level(2, 4), 0,
         {**{j: (1 / 3) / 1.25 for j in (1, 2, 3)}, **{j: (1 / 16) / 1.25 for j in (4, 5, 6, 7)}}),
    ]
    draws = 10**6
    worst = 0.0
    lines = []
    for label, topo, i, expected in cases:
        table = build_victim_table(topo, i)
        rng = random.Random(2024 + i)
        counts = dict.fromkeys(table.victims, 0)
        for _ in range(draws):
            counts[select_victim(table, rng)] += 1
        dev = max(abs(counts[j] / draws - p) for j, p in expected.items())
        table_dev = max(abs(table.probability(j) - p) for j, p in expected.items())
        worst = max(worst, dev)
        lines.append(f"{label}: max |freq-p|={dev:.4f}, table error={table_dev:.1e}")
        assert table_dev < 1e-12
    ok = worst < 0.01
    record(9, ok, "; ".join(lines))
    assert ok


# -------------------------------------------------------------- criterion 10


def test_power_law_recovery():
    Ps = (1, 2, 4, 8, 16, 32, 64)
    M1s = (1e5, 1e6, 1e7)
    clean_err = {}
    noisy_err = {}
    for n in (0.0, 0.5, 1.0, 1.5):
        clean = [(P, M, 1e6 + 0.2 * M * P**n) for P in Ps for M in M1s]
        clean_err[n] = abs(fit_power_law(clean).n - n)
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            noisy = [(P, M, (1e6 + 0.2 * M * P**n) * (1 + 0.05 * rng.standard_normal()))
                     for P in Ps for M in M1s for _ in range(3)]
            worst = max(worst, abs(fit_power_law(noisy).n - n))
        noisy_err[n] = worst
    ok = max(clean_err.values()) <= 0.05 and max(noisy_err.values()) <= 0.15
    record(10, ok, "noiseless |dn| " + ", ".join(f"n={k}:{v:.3f}" for k, v in clean_err.items())
           + "; 5% noise worst |dn| over 20 seeds " + ", ".join(f"n={k}:{v:.3f}" for k, v in noisy_err.items()))
    assert ok


# -------------------------------------------------------------- criterion 11


def test_explicit_scheduling():
    def hop(target):
        yield migrate_to(target)
        return current_worker()

    trail = []

    def ping(rounds):
        for i in range(rounds):
            yield migrate_to(i % 2)
            trail.append((i, current_worker()))
        return len(trail)

    identity = True
    with Pool(4, "lazy") as pool:
        for start in range(4):
            for w in range(4):
                identity &= pool.sync_wait(pool.schedule_on(start, hop, w), 10) == w
    with Pool(2, "lazy") as pool:
        pool.sync_wait(pool.schedule_on(1, ping, 1000), 60)
    in_order = trail == [(i, i % 2) for i in range(1000)]
    ok = identity and in_order
    record(11, ok, f"identity after migrate_to for all 4x4 (start, target) pairs={identity}; "
                   f"1000 ping-pong migrations in order={in_order}")
    assert ok
