"""Benchmark definitions, timing sweeps and the CSV report format."""

from __future__ import annotations

import csv
import hashlib
import io
import statistics
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from ..metrics import fit_power_law, theorem2_bound
from ..scheduler import LAZY, Pool, parse_topology
from . import tasks

COLUMNS = (
    "benchmark", "params", "scheduler", "threads", "reps",
    "median_ns", "stddev_ns", "peak_frame_bytes", "result_hash",
)

#: Sizes that keep the serial program between roughly 0.1 and 10 seconds.
DESK_DEFAULTS: dict[str, dict[str, Any]] = {
    "fib": {"n": 34},
    "integrate": {"lo": 0.0, "hi": 1e4, "eps": 1e-9},
    "matmul": {"n": 1024},
    "nqueens": {"n": 12},
    "uts": {"shape": tasks.GEOMETRIC, "d": 10, "b": 4.0, "q": 0.0, "m": 0, "r": 42, "stack": False},
}

UTS_PRESETS: dict[str, dict[str, Any]] = {
    # Small trees for sweeps over many seeds.
    "geometric-small": {"shape": tasks.GEOMETRIC, "d": 7, "b": 4.0},
    "binomial-small": {"shape": tasks.BINOMIAL, "q": 0.2, "m": 4},
    # Serial traversal in the 0.1 to 10 second range.
    "geometric-desk": {"shape": tasks.GEOMETRIC, "d": 10, "b": 4.0},
    "binomial-desk": {"shape": tasks.BINOMIAL, "q": 0.24, "m": 4},
}


class OracleMismatch(AssertionError):
    pass


@dataclass
class Instance:
    """One concrete benchmark problem: its root task and how to check it."""

    name: str
    params: str
    root: Callable
    args: tuple
    serial: Callable[[], Any]
    value: Callable[[Any], Any] = lambda r: r
    same: Callable[[Any, Any], bool] = lambda x, y: x == y

    def run(self, pool: Pool) -> Any:
        return self.value(pool.run(self.root, *self.args))


def result_hash(value: Any) -> str:
    if isinstance(value, np.ndarray):
        data = np.ascontiguousarray(value).tobytes()
    else:
        data = repr(value).encode()
    return hashlib.sha256(data).hexdigest()[:16]


def _fmt(params: dict[str, Any]) -> str:
    return ";".join(f"{k}={v}" for k, v in params.items())


def make_instance(name: str, params: dict[str, Any] | None = None, seed: int = 42) -> Instance:
    p = dict(DESK_DEFAULTS[name]) if name in DESK_DEFAULTS else None
    if p is None:
        raise ValueError(f"unknown benchmark {name!r}; choose from {sorted(DESK_DEFAULTS)}")
    p.update(params or {})
    if name == "fib":
        n = int(p["n"])
        if not 0 <= n <= 50:
            raise ValueError("fib needs 0 <= n <= 50")
        return Instance(name, f"n={n}", tasks.fib_task, (n,), lambda: tasks.fib_serial(n))
    if name == "integrate":
        lo, hi, eps = float(p["lo"]), float(p["hi"]), float(p["eps"])
        if not lo < hi or not eps > 0:
            raise ValueError("integrate needs lo < hi and eps > 0")
        return Instance(name, _fmt({"lo": lo, "hi": hi, "eps": eps, "f": "x^2"}), tasks.integrate_task,
                        (lo, hi, eps), lambda: tasks.integrate_serial(lo, hi, eps))
    if name == "matmul":
        n = int(p["n"])
        tasks.check_power_of_two(n)
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((n, n))
        b = rng.standard_normal((n, n))
        c = np.zeros((n, n))
        tol = 1e-8 * n

        def serial():
            out = np.zeros((n, n))
            tasks.matmul_serial(out, a, b)
            return out

        def same(x, ref):
            return x.shape == ref.shape and float(np.max(np.abs(x - ref))) <= tol

        return Instance(name, _fmt({"n": n, "block": tasks.BLOCK, "seed": seed}), tasks.matmul_task, (c, a, b),
                        serial, value=lambda _: c.copy(), same=same)
    if name == "nqueens":
        n = int(p["n"])
        tasks.check_queens(n)
        return Instance(name, f"n={n}", tasks.nqueens_task, (n,), lambda: tasks.nqueens_serial(n))
    if name == "uts":
        prm = tasks.UtsParams(
            shape=p["shape"], d=int(p.get("d", 0)), b=float(p.get("b", 0.0)),
            q=float(p.get("q", 0.0)), m=int(p.get("m", 0)), r=int(p.get("r", seed)),
        )
        stack = bool(p.get("stack", False))
        label = prm.describe() + (";alloc=stack" if stack else "")
        return Instance(name + ("*" if stack else ""), label, tasks.uts_root, (prm, stack),
                        lambda: tasks.uts_serial(prm))
    raise AssertionError(name)


@dataclass
class BenchSpec:
    name: str
    params: dict[str, Any] = field(default_factory=dict)
    threads: Sequence[int] = (1,)
    scheduler: str = LAZY
    reps: int = 5
    seed: int = 42
    topology: str = "flat"
    min_time: float = 0.1

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not self.threads or any(t < 1 for t in self.threads):
            raise ValueError("thread counts must be >= 1")


@dataclass
class BenchRow:
    benchmark: str
    params: str
    scheduler: str
    threads: int
    reps: int
    median_ns: int
    stddev_ns: int
    peak_frame_bytes: int
    result_hash: str

    def as_list(self) -> list:
        return [getattr(self, c) for c in COLUMNS]


@dataclass
class BenchResult:
    spec: BenchSpec
    rows: list[BenchRow]
    serial_ns: int
    fit: Any = None
    warnings: list[str] = field(default_factory=list)

    def speedups(self) -> dict[int, float]:
        return {r.threads: self.serial_ns / r.median_ns for r in self.rows}

    def efficiencies(self) -> dict[int, float]:
        return {p: s / p for p, s in self.speedups().items()}


def _time_once(fn: Callable[[], Any], min_time: float) -> tuple[float, Any]:
    """Repeat ``fn`` until ``min_time`` has elapsed; seconds per call."""
    count = 0
    start = time.perf_counter()
    while True:
        out = fn()
        count += 1
        elapsed = time.perf_counter() - start
        if elapsed >= min_time:
            return elapsed / count, out


def _summary(samples: list[float]) -> tuple[int, int]:
    med = statistics.median(samples)
    sd = statistics.stdev(samples) if len(samples) > 1 else 0.0
    return round(med * 1e9), round(sd * 1e9)


def run_bench(spec: BenchSpec, log: Callable[[str], None] | None = None) -> BenchResult:
    inst = make_instance(spec.name, spec.params, spec.seed)
    oracle = inst.serial()
    serial_samples = [_time_once(inst.serial, spec.min_time)[0] for _ in range(spec.reps)]
    serial_ns = _summary(serial_samples)[0]
    rows = []
    for P in spec.threads:
        topo = parse_topology(spec.topology, P)
        with Pool(P, spec.scheduler, topo, seed=spec.seed) as pool:
            first = inst.run(pool)
            if not inst.same(first, oracle):
                raise OracleMismatch(f"{inst.name} at P={P} ({spec.scheduler}): {first!r} != oracle {oracle!r}")
            samples = []
            for _ in range(spec.reps):
                t, out = _time_once(lambda: inst.run(pool), spec.min_time)
                if not inst.same(out, oracle):
                    raise OracleMismatch(f"{inst.name} at P={P}: result changed between repetitions")
                samples.append(t)
            peak = pool.peak_frame_bytes
        digest = result_hash(first)
        med, sd = _summary(samples)
        rows.append(BenchRow(inst.name, inst.params, spec.scheduler, P, spec.reps, med, sd, peak, digest))
        if log:
            log(f"{inst.name} P={P} median={med / 1e9:.4f}s peak={peak}B")
    result = BenchResult(spec, rows, serial_ns)
    speed = [serial_ns / r.median_ns for r in sorted(rows, key=lambda r: r.threads)]
    if any(b < a for a, b in zip(speed, speed[1:])):
        result.warnings.append("speedup is not monotone in the worker count")
    by_p = {r.threads: r.peak_frame_bytes for r in rows}
    if 1 in by_p:
        m1 = by_p[1]
        for r in rows:
            if r.peak_frame_bytes > theorem2_bound(r.threads, m1):
                result.warnings.append(f"peak memory at P={r.threads} exceeds the P*M1 bound")
        if len(by_p) >= 3 and len(rows) >= 4:
            result.fit = fit_power_law([(r.threads, m1, r.peak_frame_bytes) for r in rows])
    return result


def write_csv(results: Sequence[BenchResult] | BenchResult, out: io.TextIOBase) -> None:
    if isinstance(results, BenchResult):
        results = [results]
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(COLUMNS)
    for res in results:
        for row in res.rows:
            writer.writerow(row.as_list())
        out.write(f"# serial benchmark={res.spec.name} median_ns={res.serial_ns}\n")
        if res.fit is not None:
            f = res.fit
            out.write(f"# fit a={f.a:.6g} b={f.b:.6g} n={f.n:.3f} stderr={f.n_stderr:.3g}\n")
        for w in res.warnings:
            out.write(f"# warning {w}\n")


def read_csv(text: str) -> tuple[list[BenchRow], list[str]]:
    """Rows and comment lines (without the leading ``#``) from a report."""
    comments = []
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            comments.append(line[1:].strip())
        elif line.strip():
            body.append(line)
    reader = csv.reader(body)
    header = next(reader, None)
    if header is None:
        return [], comments
    if tuple(header) != COLUMNS:
        raise ValueError(f"unexpected header {header}")
    ints = {"threads", "reps", "median_ns", "stddev_ns", "peak_frame_bytes"}
    rows = []
    for rec in reader:
        kw = {c: (int(v) if c in ints else v) for c, v in zip(COLUMNS, rec)}
        rows.append(BenchRow(**kw))
    return rows, comments
