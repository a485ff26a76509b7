"""Benchmark tasks and their serial projections.

Every parallel task here has a plain recursive twin with the fork/join
operations removed.  The twins are the correctness oracles and the
reference for serial time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..task import Cell, Slot, call, fork, frame_alloc, frame_dealloc, join

# ------------------------------------------------------------------ fib


def fib_task(n):
    if n < 2:
        return n
    a, b = Slot(), Slot()
    yield fork(a, fib_task, n - 1)
    yield call(b, fib_task, n - 2)
    yield join
    return a.value + b.value


def fib_serial(n):
    if n < 2:
        return n
    return fib_serial(n - 1) + fib_serial(n - 2)


def fib_iterative(n):
    a, b = 0, 1
    for _ in range(n):
        a, b = b, a + b
    return a


# ------------------------------------------------------------ integrate


def integrand(x):
    return x * x


def _integrate_task(lo, hi, flo, fhi, area, eps):
    mid = (lo + hi) / 2
    fmid = mid * mid
    left = (flo + fmid) * (mid - lo) / 2
    right = (fmid + fhi) * (hi - mid) / 2
    if abs(left + right - area) <= eps:
        return left + right
    a, b = Slot(), Slot()
    yield fork(a, _integrate_task, lo, mid, flo, fmid, left, eps)
    yield call(b, _integrate_task, mid, hi, fmid, fhi, right, eps)
    yield join
    return a.value + b.value


def integrate_task(lo, hi, eps):
    if not lo < hi:
        raise ValueError("need lo < hi")
    if not eps > 0:
        raise ValueError("eps must be positive")
    flo, fhi = lo * lo, hi * hi
    out = Slot()
    yield call(out, _integrate_task, lo, hi, flo, fhi, (flo + fhi) * (hi - lo) / 2, eps)
    return out.value


def _integrate_serial(lo, hi, flo, fhi, area, eps):
    mid = (lo + hi) / 2
    fmid = mid * mid
    left = (flo + fmid) * (mid - lo) / 2
    right = (fmid + fhi) * (hi - mid) / 2
    if abs(left + right - area) <= eps:
        return left + right
    return _integrate_serial(lo, mid, flo, fmid, left, eps) + _integrate_serial(mid, hi, fmid, fhi, right, eps)


def integrate_serial(lo, hi, eps):
    if not lo < hi:
        raise ValueError("need lo < hi")
    if not eps > 0:
        raise ValueError("eps must be positive")
    flo, fhi = lo * lo, hi * hi
    return _integrate_serial(lo, hi, flo, fhi, (flo + fhi) * (hi - lo) / 2, eps)


def integral_exact(lo, hi):
    return (hi**3 - lo**3) / 3


# --------------------------------------------------------------- matmul

BLOCK = 32


def block_product(c, a, b):
    """c = a @ b accumulated one k at a time, the triple-loop summation order."""
    c[...] = 0.0
    for k in range(a.shape[1]):
        c += a[:, k : k + 1] * b[k : k + 1, :]


def matmul_task(c, a, b):
    n = a.shape[0]
    if n <= BLOCK:
        block_product(c, a, b)
        return
    h = n // 2
    a11, a12, a21, a22 = a[:h, :h], a[:h, h:], a[h:, :h], a[h:, h:]
    b11, b12, b21, b22 = b[:h, :h], b[:h, h:], b[h:, :h], b[h:, h:]
    c11, c12, c21, c22 = c[:h, :h], c[:h, h:], c[h:, :h], c[h:, h:]
    yield fork(None, matmul_task, c11, a11, b11)
    yield fork(None, matmul_task, c12, a11, b12)
    yield fork(None, matmul_task, c21, a21, b11)
    yield call(None, matmul_task, c22, a21, b12)
    yield join
    t = np.empty_like(c)
    t11, t12, t21, t22 = t[:h, :h], t[:h, h:], t[h:, :h], t[h:, h:]
    yield fork(None, matmul_task, t11, a12, b21)
    yield fork(None, matmul_task, t12, a12, b22)
    yield fork(None, matmul_task, t21, a22, b21)
    yield call(None, matmul_task, t22, a22, b22)
    yield join
    c += t


def matmul_serial(c, a, b):
    n = a.shape[0]
    if n <= BLOCK:
        block_product(c, a, b)
        return
    h = n // 2
    matmul_serial(c[:h, :h], a[:h, :h], b[:h, :h])
    matmul_serial(c[:h, h:], a[:h, :h], b[:h, h:])
    matmul_serial(c[h:, :h], a[h:, :h], b[:h, :h])
    matmul_serial(c[h:, h:], a[h:, :h], b[:h, h:])
    t = np.empty_like(c)
    matmul_serial(t[:h, :h], a[:h, h:], b[h:, :h])
    matmul_serial(t[:h, h:], a[:h, h:], b[h:, h:])
    matmul_serial(t[h:, :h], a[h:, h:], b[h:, :h])
    matmul_serial(t[h:, h:], a[h:, h:], b[h:, h:])
    c += t


def triple_loop(a, b):
    """Reference product in pure Python; only sensible for small n."""
    n, m, p = len(a), len(b), len(b[0])
    out = [[0.0] * p for _ in range(n)]
    for i in range(n):
        row = out[i]
        for k in range(m):
            aik = a[i][k]
            bk = b[k]
            for j in range(p):
                row[j] += aik * bk[j]
    return out


def check_power_of_two(n):
    if n < 1 or n & (n - 1):
        raise ValueError(f"matrix size must be a power of two, got {n}")


# -------------------------------------------------------------- nqueens


def nqueens_task(n, cols=0, left=0, right=0):
    full = (1 << n) - 1
    if cols == full:
        return 1
    free = full & ~(cols | left | right)
    if not free:
        return 0
    k = bin(free).count("1")
    buf = yield frame_alloc(8 * k)
    counts = buf.cast("q")
    i = 0
    while free:
        bit = free & -free
        free ^= bit
        yield fork(Cell(counts, i), nqueens_task, n, cols | bit, ((left | bit) << 1) & full, (right | bit) >> 1)
        i += 1
    yield join
    total = sum(counts[:k])
    counts.release()
    yield frame_dealloc(buf)
    return total


def nqueens_serial(n, cols=0, left=0, right=0):
    full = (1 << n) - 1
    if cols == full:
        return 1
    free = full & ~(cols | left | right)
    total = 0
    while free:
        bit = free & -free
        free ^= bit
        total += nqueens_serial(n, cols | bit, ((left | bit) << 1) & full, (right | bit) >> 1)
    return total


def nqueens_backtrack(n):
    """Independent check: classic row-by-row backtracking over coordinates."""
    count = 0
    placed: list[int] = []

    def ok(col):
        row = len(placed)
        return all(c != col and abs(c - col) != row - r for r, c in enumerate(placed))

    def place():
        nonlocal count
        if len(placed) == n:
            count += 1
            return
        for col in range(n):
            if ok(col):
                placed.append(col)
                place()
                placed.pop()

    place()
    return count


def check_queens(n):
    if not 1 <= n <= 16:
        raise ValueError(f"n must be in [1, 16], got {n}")


# ------------------------------------------------------------------ uts

MASK64 = (1 << 64) - 1
GEOMETRIC = "geometric"
BINOMIAL = "binomial"
BINOMIAL_ROOT_CHILDREN = 2000


def mix64(z):
    """splitmix64 finalizer; a bijection on 64-bit integers."""
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class UtsParams:
    shape: str
    d: int = 0
    b: float = 0.0
    q: float = 0.0
    m: int = 0
    r: int = 0

    def __post_init__(self):
        if self.shape == GEOMETRIC:
            if self.d < 0 or self.b < 0:
                raise ValueError("geometric trees need d >= 0 and b >= 0")
        elif self.shape == BINOMIAL:
            if not 0 <= self.q <= 1 or self.m < 0:
                raise ValueError("binomial trees need 0 <= q <= 1 and m >= 0")
            if self.q * self.m >= 1:
                raise ValueError(f"q*m = {self.q * self.m} >= 1: the tree is infinite in expectation")
        else:
            raise ValueError(f"unknown shape {self.shape!r}")

    def describe(self) -> str:
        if self.shape == GEOMETRIC:
            return (f"shape=geometric;d={self.d};b={self.b};r={self.r};"
                    "children=floor(log(1-u)/log(1-p)) with p=1/(1+b) for depth<d")
        return (f"shape=binomial;q={self.q};m={self.m};r={self.r};"
                f"root={BINOMIAL_ROOT_CHILDREN};children=m if u<q else 0")


def uniform(state):
    return (state >> 11) * (1.0 / (1 << 53))


def root_state(params):
    return mix64(params.r & MASK64)


def child_state(state, i):
    return mix64(state ^ (i + 1))


def num_children(params, state, depth):
    if params.shape == GEOMETRIC:
        if depth >= params.d or params.b <= 0:
            return 0
        p = 1.0 / (1.0 + params.b)
        return int(math.floor(math.log(1.0 - uniform(state)) / math.log(1.0 - p)))
    if depth == 0:
        return BINOMIAL_ROOT_CHILDREN
    return params.m if uniform(state) < params.q else 0


def uts_task(params, state, depth):
    k = num_children(params, state, depth)
    if k == 0:
        return 1
    slots = [Slot() for _ in range(k)]
    for i in range(k - 1):
        yield fork(slots[i], uts_task, params, child_state(state, i), depth + 1)
    yield call(slots[k - 1], uts_task, params, child_state(state, k - 1), depth + 1)
    yield join
    return 1 + sum(s.value for s in slots)


def uts_stack_task(params, state, depth):
    """Same traversal, child counts kept in stack-allocated memory."""
    k = num_children(params, state, depth)
    if k == 0:
        return 1
    buf = yield frame_alloc(8 * k)
    counts = buf.cast("q")
    for i in range(k - 1):
        yield fork(Cell(counts, i), uts_stack_task, params, child_state(state, i), depth + 1)
    yield call(Cell(counts, k - 1), uts_stack_task, params, child_state(state, k - 1), depth + 1)
    yield join
    total = 1 + sum(counts[:k])
    counts.release()
    yield frame_dealloc(buf)
    return total


def uts_root(params, stack_alloc=False):
    fn = uts_stack_task if stack_alloc else uts_task
    out = Slot()
    yield call(out, fn, params, root_state(params), 0)
    return out.value


def uts_serial(params):
    """Node count by iterative depth-first traversal (trees can be deep)."""
    count = 0
    todo = [(root_state(params), 0)]
    while todo:
        state, depth = todo.pop()
        count += 1
        for i in range(num_children(params, state, depth)):
            todo.append((child_state(state, i), depth + 1))
    return count
