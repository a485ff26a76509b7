"""Shared task definitions and probes for the runtime tests."""

import ctypes
import platform
import sys
import threading
import time

from forkline import Slot, call, fork, join

_libc = None
if sys.platform.startswith("linux") and platform.machine() == "x86_64":
    try:
        _libc = ctypes.CDLL(None)
        _libc.getcontext.argtypes = [ctypes.c_void_p]
    except (OSError, AttributeError):
        _libc = None

# glibc x86_64: ucontext_t.uc_mcontext.gregs starts at byte 40, REG_RSP is index 15
_RSP_OFFSET = 40 + 15 * 8


def native_stack_pointer():
    """Current machine stack pointer, or None where we cannot read it."""
    if _libc is None:
        return None
    buf = ctypes.create_string_buffer(1024)
    if _libc.getcontext(buf) != 0:
        return None
    return int.from_bytes(buf.raw[_RSP_OFFSET:_RSP_OFFSET + 8], "little")


def python_depth():
    f = sys._getframe()
    depth = 0
    while f is not None:
        depth += 1
        f = f.f_back
    return depth


def fib(n):
    if n < 2:
        return n
    a, b = Slot(), Slot()
    yield fork(a, fib, n - 1)
    yield call(b, fib, n - 2)
    yield join
    return a.value + b.value


def wait_for(predicate, timeout=10.0):
    end = time.monotonic() + timeout
    while not predicate():
        if time.monotonic() > end:
            raise TimeoutError("rendezvous never happened")
        time.sleep(1e-4)


class Recorder:
    """Thread-safe trace hook collecting (event, worker) pairs."""

    def __init__(self):
        self.events = []
        self.lock = threading.Lock()

    def __call__(self, event, worker, frame):
        with self.lock:
            self.events.append((event, worker))

    def count(self, event):
        with self.lock:
            return sum(1 for e, _ in self.events if e == event)

    def workers(self, event):
        with self.lock:
            return [w for e, w in self.events if e == event]
