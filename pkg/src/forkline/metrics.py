"""Speedup, memory bounds and the memory power-law fit."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .cactus import METADATA_BYTES


@dataclass(frozen=True)
class TimingRecord:
    Ts: float
    T1: float
    Tp: float
    P: int


@dataclass(frozen=True)
class MemRecord:
    P: int
    M1: int
    Mp: int
    c: int = METADATA_BYTES


@dataclass(frozen=True)
class PowerLawFit:
    """``memory ~ a + b * M1 * P**n``"""

    a: float
    b: float
    n: float
    sse: float
    n_stderr: float

    def predict(self, P: float, M1: float) -> float:
        return self.a + self.b * M1 * P**self.n


def _positive(**values: float) -> None:
    for name, v in values.items():
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v!r}")


def speedup(rec: TimingRecord) -> float:
    _positive(Ts=rec.Ts, Tp=rec.Tp)
    return rec.Ts / rec.Tp


def efficiency(rec: TimingRecord) -> float:
    _positive(P=rec.P)
    return speedup(rec) / rec.P


def overhead(rec: TimingRecord) -> float:
    """Single-worker slowdown against the serial program, ``T1 / Ts``."""
    _positive(Ts=rec.Ts, T1=rec.T1)
    return rec.T1 / rec.Ts


def theorem2_bound(P: int, M1: int, c: int = METADATA_BYTES) -> int:
    """Upper bound on peak frame memory with ``P`` workers."""
    _positive(P=P, M1=M1)
    if c < 0:
        raise ValueError("metadata size must be >= 0")
    return (2 * c + 3) * P * M1


def within_bound(rec: MemRecord) -> bool:
    return rec.Mp <= theorem2_bound(rec.P, rec.M1, rec.c)


def peak_frame_memory(pool) -> int:
    """High-water mark of stacklet bytes (metadata included) held by ``pool``."""
    return pool.heap.peak_bytes


GRID = np.round(np.arange(0, 2001) * 0.001, 3)


def _sse_profile(P: np.ndarray, M1: np.ndarray, y: np.ndarray):
    # One column per candidate exponent; solve the 2-parameter least squares in closed form.
    x = M1[:, None] * P[:, None] ** GRID[None, :]
    xm = x.mean(axis=0)
    ym = y.mean()
    dx = x - xm
    sxx = (dx * dx).sum(axis=0)
    sxy = (dx * (y - ym)[:, None]).sum(axis=0)
    flat = sxx <= 1e-12 * np.maximum((x * x).sum(axis=0), 1e-300)
    b = np.where(flat, 0.0, sxy / np.where(flat, 1.0, sxx))
    a = ym - b * xm
    resid = y[:, None] - a[None, :] - b[None, :] * x
    sse = (resid * resid).sum(axis=0)
    return a, b, sse


def fit_power_law(points: Iterable[Sequence[float]]) -> PowerLawFit:
    """Fit ``a + b*M1*P**n`` to ``(P, M1, memory)`` triples.

    ``n`` is searched on a 0.001 grid over [0, 2]; for each candidate the
    linear parameters come from ordinary least squares.  The reported error
    on ``n`` uses the curvature of the residual sum of squares at the optimum.
    """
    pts = [tuple(float(v) for v in p) for p in points]
    if len(pts) < 4:
        raise ValueError("need at least 4 points")
    if any(len(p) != 3 for p in pts):
        raise ValueError("points are (P, M1, memory) triples")
    P = np.array([p[0] for p in pts])
    M1 = np.array([p[1] for p in pts])
    y = np.array([p[2] for p in pts])
    if len(set(P.tolist())) < 3:
        raise ValueError("need at least 3 distinct worker counts")
    if (P <= 0).any() or (M1 <= 0).any():
        raise ValueError("P and M1 must be positive")
    a, b, sse = _sse_profile(P, M1, y)
    k = int(np.argmin(sse))
    best = float(sse[k])
    # Curvature from a centred (or one-sided at the edges) second difference.
    h = 0.001
    j = min(max(k, 1), len(GRID) - 2)
    curvature = (sse[j - 1] - 2 * sse[j] + sse[j + 1]) / (h * h)
    dof = max(len(pts) - 3, 1)
    if curvature > 0 and best > 0:
        stderr = math.sqrt(2 * (best / dof) / curvature)
    elif curvature > 0:
        stderr = 0.0
    else:
        stderr = math.inf
    return PowerLawFit(float(a[k]), float(b[k]), float(GRID[k]), max(best, 0.0), stderr)


__all__ = [
    "MemRecord", "PowerLawFit", "TimingRecord", "efficiency", "fit_power_law", "overhead",
    "peak_frame_memory", "speedup", "theorem2_bound", "within_bound",
]
