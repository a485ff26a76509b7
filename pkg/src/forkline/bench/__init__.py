"""Benchmark family with serial oracles and a CSV-emitting harness."""

from .harness import BenchResult, BenchRow, BenchSpec, OracleMismatch, read_csv, run_bench, write_csv

__all__ = ["BenchResult", "BenchRow", "BenchSpec", "OracleMismatch", "read_csv", "run_bench", "write_csv"]
