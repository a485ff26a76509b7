"""``bench`` command: run a benchmark sweep and write a CSV report."""

from __future__ import annotations

import argparse
import sys

from ..scheduler import BUSY, LAZY, max_threads
from . import harness


def _threads(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if part == "max":
            out.append(max_threads())
        elif part:
            out.append(int(part))
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("thread counts must be positive integers")
    # keep order, drop duplicates ("max" may equal an explicit count)
    return list(dict.fromkeys(out))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bench", description=__doc__)
    ap.add_argument("--name", required=True, choices=sorted(harness.DESK_DEFAULTS))
    ap.add_argument("--n", type=float, help="problem size (fib/matmul/nqueens n, integrate upper bound)")
    ap.add_argument("--threads", type=_threads, default=[1], help="comma list, may include 'max'")
    ap.add_argument("--sched", choices=[BUSY, LAZY, "both"], default=LAZY)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--topology", default="flat", help="flat, system or two-level:NxC")
    ap.add_argument("--format", choices=["csv"], default="csv")
    ap.add_argument("--out", help="output file (default stdout)")
    ap.add_argument("--min-time", type=float, default=0.1, help="seconds per timed repetition")
    g = ap.add_argument_group("integrate")
    g.add_argument("--lo", type=float)
    g.add_argument("--eps", type=float)
    g = ap.add_argument_group("uts")
    g.add_argument("--preset", choices=sorted(harness.UTS_PRESETS))
    g.add_argument("--shape", choices=["geometric", "binomial"])
    g.add_argument("--depth", type=int, help="geometric cutoff depth d")
    g.add_argument("--branch", type=float, help="geometric expected branching b")
    g.add_argument("--q", type=float, help="binomial child probability")
    g.add_argument("--m", type=int, help="binomial children on success")
    g.add_argument("--stack-alloc", action="store_true", help="keep child counts in stack memory")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _params(args: argparse.Namespace) -> dict:
    p: dict = {}
    if args.name == "integrate":
        if args.n is not None:
            p["hi"] = args.n
        if args.lo is not None:
            p["lo"] = args.lo
        if args.eps is not None:
            p["eps"] = args.eps
    elif args.name == "uts":
        if args.preset:
            p.update(harness.UTS_PRESETS[args.preset])
        for key, val in (("shape", args.shape), ("d", args.depth), ("b", args.branch), ("q", args.q), ("m", args.m)):
            if val is not None:
                p[key] = val
        p["r"] = args.seed
        p["stack"] = args.stack_alloc
    elif args.n is not None:
        if args.n != int(args.n):
            raise ValueError(f"--n must be an integer for {args.name}")
        p["n"] = int(args.n)
    return p


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.reps < 1:
        ap.error("--reps must be >= 1")
    try:
        params = _params(args)
        harness.make_instance(args.name, params, args.seed)
    except (ValueError, KeyError) as exc:
        ap.error(str(exc))
    scheds = [BUSY, LAZY] if args.sched == "both" else [args.sched]
    log = (lambda m: print(m, file=sys.stderr)) if args.verbose else None
    results = []
    try:
        for sched in scheds:
            spec = harness.BenchSpec(args.name, params, args.threads, sched, args.reps, args.seed,
                                     args.topology, args.min_time)
            results.append(harness.run_bench(spec, log))
    except harness.OracleMismatch as exc:
        print(f"bench: result does not match the serial oracle: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        ap.error(str(exc))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            harness.write_csv(results, fh)
    else:
        harness.write_csv(results, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
