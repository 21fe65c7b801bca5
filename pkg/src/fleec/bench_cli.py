"""fleec-bench: drive one benchmark configuration and append the results.

Example:
    fleec-bench --alpha 0.99 --threads 4 --read-ratio 0.99 --ops 1000000 \\
        --keyspace 100000 --value-size 100 --memory-mb 64 \\
        --system fleec --csv out/run.csv --seed 7
"""

from __future__ import annotations

import argparse
import sys

from .bench import WorkloadSpec, make_target, prewarm, run_workload
from .report import emit_csv, render_figures


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fleec-bench",
        description="benchmark the fleec cache against its locked baseline",
    )
    p.add_argument("--alpha", type=float, default=0.99, help="zipf skew parameter")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--read-ratio", type=float, default=0.99,
                   help="fraction of operations that are reads, in [0, 1]")
    p.add_argument("--ops", type=int, default=1_000_000,
                   help="total operations across all threads")
    p.add_argument("--keyspace", type=int, default=100_000)
    p.add_argument("--value-size", type=int, default=100, help="value bytes per item")
    p.add_argument("--memory-mb", type=int, default=64)
    p.add_argument("--system", choices=["fleec", "baseline"], default="fleec")
    p.add_argument("--csv", default=None, metavar="PATH",
                   help="write results (and figures beside it) to PATH")
    p.add_argument("--append", action="store_true",
                   help="append to an existing CSV instead of truncating")
    p.add_argument("--no-figures", action="store_true",
                   help="skip chart rendering even when --csv is given")
    p.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not 0.0 <= args.read_ratio <= 1.0:
        print("--read-ratio must be within [0, 1]", file=sys.stderr)
        return 2
    if args.threads < 1 or args.ops < 1 or args.keyspace < 1:
        print("--threads, --ops and --keyspace must be positive", file=sys.stderr)
        return 2

    spec = WorkloadSpec(
        alpha=args.alpha,
        keyspace=args.keyspace,
        read_ratio=args.read_ratio,
        value_size=args.value_size,
        threads=args.threads,
        ops=args.ops,
        seed=args.seed,
    )
    memory_bytes = args.memory_mb * 1024 * 1024
    target = make_target(args.system, spec, memory_bytes)
    warmed = prewarm(target, spec, memory_bytes)
    print(f"prewarmed {warmed} keys; running {args.ops} ops "
          f"on {args.threads} thread(s) against {args.system}...")
    metrics = run_workload(spec, target, system=args.system)

    print(f"system={metrics.system} alpha={metrics.alpha:g} threads={metrics.threads}")
    print(f"throughput: {metrics.throughput:,.0f} ops/s over {metrics.elapsed_s:.2f}s")
    print(f"latency ns: p50={metrics.p50_ns} p95={metrics.p95_ns} p99={metrics.p99_ns}")
    print(f"hit_ratio={metrics.hit_ratio:.4f} evictions={metrics.evictions} "
          f"expansions={metrics.expansions} epoch_advances={metrics.epoch_advances} "
          f"oom_failures={metrics.oom_failures}")

    if args.csv:
        emit_csv(args.csv, [metrics], append=args.append)
        print(f"wrote {args.csv}")
        if not args.no_figures:
            for path in render_figures(args.csv):
                print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
