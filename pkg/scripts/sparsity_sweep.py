#!/usr/bin/env python3
"""Sweep band bandwidths and checkerboard strides on one latent shape and
report kept fraction, FLOP speedup, and (optionally) measured wall speedup.

Example:
    python scripts/sparsity_sweep.py --shape 12x30x45 --d 64 --bench --out sweep.csv
"""

import argparse
import csv
import sys

from vidsparse import (
    HeadAssignment,
    Kind,
    LatentShape,
    PatternMask,
    PlantedSpec,
    generate_planted,
    kept_fraction,
)
from vidsparse.executor import benchmark_head, run_head


def parse_shape(text):
    t, h, w = (int(p) for p in text.lower().split("x"))
    return LatentShape(t, h, w)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--shape", type=parse_shape, default=LatentShape(12, 30, 45))
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--bandwidths", default="0.5,0.25,0.18,0.13,0.125")
    ap.add_argument("--strides", default="2,3,4")
    ap.add_argument("--block-size", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--bench", action="store_true",
                    help="also measure wall-clock speedup (slow)")
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--out", default=None, help="CSV path (default: stdout)")
    args = ap.parse_args()

    shape = args.shape
    rows = []
    configs = []
    for b in (float(x) for x in args.bandwidths.split(",")):
        configs.append((Kind.SPATIAL, b, None))
        configs.append((Kind.TEMPORAL, b, None))
    for tau in (int(x) for x in args.strides.split(",")):
        configs.append((Kind.TEXTURAL, None, tau))

    for kind, bandwidth, stride in configs:
        if kind is Kind.TEXTURAL:
            pattern = PatternMask.textural(shape, stride)
            assignment = HeadAssignment(kind, stride=stride)
        else:
            pattern = PatternMask(kind, shape, bandwidth=bandwidth)
            assignment = HeadAssignment(kind, bandwidth=bandwidth)
        frac = kept_fraction(pattern)
        head = generate_planted(PlantedSpec(kind, shape, d=args.d, noise_scale=0.1,
                                            seed=args.seed))
        if args.bench:
            _, m = benchmark_head(head, shape, assignment, args.block_size,
                                  repeats=args.repeats, warmup=1)
            wall = m.wall_ns_dense / m.wall_ns_sparse
        else:
            _, m = run_head(head, shape, assignment, args.block_size)
            wall = ""
        rows.append({
            "kind": kind.value,
            "bandwidth": "" if bandwidth is None else bandwidth,
            "stride": "" if stride is None else stride,
            "kept_fraction": f"{frac:.6g}",
            "flop_speedup": f"{m.flops_dense / m.flops_sparse:.6g}",
            "flop_speedup_block": f"{m.flops_dense / m.flops_sparse_block:.6g}",
            "wall_speedup": wall if wall == "" else f"{wall:.4g}",
        })
        print(f"{kind.value:8s} b={bandwidth} tau={stride}: kept {frac:.4f}, "
              f"flop speedup {m.flops_dense / m.flops_sparse:.3f}"
              + (f", wall {wall:.3f}" if wall != "" else ""), file=sys.stderr)

    out = open(args.out, "w", newline="") if args.out else sys.stdout
    writer = csv.DictWriter(out, fieldnames=list(rows[0]))
    writer.writeheader()
    writer.writerows(rows)
    if args.out:
        out.close()
        print(args.out, file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
