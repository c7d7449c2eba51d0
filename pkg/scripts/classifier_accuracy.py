#!/usr/bin/env python3
"""Classification accuracy of planted heads as the noise scale grows.

For each noise level, generates `--trials` heads of every kind and reports
the fraction the online classifier labels correctly.

Example:
    python scripts/classifier_accuracy.py --shape 12x16x16 --d 32 --trials 50
"""

import argparse
import csv
import sys

from vidsparse import Kind, LatentShape, PlantedSpec, classify_head, generate_planted


def parse_shape(text):
    t, h, w = (int(p) for p in text.lower().split("x"))
    return LatentShape(t, h, w)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--shape", type=parse_shape, default=LatentShape(12, 16, 16))
    ap.add_argument("--d", type=int, default=32)
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--noise", default="0,0.05,0.1,0.2,0.4,0.8,1.6")
    ap.add_argument("--alpha", type=float, default=0.9)
    ap.add_argument("--bandwidth", type=float, default=0.25)
    ap.add_argument("--out", default=None, help="CSV path (default: stdout)")
    args = ap.parse_args()

    rows = []
    for noise in (float(x) for x in args.noise.split(",")):
        row = {"noise_scale": noise}
        for kind in Kind:
            hits = 0
            for seed in range(args.trials):
                head = generate_planted(PlantedSpec(kind, args.shape, d=args.d,
                                                    noise_scale=noise, seed=seed))
                rep = classify_head(head, args.shape, alpha=args.alpha,
                                    bandwidth=args.bandwidth)
                hits += rep.head_class is kind
            row[kind.value] = hits / args.trials
        rows.append(row)
        print(f"noise {noise:g}: " +
              ", ".join(f"{k.value} {row[k.value]:.0%}" for k in Kind),
              file=sys.stderr)

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
