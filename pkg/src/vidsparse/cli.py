"""Command line interface: generate workloads, classify heads, run sparse vs
dense attention, and render score heatmaps.

Exit codes: 0 success, 1 runtime error, 2 usage error. Config precedence is
CLI flags over JSON config file over built-in defaults. The environment
variable VIDSPARSE_THREADS caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from dataclasses import dataclass, fields, replace

import numpy as np

from .attention import AdditiveMask, AttentionHead, dense_attention
from .classify import (
    classify_head,
    select_bandwidth,
    write_report_csv,
)
from .executor import (
    HeadAssignment,
    RunMetrics,
    aggregate_metrics,
    dense_step_count,
    rel_l2_error,
    run_head,
)
from .flops import attention_pair_flops
from .ioutil import atomic_write_text
from .patterns import Kind, LatentShape, PatternMask, write_pgm
from .workload import PlantedSpec, generate_planted, read_dump, write_dump

__all__ = ["RunConfig", "main", "cmd_gen", "cmd_classify", "cmd_run", "cmd_heatmap"]

HEATMAP_CAP = 2048
METRICS_CSV_COLUMNS = (
    "step",
    "head",
    "head_class",
    "bandwidth",
    "stride",
    "kept_fraction",
    "flops_dense",
    "flops_sparse",
    "flops_sparse_block",
    "rel_l2_error",
    "wall_ns_dense",
    "wall_ns_sparse",
)
SUMMARY_SCHEMA_VERSION = 1


@dataclass
class RunConfig:
    """Experiment knobs; every field can come from flags or a JSON config."""

    t: int = 4
    h: int = 8
    w: int = 8
    d: int = 64
    num_heads: int = 8
    alpha: float = 0.9
    bandwidth: float = 0.25
    stride: int = 2
    omega: int | None = None
    block_size: int = 64
    candidates: list[float] | None = None
    dense_prefix: float = 0.1
    steps: int = 10
    seed: int = 0
    noise: float = 0.1
    locality_width: int | None = None
    out_dir: str = "runout"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 < self.bandwidth <= 1.0:
            raise ValueError(f"bandwidth must be in (0, 1], got {self.bandwidth}")
        if not 0.0 <= self.dense_prefix <= 1.0:
            raise ValueError(f"dense prefix must be in [0, 1], got {self.dense_prefix}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.num_heads < 1:
            raise ValueError("num-heads must be >= 1")

    @property
    def shape(self) -> LatentShape:
        return LatentShape(self.t, self.h, self.w)

    @classmethod
    def resolve(cls, args: argparse.Namespace, parser: argparse.ArgumentParser) -> "RunConfig":
        """Defaults, overridden by --config JSON, overridden by explicit flags."""
        values = {f.name: f.default for f in fields(cls)}
        config_path = getattr(args, "config", None)
        if config_path:
            try:
                with open(config_path) as f:
                    loaded = json.load(f)
            except (OSError, json.JSONDecodeError) as e:
                parser.error(f"cannot load config {config_path}: {e}")
            unknown = set(loaded) - set(values)
            if unknown:
                parser.error(f"unknown config keys: {', '.join(sorted(unknown))}")
            values.update(loaded)
        if getattr(args, "shape", None) is not None:
            values["t"], values["h"], values["w"] = args.shape
        for name in values:
            flag = getattr(args, name, None)
            if flag is not None:
                values[name] = flag
        try:
            return cls(**values)
        except ValueError as e:
            parser.error(str(e))


def _parse_shape(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"shape must look like TxHxW, got {text!r}")
    try:
        t, h, w = (int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"shape must be integers TxHxW, got {text!r}")
    if min(t, h, w) < 1:
        raise argparse.ArgumentTypeError("shape components must be >= 1")
    return t, h, w


def _parse_candidates(text: str) -> list[float]:
    try:
        values = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"candidates must be comma-separated floats: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("candidate list is empty")
    return values


_GEN_KINDS = {
    "temporal": Kind.TEMPORAL,
    "spatial": Kind.SPATIAL,
    "textural": Kind.TEXTURAL,
}


def cmd_gen(args, parser) -> int:
    if args.shape is None:
        parser.error("--shape is required for gen")
    cfg = RunConfig.resolve(args, parser)
    if args.kind == "mixed":
        kinds = [list(_GEN_KINDS.values())[i % 3] for i in range(cfg.num_heads)]
    else:
        kinds = [_GEN_KINDS[args.kind]] * cfg.num_heads
    heads = []
    for i, kind in enumerate(kinds):
        spec = PlantedSpec(
            kind=kind,
            shape=cfg.shape,
            d=cfg.d,
            locality_width=cfg.locality_width,
            noise_scale=cfg.noise,
            seed=cfg.seed * 100003 + i,
        )
        heads.append(generate_planted(spec))
    write_dump(heads, cfg.shape, args.out)
    print(args.out)
    for i, kind in enumerate(kinds):
        print(f"head {i}: {kind.value}")
    return 0


def _classify_all(heads, shape, cfg: RunConfig):
    reports = []
    for head in heads:
        rep = classify_head(head, shape, alpha=cfg.alpha, bandwidth=cfg.bandwidth,
                            omega=cfg.omega)
        if cfg.candidates and rep.head_class in (Kind.SPATIAL, Kind.TEMPORAL):
            chosen = select_bandwidth(head, shape, rep.head_class, cfg.candidates,
                                      target=cfg.alpha, omega=cfg.omega)
            rep = replace(rep, chosen_bandwidth=chosen)
        reports.append(rep)
    return reports


def cmd_classify(args, parser) -> int:
    cfg = RunConfig.resolve(args, parser)
    heads, shape = read_dump(args.dump)
    reports = _classify_all(heads, shape, cfg)
    if args.out:
        write_report_csv(args.out, reports, cfg.bandwidth, cfg.stride)
        print(args.out)
    else:
        from .classify import report_csv

        sys.stdout.write(report_csv(reports, cfg.bandwidth, cfg.stride))
    counts = {k.value: 0 for k in Kind}
    for rep in reports:
        counts[rep.head_class.value] += 1
    print(f"classified {len(reports)} heads: " +
          ", ".join(f"{k}={v}" for k, v in counts.items()), file=sys.stderr)
    return 0


def _assignment_for(report, cfg: RunConfig) -> HeadAssignment:
    if report.head_class is Kind.TEXTURAL:
        return HeadAssignment(Kind.TEXTURAL, stride=cfg.stride)
    bandwidth = report.chosen_bandwidth if report.chosen_bandwidth is not None else cfg.bandwidth
    return HeadAssignment(report.head_class, bandwidth=bandwidth)


def cmd_run(args, parser) -> int:
    cfg = RunConfig.resolve(args, parser)
    heads, shape = read_dump(args.dump)
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)

    dense_ref: dict[int, np.ndarray] = {}
    dense_wall: dict[int, int] = {}

    def oracle(idx: int) -> tuple[np.ndarray, int]:
        if idx not in dense_ref:
            t0 = time.perf_counter_ns()
            dense_ref[idx] = dense_attention(heads[idx], AdditiveMask.zeros(shape.n))
            dense_wall[idx] = time.perf_counter_ns() - t0
        return dense_ref[idx], dense_wall[idx]

    rows = []
    all_metrics = []
    reports = []
    flops_classify = 0
    outputs_dir = os.path.join(out_dir, "outputs") if args.save_outputs else None
    if outputs_dir:
        os.makedirs(outputs_dir, exist_ok=True)
    dense_steps = cfg.steps if args.dense else dense_step_count(cfg.dense_prefix, cfg.steps)
    for step in range(cfg.steps):
        is_dense = step < dense_steps
        if not is_dense:
            # head patterns shift between steps, so classification is redone
            # every step; nothing is cached across the step boundary
            reports = _classify_all(heads, shape, cfg)
            assignments = [_assignment_for(rep, cfg) for rep in reports]
            flops_classify += sum(rep.flops_overhead for rep in reports)
        for idx, head in enumerate(heads):
            if is_dense:
                ref, wall = oracle(idx)
                out = ref
                fd = attention_pair_flops(head.n * head.n, head.d)
                metrics = RunMetrics(fd, fd, fd, kept_fraction=1.0, rel_l2_error=0.0,
                                     wall_ns_dense=wall, wall_ns_sparse=wall)
                assignment = None
            else:
                assignment = assignments[idx]
                t0 = time.perf_counter_ns()
                out, metrics = run_head(head, shape, assignment, cfg.block_size)
                wall_sparse = time.perf_counter_ns() - t0
                ref, wall = oracle(idx)
                metrics.rel_l2_error = rel_l2_error(out, ref)
                metrics.wall_ns_sparse = wall_sparse
                metrics.wall_ns_dense = wall
            rows.append(_metrics_row(step, idx, assignment, metrics))
            all_metrics.append(metrics)
            if outputs_dir:
                np.save(os.path.join(outputs_dir, f"step{step:03d}_head{idx:03d}.npy"), out)

    csv_path = os.path.join(out_dir, "metrics.csv")
    atomic_write_text(csv_path, _metrics_csv(rows))
    total = aggregate_metrics(all_metrics)
    errors = [m.rel_l2_error for m in all_metrics if m.rel_l2_error is not None]
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "shape": {"t": shape.t, "h": shape.h, "w": shape.w},
        "d": heads[0].d,
        "num_heads": len(heads),
        "steps": cfg.steps,
        "dense_prefix_steps": dense_steps,
        "config": {
            "alpha": cfg.alpha,
            "bandwidth": cfg.bandwidth,
            "stride": cfg.stride,
            "omega": cfg.omega,
            "block_size": cfg.block_size,
            "candidates": cfg.candidates,
            "dense_prefix": cfg.dense_prefix,
            "seed": cfg.seed,
            "dense": bool(args.dense),
        },
        "head_classes": {
            k.value: sum(1 for r in reports if r.head_class is k) for k in Kind
        },
        "totals": {
            "flops_dense": total.flops_dense,
            "flops_sparse": total.flops_sparse,
            "flops_sparse_block": total.flops_sparse_block,
            "flops_classify": flops_classify,
            "flop_speedup": total.flops_dense / total.flops_sparse,
            "flop_speedup_block": total.flops_dense / total.flops_sparse_block,
            "wall_speedup": total.wall_ns_dense / total.wall_ns_sparse,
            "mean_rel_l2_error": float(np.mean(errors)),
            "max_rel_l2_error": float(np.max(errors)),
        },
    }
    json_path = os.path.join(out_dir, "summary.json")
    atomic_write_text(json_path, json.dumps(summary, indent=2) + "\n")
    print(csv_path)
    print(json_path)
    print(f"flop speedup {summary['totals']['flop_speedup']:.3f}, "
          f"wall speedup {summary['totals']['wall_speedup']:.3f}, "
          f"max rel L2 error {summary['totals']['max_rel_l2_error']:.3g}",
          file=sys.stderr)
    return 0


def _metrics_row(step, head_id, assignment, metrics: RunMetrics):
    if assignment is None:
        head_class, bandwidth, stride = "dense", "", ""
    else:
        head_class = assignment.kind.value
        bandwidth = "" if assignment.bandwidth is None else f"{assignment.bandwidth:.10g}"
        stride = "" if assignment.stride is None else assignment.stride
    return [
        step,
        head_id,
        head_class,
        bandwidth,
        stride,
        f"{metrics.kept_fraction:.10g}",
        metrics.flops_dense,
        metrics.flops_sparse,
        metrics.flops_sparse_block,
        f"{metrics.rel_l2_error:.10g}" if metrics.rel_l2_error is not None else "",
        metrics.wall_ns_dense,
        metrics.wall_ns_sparse,
    ]


def _metrics_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_CSV_COLUMNS)
    writer.writerows(rows)
    return buf.getvalue()


def _pooled_softmax_map(head: AttentionHead, cap: int = HEATMAP_CAP) -> np.ndarray:
    """Row-softmax probability map, mean-pooled down to at most cap x cap."""
    n = head.n
    pool = -(-n // cap)
    npix = -(-n // pool)
    bounds = np.minimum(n, np.arange(npix + 1) * pool)
    q = head.q.astype(np.float64)
    k = head.k.astype(np.float64)
    scale = 1.0 / np.sqrt(head.d)
    counts = (bounds[1:] - bounds[:-1]).astype(np.float64)
    img = np.empty((npix, npix))
    group = max(1, 128 // pool)
    for a in range(0, npix, group):
        b = min(npix, a + group)
        r0, r1 = int(bounds[a]), int(bounds[b])
        s = q[r0:r1] @ k.T
        s *= scale
        s -= s.max(axis=1, keepdims=True)
        np.exp(s, out=s)
        s /= s.sum(axis=1, keepdims=True)
        colpooled = np.add.reduceat(s, bounds[:-1], axis=1) / counts[None, :]
        img[a:b] = np.add.reduceat(colpooled, bounds[a:b] - r0, axis=0) / counts[a:b, None]
    return img


def _pooled_keep_fraction(pattern: PatternMask, cap: int = HEATMAP_CAP) -> np.ndarray:
    n = pattern.shape.n
    pool = -(-n // cap)
    npix = -(-n // pool)
    bounds = np.minimum(n, np.arange(npix + 1) * pool)
    counts = (bounds[1:] - bounds[:-1]).astype(np.float64)
    img = np.empty((npix, npix))
    for a in range(npix):
        keep = pattern.keep_block(int(bounds[a]), int(bounds[a + 1])).astype(np.float64)
        colpooled = np.add.reduceat(keep, bounds[:-1], axis=1) / counts[None, :]
        img[a] = colpooled.mean(axis=0)
    return img


def mask_mass(head: AttentionHead, pattern: PatternMask, chunk_rows: int = 128) -> float:
    """Full-sequence softmax mass retained by a pattern, averaged over rows."""
    q = head.q.astype(np.float64)
    k = head.k.astype(np.float64)
    scale = 1.0 / np.sqrt(head.d)
    n = head.n
    total = 0.0
    for start in range(0, n, chunk_rows):
        stop = min(n, start + chunk_rows)
        s = q[start:stop] @ k.T
        s *= scale
        s -= s.max(axis=1, keepdims=True)
        e = np.exp(s)
        keep = pattern.keep_block(start, stop)
        total += float(((e * keep).sum(axis=1) / e.sum(axis=1)).sum())
    return total / n


def cmd_heatmap(args, parser) -> int:
    cfg = RunConfig.resolve(args, parser)
    heads, shape = read_dump(args.dump)
    if not 0 <= args.head < len(heads):
        raise ValueError(f"head id {args.head} out of range (dump has {len(heads)} heads)")
    head = heads[args.head]
    img = _pooled_softmax_map(head)
    pixels = np.clip(np.round(127.5 * img * head.n), 0, 255).astype(np.uint8)
    if args.overlay:
        kind = _GEN_KINDS[args.overlay]
        if kind is Kind.TEXTURAL:
            pattern = PatternMask.textural(shape, cfg.stride)
        else:
            pattern = PatternMask(kind, shape, bandwidth=cfg.bandwidth)
        frac = _pooled_keep_fraction(pattern)
        hard = frac >= 1.0
        boundary = (frac > 0.0) & (frac < 1.0)
        boundary[:, 1:] |= hard[:, 1:] != hard[:, :-1]
        boundary[1:, :] |= hard[1:, :] != hard[:-1, :]
        pixels[boundary] = 255
        print(f"mask-overlap mass: {mask_mass(head, pattern):.6f}", file=sys.stderr)
    write_pgm(args.out, pixels)
    print(args.out)
    return 0


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--shape", type=_parse_shape, help="latent shape TxHxW")
    p.add_argument("--d", type=int, help="head dimension")
    p.add_argument("--num-heads", dest="num_heads", type=int, help="number of heads")
    p.add_argument("--alpha", type=float, help="recall threshold")
    p.add_argument("--bandwidth", type=float, help="band width fraction in (0, 1]")
    p.add_argument("--tau", dest="stride", type=int, help="checkerboard stride")
    p.add_argument("--omega", type=int, help="global sampling interval (default: t)")
    p.add_argument("--block-size", dest="block_size", type=int, choices=(16, 32, 64, 128),
                   help="executor block size")
    p.add_argument("--candidates", type=_parse_candidates,
                   help="descending bandwidth candidates, e.g. 0.5,0.25,0.125")
    p.add_argument("--prefix", dest="dense_prefix", type=float,
                   help="fraction of initial steps run dense")
    p.add_argument("--steps", type=int, help="number of steps to execute")
    p.add_argument("--seed", type=int, help="generator seed")
    p.add_argument("--noise", type=float, help="generator noise scale")
    p.add_argument("--locality-width", dest="locality_width", type=int,
                   help="generator locality width")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vidsparse",
        description="Sparse attention engine for 3D video-latent sequences",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a planted head dump")
    p_gen.add_argument("--kind", required=True, choices=[*_GEN_KINDS, "mixed"])
    p_gen.add_argument("--out", default="heads.qkv", help="dump file to write")
    _add_config_flags(p_gen)
    p_gen.set_defaults(func=cmd_gen)

    p_cls = sub.add_parser("classify", help="classify heads in a dump")
    p_cls.add_argument("dump")
    p_cls.add_argument("--out", help="CSV report path (default: stdout)")
    _add_config_flags(p_cls)
    p_cls.set_defaults(func=cmd_classify)

    p_run = sub.add_parser("run", help="classify then execute sparse vs dense")
    p_run.add_argument("dump")
    p_run.add_argument("--out-dir", dest="out_dir", default=None,
                       help="directory for metrics/summary (default: runout)")
    p_run.add_argument("--dense", action="store_true", help="run every step dense")
    p_run.add_argument("--save-outputs", action="store_true",
                       help="also write attention outputs as .npy")
    _add_config_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_map = sub.add_parser("heatmap", help="render a head's score map to PGM")
    p_map.add_argument("dump")
    p_map.add_argument("--head", type=int, default=0)
    p_map.add_argument("--out", default="heatmap.pgm")
    p_map.add_argument("--overlay", choices=list(_GEN_KINDS),
                       help="overlay a pattern's boundary")
    _add_config_flags(p_map)
    p_map.set_defaults(func=cmd_heatmap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = os.environ.get("VIDSPARSE_THREADS")
    if threads:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=int(threads))
    try:
        return args.func(args, parser)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
