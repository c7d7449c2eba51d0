"""Sparse attention execution with FLOP accounting and oracle comparison.

Band patterns run through a block-tiled kernel with an online (streaming)
softmax: per query block, the active key blocks are visited in chunks while
a running max, running normalizer and output accumulator are maintained.
Active blocks are found analytically from the band geometry; partially kept
boundary blocks apply the elementwise mask inside the chunk, so the output
matches the masked dense reference and never rounds the band to block
granularity.

Temporal patterns are executed in a spatial-major row order (all frames of
one grid cell adjacent) under which the periodic band becomes a single
contiguous band per query row; the output is written back in the original
order. This keeps block coverage tight around the kept set for both band
kinds.

Textural heads take the reduced-key path: kept key/value rows are physically
gathered and all queries attend densely to the reduced set.
"""

from __future__ import annotations

import math
import time
from contextlib import nullcontext
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .attention import AdditiveMask, AttentionHead, cross_attention, dense_attention
from .flops import attention_pair_flops
from .patterns import (
    BLOCK_SIZES,
    CheckerboardSet,
    Kind,
    LatentShape,
    PatternMask,
    checkerboard_indices,
)

__all__ = [
    "RunMetrics",
    "HeadAssignment",
    "SparsePlan",
    "SpeedupEstimate",
    "dense_step_count",
    "run_band_attention",
    "run_textural_attention",
    "run_head",
    "run_plan",
    "estimate_speedup",
    "aggregate_metrics",
    "rel_l2_error",
    "benchmark_head",
]

DEFAULT_BLOCK_SIZE = 64
DEFAULT_STREAM_BLOCKS = 16


@dataclass
class RunMetrics:
    """Cost and accuracy record of one attention execution."""

    flops_dense: int
    flops_sparse: int
    flops_sparse_block: int
    kept_fraction: float
    rel_l2_error: float | None = None
    wall_ns_dense: int = 0
    wall_ns_sparse: int = 0

    def __post_init__(self):
        if not (self.flops_sparse <= self.flops_sparse_block <= self.flops_dense):
            raise ValueError(
                "inconsistent FLOP counts: expected sparse <= block <= dense, got "
                f"{self.flops_sparse}, {self.flops_sparse_block}, {self.flops_dense}"
            )
        if self.rel_l2_error is not None and self.rel_l2_error < 0:
            raise ValueError("relative error must be nonnegative")


class SpeedupEstimate(NamedTuple):
    flop: float
    wall: float | None


def estimate_speedup(metrics: RunMetrics) -> SpeedupEstimate:
    """FLOP speedup at block granularity, and wall speedup when timed."""
    if metrics.flops_dense <= 0:
        raise ValueError("dense FLOP count must be positive")
    wall = None
    if metrics.wall_ns_dense > 0 and metrics.wall_ns_sparse > 0:
        wall = metrics.wall_ns_dense / metrics.wall_ns_sparse
    return SpeedupEstimate(metrics.flops_dense / metrics.flops_sparse_block, wall)


def aggregate_metrics(metrics) -> RunMetrics:
    """Sum FLOP and wall fields; error aggregates as the maximum."""
    ms = list(metrics)
    if not ms:
        raise ValueError("no metrics to aggregate")
    errs = [m.rel_l2_error for m in ms if m.rel_l2_error is not None]
    fd = sum(m.flops_dense for m in ms)
    fs = sum(m.flops_sparse for m in ms)
    return RunMetrics(
        flops_dense=fd,
        flops_sparse=fs,
        flops_sparse_block=sum(m.flops_sparse_block for m in ms),
        kept_fraction=fs / fd,
        rel_l2_error=max(errs) if errs else None,
        wall_ns_dense=sum(m.wall_ns_dense for m in ms),
        wall_ns_sparse=sum(m.wall_ns_sparse for m in ms),
    )


def rel_l2_error(out: np.ndarray, ref: np.ndarray) -> float:
    return float(np.linalg.norm(out - ref) / np.linalg.norm(ref))


def _band_layout(pattern: PatternMask):
    """Row order making the band contiguous: (perm or None, sorted coords)."""
    n = pattern.shape.n
    coords = np.asarray(pattern.coords(), dtype=np.int64)
    if pattern.kind is Kind.SPATIAL:
        return None, coords  # frame index is already nondecreasing
    perm = np.argsort(coords, kind="stable")  # spatial-major, frame order kept
    return perm, coords[perm]


def run_band_attention(
    head: AttentionHead,
    pattern: PatternMask,
    block_size: int = DEFAULT_BLOCK_SIZE,
    *,
    stream_blocks: int = DEFAULT_STREAM_BLOCKS,
) -> tuple[np.ndarray, RunMetrics]:
    """Block-sparse attention for a spatial or temporal band pattern."""
    if pattern.kind not in (Kind.SPATIAL, Kind.TEMPORAL):
        raise ValueError("band executor handles spatial/temporal patterns only")
    if block_size not in BLOCK_SIZES:
        raise ValueError(f"block size must be one of {BLOCK_SIZES}, got {block_size}")
    if head.n != pattern.shape.n:
        raise ValueError(f"head length {head.n} does not match pattern n={pattern.shape.n}")
    if stream_blocks < 1:
        raise ValueError("stream_blocks must be >= 1")

    n, d = head.n, head.d
    hw = pattern.half_width
    perm, coords = _band_layout(pattern)
    q = head.q.astype(np.float64)
    k = head.k.astype(np.float64)
    v = head.v.astype(np.float64)
    if perm is not None:
        q, k, v = q[perm], k[perm], v[perm]
    scale = 1.0 / np.sqrt(d)

    bs = block_size
    nb = -(-n // bs)
    bstart = np.arange(nb) * bs
    bstop = np.minimum(n, bstart + bs)
    col_lo = coords[bstart]
    col_hi = coords[bstop - 1]

    out = np.empty((n, d), dtype=np.float64)
    covered = 0
    chunk_cols = bs * stream_blocks
    for i in range(nb):
        r0, r1 = int(bstart[i]), int(bstop[i])
        cmin, cmax = int(coords[r0]), int(coords[r1 - 1])
        j_lo = int(np.searchsorted(col_hi, cmin - hw, side="left"))
        j_hi = int(np.searchsorted(col_lo, cmax + hw, side="right")) - 1
        c_begin, c_end = int(bstart[j_lo]), int(bstop[j_hi])
        covered += (r1 - r0) * (c_end - c_begin)

        qr = q[r0:r1]
        qc = coords[r0:r1]
        run_m = np.full(r1 - r0, -np.inf)
        run_l = np.zeros(r1 - r0)
        acc = np.zeros((r1 - r0, d))
        for cs in range(c_begin, c_end, chunk_cols):
            ce = min(c_end, cs + chunk_cols)
            s = qr @ k[cs:ce].T
            s *= scale
            if not (coords[cs] >= cmax - hw and coords[ce - 1] <= cmin + hw):
                s[np.abs(qc[:, None] - coords[None, cs:ce]) > hw] = -np.inf
            chunk_max = s.max(axis=1)
            new_m = np.maximum(run_m, chunk_max)
            safe_m = np.where(np.isfinite(new_m), new_m, 0.0)
            p = np.exp(s - safe_m[:, None])
            rescale = np.where(np.isfinite(run_m), np.exp(run_m - safe_m), 0.0)
            run_l = run_l * rescale + p.sum(axis=1)
            acc *= rescale[:, None]
            acc += p @ v[cs:ce]
            run_m = new_m
        if np.any(run_l == 0.0):
            raise ValueError("empty attention row")
        out[r0:r1] = acc / run_l[:, None]

    if perm is not None:
        unperm = np.empty_like(out)
        unperm[perm] = out
        out = unperm

    kept = pattern.kept_pair_count()
    metrics = RunMetrics(
        flops_dense=attention_pair_flops(n * n, d),
        flops_sparse=attention_pair_flops(kept, d),
        flops_sparse_block=attention_pair_flops(covered, d),
        kept_fraction=kept / (n * n),
    )
    return out, metrics


def run_textural_attention(
    head: AttentionHead, cb: CheckerboardSet
) -> tuple[np.ndarray, RunMetrics]:
    """Reduced-key attention: gather kept keys/values, attend densely."""
    if head.n != cb.shape.n:
        raise ValueError(f"head length {head.n} does not match latent shape n={cb.shape.n}")
    idx = cb.key_positions()
    out = cross_attention(head.q, head.k[idx], head.v[idx])
    n, d = head.n, head.d
    reduced = attention_pair_flops(n * idx.size, d)
    metrics = RunMetrics(
        flops_dense=attention_pair_flops(n * n, d),
        flops_sparse=reduced,
        flops_sparse_block=reduced,
        kept_fraction=idx.size / n,
    )
    return out, metrics


@dataclass(frozen=True)
class HeadAssignment:
    """Execution choice for one head: its class and pattern parameter."""

    kind: Kind
    bandwidth: float | None = None
    stride: int | None = None

    def pattern(self, shape: LatentShape) -> PatternMask:
        if self.kind is Kind.TEXTURAL:
            return PatternMask.textural(shape, self.stride)
        return PatternMask(self.kind, shape, bandwidth=self.bandwidth)


def dense_step_count(dense_prefix: float, total_steps: int) -> int:
    """Number of leading steps that bypass sparsity: ceil(prefix * total)."""
    if not 0.0 <= dense_prefix <= 1.0:
        raise ValueError("dense prefix fraction must be in [0, 1]")
    # guard against fp noise in prefix*total (e.g. 0.1*50 -> 5.000...01)
    return math.ceil(round(dense_prefix * total_steps, 9))


@dataclass(frozen=True)
class SparsePlan:
    """Per-head assignments plus the dense warm-up schedule."""

    shape: LatentShape
    assignments: tuple[HeadAssignment, ...]
    dense_prefix: float = 0.1
    block_size: int = DEFAULT_BLOCK_SIZE

    def __post_init__(self):
        dense_step_count(self.dense_prefix, 0)  # validates the fraction

    def dense_steps(self, total_steps: int) -> int:
        return dense_step_count(self.dense_prefix, total_steps)


def run_head(
    head: AttentionHead,
    shape: LatentShape,
    assignment: HeadAssignment,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> tuple[np.ndarray, RunMetrics]:
    """Execute one head per its assignment."""
    if assignment.kind is Kind.TEXTURAL:
        return run_textural_attention(head, checkerboard_indices(shape, assignment.stride))
    return run_band_attention(head, assignment.pattern(shape), block_size)


def run_plan(
    heads, plan: SparsePlan, step: int, total_steps: int
) -> tuple[list[np.ndarray], list[RunMetrics]]:
    """Execute all heads for one denoising step.

    Steps before ceil(dense_prefix * total_steps) bypass sparsity entirely
    and run the dense reference path.
    """
    heads = list(heads)
    if len(heads) != len(plan.assignments):
        raise ValueError(f"{len(heads)} heads but {len(plan.assignments)} assignments")
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} out of range for {total_steps} steps")
    outputs: list[np.ndarray] = []
    metrics: list[RunMetrics] = []
    dense = step < plan.dense_steps(total_steps)
    for head, assignment in zip(heads, plan.assignments):
        if dense:
            out = dense_attention(head, AdditiveMask.zeros(head.n))
            fd = attention_pair_flops(head.n * head.n, head.d)
            m = RunMetrics(fd, fd, fd, kept_fraction=1.0, rel_l2_error=0.0)
        else:
            out, m = run_head(head, plan.shape, assignment, plan.block_size)
        outputs.append(out)
        metrics.append(m)
    return outputs, metrics


def _median_wall_ns(fn, repeats: int, warmup: int) -> int:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    samples.sort()
    mid = len(samples) // 2
    if len(samples) % 2:
        return samples[mid]
    return (samples[mid - 1] + samples[mid]) // 2


def benchmark_head(
    head: AttentionHead,
    shape: LatentShape,
    assignment: HeadAssignment,
    block_size: int = DEFAULT_BLOCK_SIZE,
    *,
    repeats: int = 5,
    warmup: int = 1,
    threads: int | None = None,
) -> tuple[np.ndarray, RunMetrics]:
    """Time sparse vs dense execution of one head and fill all metric fields.

    Wall times are medians of ``repeats`` runs after ``warmup`` warm-up runs.
    ``threads`` caps the BLAS thread pool for the measurement (None keeps the
    ambient pool, i.e. the multi-threaded variant).
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if threads is None:
        ctx = nullcontext()
    else:
        from threadpoolctl import threadpool_limits

        ctx = threadpool_limits(limits=threads)
    with ctx:
        out, metrics = run_head(head, shape, assignment, block_size)
        wall_sparse = _median_wall_ns(
            lambda: run_head(head, shape, assignment, block_size), repeats, warmup
        )
        ref = dense_attention(head, AdditiveMask.zeros(head.n))
        wall_dense = _median_wall_ns(
            lambda: dense_attention(head, AdditiveMask.zeros(head.n)), repeats, warmup
        )
    metrics = replace(
        metrics,
        rel_l2_error=rel_l2_error(out, ref),
        wall_ns_dense=wall_dense,
        wall_ns_sparse=wall_sparse,
    )
    return out, metrics
