"""Online attention-head classification from sampled attention recall.

A head is probed twice with cheap subsampled score matrices: once with the
first frame's tokens against the temporal band mask, once with tokens taken
at a fixed interval across the whole sequence against the spatial band mask.
Recall is the softmax probability mass a mask retains, averaged over the
sampled query rows. Classification order is fixed: temporal wins ties.

With the default interval (one sample every t positions) both probes use
frame_len tokens, so the score-stage overhead relative to the full n x n
score matrix is exactly 2 / t^2.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass

import numpy as np

from .attention import AdditiveMask, AttentionHead
from .flops import score_flops
from .ioutil import atomic_write_text
from .patterns import Kind, LatentShape, PatternMask

__all__ = [
    "SampleMode",
    "SampledPair",
    "RecallReport",
    "local_sample",
    "global_sample",
    "downsample_mask",
    "recall",
    "classify_from_recalls",
    "classify_head",
    "select_bandwidth",
    "classification_overhead_ratio",
    "report_csv",
    "write_report_csv",
    "REPORT_CSV_COLUMNS",
]


class SampleMode(str, enum.Enum):
    LOCAL = "local"
    GLOBAL = "global"


@dataclass(frozen=True, eq=False)
class SampledPair:
    """Subsampled query/key rows plus the original indices they came from."""

    q_sub: np.ndarray
    k_sub: np.ndarray
    mode: SampleMode
    indices: np.ndarray
    omega: int | None = None

    @property
    def m(self) -> int:
        return self.q_sub.shape[0]


def local_sample(head: AttentionHead, shape: LatentShape) -> SampledPair:
    """First frame's tokens: rows [0, frame_len)."""
    _check_head_shape(head, shape)
    idx = np.arange(shape.frame_len)
    return SampledPair(head.q[: shape.frame_len], head.k[: shape.frame_len],
                       SampleMode.LOCAL, idx)


def global_sample(head: AttentionHead, shape: LatentShape, omega: int) -> SampledPair:
    """Tokens at equal interval omega: rows 0, omega, 2*omega, ..."""
    _check_head_shape(head, shape)
    omega = int(omega)
    if not 1 <= omega <= shape.n:
        raise ValueError(f"sampling interval must be in [1, {shape.n}], got {omega}")
    idx = np.arange(0, shape.n, omega)
    return SampledPair(head.q[idx], head.k[idx], SampleMode.GLOBAL, idx, omega=omega)


def _check_head_shape(head: AttentionHead, shape: LatentShape) -> None:
    if head.n != shape.n:
        raise ValueError(f"head length {head.n} does not match latent shape n={shape.n}")


_MODE_FOR_KIND = {Kind.TEMPORAL: SampleMode.LOCAL, Kind.SPATIAL: SampleMode.GLOBAL}


def downsample_mask(pattern: PatternMask, sampled: SampledPair) -> AdditiveMask:
    """Pattern mask restricted to the sampled positions.

    Entry (a, b) keeps iff the pattern keeps the pair of original positions
    the samples came from. Temporal patterns pair with local sampling,
    spatial with global.
    """
    if _MODE_FOR_KIND.get(pattern.kind) is not sampled.mode:
        raise ValueError("sampling/pattern mismatch")
    return AdditiveMask.from_keep(pattern.pairwise_keep(sampled.indices))


def recall(sampled: SampledPair, mask: AdditiveMask, d: int) -> float:
    """Retained softmax mass of the unmasked sampled scores, averaged over rows.

    For each sampled query row the full softmax over all sampled keys is
    formed and the probability falling on kept keys is summed; masks that
    drop an entire row contribute 0 for that row. Numerator and denominator
    share one summation order, so an all-keep mask yields exactly 1.0 and
    recall is exactly monotone under mask inclusion.
    """
    if mask.n != sampled.m:
        raise ValueError(f"mask size {mask.n} does not match sample count {sampled.m}")
    s = (sampled.q_sub.astype(np.float64) @ sampled.k_sub.astype(np.float64).T)
    s /= np.sqrt(d)
    s -= s.max(axis=1, keepdims=True)
    e = np.exp(s)
    denom = e.sum(axis=1)
    numer = (e * mask.keep_block(0, mask.n)).sum(axis=1)
    return float(np.mean(numer / denom))


def classify_from_recalls(r_temporal: float, r_spatial: float, alpha: float) -> Kind:
    """Fixed-order thresholding: temporal first, then spatial, else textural."""
    if r_temporal >= alpha:
        return Kind.TEMPORAL
    if r_spatial >= alpha:
        return Kind.SPATIAL
    return Kind.TEXTURAL


@dataclass(frozen=True)
class RecallReport:
    """Outcome of classifying one head."""

    r_temporal: float
    r_spatial: float
    alpha: float
    head_class: Kind
    flops_overhead: int
    overhead_ratio: float
    chosen_bandwidth: float | None = None


def classification_overhead_ratio(shape: LatentShape, omega: int | None = None) -> float:
    """Score-stage cost of both probes relative to the full n x n score matrix."""
    omega = shape.t if omega is None else int(omega)
    m_local = shape.frame_len
    m_global = -(-shape.n // omega)
    return (m_local * m_local + m_global * m_global) / (shape.n * shape.n)


def classify_head(
    head: AttentionHead,
    shape: LatentShape,
    alpha: float = 0.9,
    bandwidth: float = 0.25,
    omega: int | None = None,
) -> RecallReport:
    """Probe one head with both band masks and classify it.

    Deterministic: repeated calls on the same inputs agree bitwise.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"recall threshold must be in [0, 1], got {alpha}")
    omega = shape.t if omega is None else int(omega)

    local = local_sample(head, shape)
    r_t = recall(local, downsample_mask(PatternMask.temporal(shape, bandwidth), local), head.d)
    glob = global_sample(head, shape, omega)
    r_s = recall(glob, downsample_mask(PatternMask.spatial(shape, bandwidth), glob), head.d)

    overhead = score_flops(local.m, local.m, head.d) + score_flops(glob.m, glob.m, head.d)
    ratio = overhead / score_flops(shape.n, shape.n, head.d)
    return RecallReport(
        r_temporal=r_t,
        r_spatial=r_s,
        alpha=alpha,
        head_class=classify_from_recalls(r_t, r_s, alpha),
        flops_overhead=overhead,
        overhead_ratio=ratio,
    )


def select_bandwidth(
    head: AttentionHead,
    shape: LatentShape,
    kind: Kind,
    candidates,
    target: float,
    omega: int | None = None,
) -> float:
    """Smallest candidate bandwidth whose sampled recall meets ``target``.

    Candidates must be given sorted descending. Falls back to the largest
    candidate when none qualifies.
    """
    if kind not in (Kind.SPATIAL, Kind.TEMPORAL):
        raise ValueError("bandwidth selection applies to band patterns only")
    cands = [float(c) for c in candidates]
    if not cands:
        raise ValueError("candidate list is empty")
    if any(a <= b for a, b in zip(cands, cands[1:])):
        raise ValueError("candidates must be sorted descending")
    if not 0.0 < target <= 1.0:
        raise ValueError(f"recall target must be in (0, 1], got {target}")

    if kind is Kind.TEMPORAL:
        sampled = local_sample(head, shape)
    else:
        sampled = global_sample(head, shape, shape.t if omega is None else int(omega))
    for b in sorted(cands):
        pattern = PatternMask(kind, shape, bandwidth=b)
        if recall(sampled, downsample_mask(pattern, sampled), head.d) >= target:
            return b
    return cands[0]


REPORT_CSV_COLUMNS = (
    "head",
    "r_temporal",
    "r_spatial",
    "alpha",
    "head_class",
    "bandwidth",
    "stride",
    "overhead_ratio",
)


def report_csv(reports, bandwidth: float, stride: int) -> str:
    """CSV text for a list of per-head reports (schema v1).

    The bandwidth column carries the head's chosen bandwidth when adaptive
    selection ran, else the configured one; the stride column is filled for
    textural heads only.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_CSV_COLUMNS)
    for head_id, rep in enumerate(reports):
        band = "" if rep.head_class is Kind.TEXTURAL else (
            rep.chosen_bandwidth if rep.chosen_bandwidth is not None else bandwidth)
        writer.writerow([
            head_id,
            f"{rep.r_temporal:.10g}",
            f"{rep.r_spatial:.10g}",
            f"{rep.alpha:.10g}",
            rep.head_class.value,
            band if band == "" else f"{band:.10g}",
            stride if rep.head_class is Kind.TEXTURAL else "",
            f"{rep.overhead_ratio:.10g}",
        ])
    return buf.getvalue()


def write_report_csv(path, reports, bandwidth: float, stride: int) -> None:
    atomic_write_text(path, report_csv(reports, bandwidth, stride))
