"""Sparse attention patterns over a 3D video-latent grid.

Positions index the flattened latent sequence frame by frame: position p
lives in frame p // (h*w) at within-frame offset p % (h*w). Three pattern
families are supported:

* spatial  -- keep (q, k) iff their frames are within a band of half-width
  max(1, round(bandwidth * t)); a query always keeps its own frame.
* temporal -- keep (q, k) iff their within-frame offsets are within a band of
  half-width max(1, round(bandwidth * h*w)), in every frame pair alike.
* textural -- keep keys whose within-frame cell (i, j) satisfies
  i mod stride == j mod stride, for all queries.

Band masks are realized for the executor as a block activity map
(:class:`BlockMask`): a block is active iff it contains at least one kept
pair, and flagged full iff every pair inside is kept.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .attention import AdditiveMask

__all__ = [
    "Kind",
    "LatentShape",
    "PatternMask",
    "CheckerboardSet",
    "BlockMask",
    "spatial_mask_contains",
    "temporal_mask_contains",
    "checkerboard_indices",
    "build_block_mask",
    "kept_fraction",
    "render_mask_pgm",
    "write_pgm",
]

BLOCK_SIZES = (16, 32, 64, 128)


class Kind(str, enum.Enum):
    SPATIAL = "spatial"
    TEMPORAL = "temporal"
    TEXTURAL = "textural"

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.value


@dataclass(frozen=True)
class LatentShape:
    """Latent grid (t frames of h x w cells), flattened to length t*h*w."""

    t: int
    h: int
    w: int

    def __post_init__(self):
        for name in ("t", "h", "w"):
            if getattr(self, name) < 1:
                raise ValueError(f"latent shape {name} must be >= 1")

    @property
    def frame_len(self) -> int:
        return self.h * self.w

    @property
    def n(self) -> int:
        return self.t * self.h * self.w

    def frame_of(self, pos):
        return pos // self.frame_len

    def spatial_of(self, pos):
        return pos % self.frame_len

    def positions(self) -> np.ndarray:
        return np.arange(self.n)


def _half_width(bandwidth: float, extent: int) -> int:
    # round half up, floored at 1 so a band always spans its own coordinate
    return max(1, int(math.floor(bandwidth * extent + 0.5)))


def _check_bandwidth(bandwidth: float) -> float:
    b = float(bandwidth)
    if not 0.0 < b <= 1.0:
        raise ValueError(f"bandwidth must be in (0, 1], got {bandwidth}")
    return b


@dataclass(frozen=True)
class CheckerboardSet:
    """Kept within-frame key indices under the interleaved selection rule.

    Cell (i, j) is kept iff i mod stride == j mod stride; the same selection
    applies to every frame.
    """

    shape: LatentShape
    stride: int
    indices: np.ndarray  # sorted, strictly increasing, all < frame_len

    @property
    def kept_per_frame(self) -> int:
        return int(self.indices.size)

    @property
    def key_fraction(self) -> float:
        return self.indices.size / self.shape.frame_len

    def key_positions(self) -> np.ndarray:
        """Kept key positions across all frames, sorted."""
        frames = np.arange(self.shape.t)[:, None] * self.shape.frame_len
        return (frames + self.indices[None, :]).ravel()

    def spatial_keep(self) -> np.ndarray:
        """Boolean keep flag per within-frame offset."""
        keep = np.zeros(self.shape.frame_len, dtype=bool)
        keep[self.indices] = True
        return keep


def checkerboard_indices(shape: LatentShape, stride: int) -> CheckerboardSet:
    stride = int(stride)
    if stride < 1 or stride > min(shape.h, shape.w):
        raise ValueError(f"degenerate stride {stride} for {shape.h}x{shape.w} frames")
    i = np.arange(shape.h)[:, None]
    j = np.arange(shape.w)[None, :]
    keep = (i % stride) == (j % stride)
    indices = np.flatnonzero(keep.ravel())
    indices.setflags(write=False)
    return CheckerboardSet(shape=shape, stride=stride, indices=indices)


@dataclass(frozen=True)
class PatternMask:
    """One sparse pattern with its parameters; membership is a pure function
    of (query position, key position)."""

    kind: Kind
    shape: LatentShape
    bandwidth: float | None = None
    stride: int | None = None

    def __post_init__(self):
        if self.kind in (Kind.SPATIAL, Kind.TEMPORAL):
            if self.bandwidth is None or self.stride is not None:
                raise ValueError(f"{self.kind.value} pattern takes bandwidth only")
            _check_bandwidth(self.bandwidth)
        else:
            if self.stride is None or self.bandwidth is not None:
                raise ValueError("textural pattern takes stride only")
            checkerboard_indices(self.shape, self.stride)  # validates range

    @classmethod
    def spatial(cls, shape: LatentShape, bandwidth: float) -> "PatternMask":
        return cls(Kind.SPATIAL, shape, bandwidth=float(bandwidth))

    @classmethod
    def temporal(cls, shape: LatentShape, bandwidth: float) -> "PatternMask":
        return cls(Kind.TEMPORAL, shape, bandwidth=float(bandwidth))

    @classmethod
    def textural(cls, shape: LatentShape, stride: int) -> "PatternMask":
        return cls(Kind.TEXTURAL, shape, stride=int(stride))

    @property
    def coord_extent(self) -> int:
        """Extent of the banded coordinate (frames, or within-frame offsets)."""
        if self.kind is Kind.SPATIAL:
            return self.shape.t
        if self.kind is Kind.TEMPORAL:
            return self.shape.frame_len
        raise ValueError("textural pattern has no band coordinate")

    @property
    def half_width(self) -> int:
        return _half_width(self.bandwidth, self.coord_extent)

    def coords(self, positions=None):
        """Band coordinate of each position (frame index or spatial offset)."""
        if positions is None:
            positions = self.shape.positions()
        if self.kind is Kind.SPATIAL:
            return self.shape.frame_of(positions)
        if self.kind is Kind.TEMPORAL:
            return self.shape.spatial_of(positions)
        raise ValueError("textural pattern has no band coordinate")

    def checkerboard(self) -> CheckerboardSet:
        if self.kind is not Kind.TEXTURAL:
            raise ValueError("checkerboard is defined for textural patterns only")
        return checkerboard_indices(self.shape, self.stride)

    def contains(self, qpos: int, kpos: int) -> bool:
        n = self.shape.n
        if not (0 <= qpos < n and 0 <= kpos < n):
            raise ValueError("position out of range")
        if self.kind is Kind.TEXTURAL:
            s = self.shape.spatial_of(kpos)
            return bool((s // self.shape.w % self.stride) == (s % self.shape.w % self.stride))
        return bool(abs(int(self.coords(qpos)) - int(self.coords(kpos))) <= self.half_width)

    def keep_block(self, row_start: int, row_stop: int, col_start: int = 0,
                   col_stop: int | None = None) -> np.ndarray:
        """Boolean membership slab for query rows x key columns."""
        n = self.shape.n
        if col_stop is None:
            col_stop = n
        cols = np.arange(col_start, col_stop)
        if self.kind is Kind.TEXTURAL:
            keep_cols = self.checkerboard().spatial_keep()[self.shape.spatial_of(cols)]
            return np.broadcast_to(keep_cols, (row_stop - row_start, cols.size)).copy()
        cq = self.coords(np.arange(row_start, row_stop))
        ck = self.coords(cols)
        return np.abs(cq[:, None] - ck[None, :]) <= self.half_width

    def pairwise_keep(self, indices) -> np.ndarray:
        """Membership matrix restricted to an arbitrary position subset."""
        idx = np.asarray(indices)
        if self.kind is Kind.TEXTURAL:
            keep_cols = self.checkerboard().spatial_keep()[self.shape.spatial_of(idx)]
            return np.broadcast_to(keep_cols, (idx.size, idx.size)).copy()
        c = self.coords(idx)
        return np.abs(c[:, None] - c[None, :]) <= self.half_width

    def kept_pair_count(self) -> int:
        """Exact number of kept (query, key) pairs."""
        if self.kind is Kind.TEXTURAL:
            cb = self.checkerboard()
            return self.shape.n * cb.kept_per_frame * self.shape.t
        e = self.coord_extent
        hw = self.half_width
        band = _band_pair_count(e, hw)
        per_coord = self.shape.n // e  # positions sharing one band coordinate
        return band * per_coord * per_coord

    def additive_mask(self) -> AdditiveMask:
        """This pattern as an implicit additive mask over the full sequence."""
        return AdditiveMask.from_row_fn(self.shape.n, self.keep_block)


def _band_pair_count(extent: int, half_width: int) -> int:
    if half_width >= extent - 1:
        return extent * extent
    return extent * (2 * half_width + 1) - half_width * (half_width + 1)


def spatial_mask_contains(shape: LatentShape, bandwidth: float, qpos: int, kpos: int) -> bool:
    return PatternMask.spatial(shape, bandwidth).contains(qpos, kpos)


def temporal_mask_contains(shape: LatentShape, bandwidth: float, qpos: int, kpos: int) -> bool:
    return PatternMask.temporal(shape, bandwidth).contains(qpos, kpos)


def kept_fraction(pattern: PatternMask) -> float:
    """Kept (q, k) pairs over n^2 for band patterns; kept-key fraction for
    the textural pattern."""
    if pattern.kind is Kind.TEXTURAL:
        return pattern.checkerboard().key_fraction
    n = pattern.shape.n
    return pattern.kept_pair_count() / (n * n)


@dataclass(frozen=True, eq=False)
class BlockMask:
    """Block-tiled realization of a pattern: which (block_size x block_size)
    tiles contain kept pairs, and which are kept in full."""

    pattern: PatternMask
    block_size: int
    active: np.ndarray  # bool (nb, nb)
    full: np.ndarray    # bool (nb, nb); full implies active

    @property
    def nb(self) -> int:
        return self.active.shape[0]

    def block_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        starts = np.arange(self.nb) * self.block_size
        stops = np.minimum(self.pattern.shape.n, starts + self.block_size)
        return starts, stops

    def covered_pair_count(self) -> int:
        """Total element area of active blocks (edge blocks clipped)."""
        starts, stops = self.block_bounds()
        lens = (stops - starts).astype(np.int64)
        return int(lens @ (self.active @ lens))

    def element_mask(self) -> np.ndarray:
        """Reconstruct the element-level keep matrix (small shapes only)."""
        n = self.pattern.shape.n
        act = np.repeat(np.repeat(self.active, self.block_size, 0), self.block_size, 1)
        ful = np.repeat(np.repeat(self.full, self.block_size, 0), self.block_size, 1)
        act = act[:n, :n]
        ful = ful[:n, :n]
        member = self.pattern.keep_block(0, n)
        return ful | (act & member)


def _row_coord_intervals(pattern: PatternMask, r0: int, r1: int) -> list[tuple[int, int]]:
    """Closed intervals covering the band coordinates of rows [r0, r1)."""
    shape = pattern.shape
    if pattern.kind is Kind.SPATIAL:
        return [(r0 // shape.frame_len, (r1 - 1) // shape.frame_len)]
    fl = shape.frame_len
    if r1 - r0 >= fl:
        return [(0, fl - 1)]
    s0 = r0 % fl
    s1 = (r1 - 1) % fl
    if s0 <= s1:
        return [(s0, s1)]
    return [(s0, fl - 1), (0, s1)]


def build_block_mask(pattern: PatternMask, block_size: int) -> BlockMask:
    if block_size not in BLOCK_SIZES:
        raise ValueError(f"block size must be one of {BLOCK_SIZES}, got {block_size}")
    n = pattern.shape.n
    nb = -(-n // block_size)
    starts = np.arange(nb) * block_size
    stops = np.minimum(n, starts + block_size)
    widths = (stops - starts).astype(np.int64)

    if pattern.kind is Kind.TEXTURAL:
        colkeep = pattern.checkerboard().spatial_keep()[pattern.shape.spatial_of(np.arange(n))]
        counts = np.add.reduceat(colkeep.astype(np.int64), starts)
        active = np.tile(counts > 0, (nb, 1))
        full = np.tile(counts == widths, (nb, 1))
        return BlockMask(pattern, block_size, active, full)

    c = pattern.coords().astype(np.int64)
    hw = pattern.half_width
    active = np.empty((nb, nb), dtype=bool)
    full = np.empty((nb, nb), dtype=bool)
    for i in range(nb):
        intervals = _row_coord_intervals(pattern, int(starts[i]), int(stops[i]))
        any_keep = np.zeros(n, dtype=bool)
        for lo, hi in intervals:
            any_keep |= (c >= lo - hw) & (c <= hi + hw)
        cmin = min(lo for lo, _ in intervals)
        cmax = max(hi for _, hi in intervals)
        all_keep = (c >= cmax - hw) & (c <= cmin + hw)
        acount = np.add.reduceat(any_keep.astype(np.int64), starts)
        fcount = np.add.reduceat(all_keep.astype(np.int64), starts)
        active[i] = acount > 0
        full[i] = fcount == widths
    return BlockMask(pattern, block_size, active, full)


def write_pgm(path, image: np.ndarray) -> None:
    """Write a 2-D uint8 array as binary (P5) PGM."""
    img = np.ascontiguousarray(image, dtype=np.uint8)
    if img.ndim != 2:
        raise ValueError("PGM image must be 2-D")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    from .ioutil import atomic_write_bytes

    atomic_write_bytes(path, header + img.tobytes())


def render_mask_pgm(pattern: PatternMask, path, *, limit: int = 4096) -> None:
    """Render a pattern's element map to PGM: kept = 255, dropped = 0.

    Intended for small shapes; refuses sequences longer than ``limit``.
    """
    n = pattern.shape.n
    if n > limit:
        raise ValueError(f"sequence length {n} too large to render (limit {limit})")
    write_pgm(path, pattern.keep_block(0, n).astype(np.uint8) * 255)
