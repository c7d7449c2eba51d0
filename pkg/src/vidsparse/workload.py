"""Attention-head inputs: planted synthetic generators and the Q/K/V dump file.

Planted heads give the classifier a checkable ground truth. Each generator
shapes the score landscape directly:

* temporal -- queries and keys share a codebook indexed by within-frame
  offset, built by box-smoothing unit Gaussian rows over ``locality_width``
  neighbors; scores are large iff two positions' offsets are close,
  regardless of frame.
* spatial  -- the same construction over a per-frame codebook; scores are
  large iff two positions' frames are close.
* textural -- roughly 2% of keys are replaced by a large-norm shared
  direction that every query is aligned with.

Generation uses the Philox (4x64, counter-based) bit generator keyed by the
recipe's seed, with a fixed draw order (codebook/direction, selection, base
keys, query noise, key noise), so the same recipe reproduces bitwise
identical heads on any platform.

Dump file layout (version 1, all little-endian):

    offset  size  field
    0       7     magic "RNFQKV1"
    7       2     version, u16 (= 1)
    9       20    t, h, w, d, num_heads, each u32
    29      1     dtype tag, u8 (1 = float32)
    30      ...   per head: Q then K then V, each n*d float32 row-major,
                  n = t*h*w

File size must equal 30 + num_heads * 3 * n * d * 4 exactly.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .attention import AttentionHead
from .patterns import Kind, LatentShape

__all__ = [
    "PlantedSpec",
    "generate_planted",
    "DumpError",
    "read_dump",
    "write_dump",
    "DUMP_MAGIC",
    "DUMP_VERSION",
]

DUMP_MAGIC = b"RNFQKV1"
DUMP_VERSION = 1
_DTYPE_F32 = 1
_HEADER = struct.Struct("<7sH5IB")


@dataclass(frozen=True)
class PlantedSpec:
    """Deterministic recipe for one synthetic head."""

    kind: Kind
    shape: LatentShape
    d: int
    locality_width: int | None = None
    noise_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("head dimension must be positive")
        if self.noise_scale < 0:
            raise ValueError("noise scale must be nonnegative")
        if self.locality_width is not None and self.locality_width < 1:
            raise ValueError("locality width must be >= 1")

    def resolved_locality(self) -> int:
        if self.locality_width is not None:
            return self.locality_width
        if self.kind is Kind.TEMPORAL:
            return max(1, self.shape.frame_len // 16)
        if self.kind is Kind.SPATIAL:
            return max(1, self.shape.t // 8)
        return 1  # unused by the textural generator

    @classmethod
    def from_dict(cls, data: dict) -> "PlantedSpec":
        """Build a recipe from a JSON-style mapping; unknown keys rejected.

        Expected keys: kind, t, h, w, d, and optionally locality_width,
        noise_scale, seed.
        """
        required = {"kind", "t", "h", "w", "d"}
        optional = {"locality_width", "noise_scale", "seed"}
        unknown = set(data) - required - optional
        if unknown:
            raise ValueError(f"unknown recipe keys: {', '.join(sorted(unknown))}")
        missing = required - set(data)
        if missing:
            raise ValueError(f"missing recipe keys: {', '.join(sorted(missing))}")
        return cls(
            kind=Kind(data["kind"]),
            shape=LatentShape(int(data["t"]), int(data["h"]), int(data["w"])),
            d=int(data["d"]),
            locality_width=(None if data.get("locality_width") is None
                            else int(data["locality_width"])),
            noise_scale=float(data.get("noise_scale", 0.0)),
            seed=int(data.get("seed", 0)),
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "t": self.shape.t,
            "h": self.shape.h,
            "w": self.shape.w,
            "d": self.d,
            "locality_width": self.locality_width,
            "noise_scale": self.noise_scale,
            "seed": self.seed,
        }


def _smooth_rows(g: np.ndarray, radius: int) -> np.ndarray:
    """Box-sum rows of g over a window of +/- radius, truncated at edges."""
    m = g.shape[0]
    cs = np.vstack([np.zeros((1, g.shape[1])), np.cumsum(g, axis=0)])
    idx = np.arange(m)
    lo = np.maximum(0, idx - radius)
    hi = np.minimum(m, idx + radius + 1)
    return cs[hi] - cs[lo]


def _unit_rows(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def generate_planted(spec: PlantedSpec) -> AttentionHead:
    rng = np.random.Generator(np.random.Philox(key=spec.seed))
    shape, d = spec.shape, spec.d
    n = shape.n
    # target in-pattern score; capped so softmax stays in a sane range
    s0 = min(0.6 * d, 24.0)
    gain = np.sqrt(s0 * np.sqrt(d))

    if spec.kind in (Kind.TEMPORAL, Kind.SPATIAL):
        width = spec.resolved_locality()
        rows = shape.frame_len if spec.kind is Kind.TEMPORAL else shape.t
        codebook = _unit_rows(_smooth_rows(rng.standard_normal((rows, d)), width))
        pos = shape.positions()
        coord = shape.spatial_of(pos) if spec.kind is Kind.TEMPORAL else shape.frame_of(pos)
        base = gain * codebook[coord]
        q = base + spec.noise_scale * rng.standard_normal((n, d))
        k = base + spec.noise_scale * rng.standard_normal((n, d))
    else:
        direction = rng.standard_normal(d)
        direction /= np.linalg.norm(direction)
        n_special = max(1, round(0.02 * n))
        special = rng.choice(n, size=n_special, replace=False)
        k = rng.standard_normal((n, d))
        k[special] = gain * direction
        q = np.broadcast_to(gain * direction, (n, d)).copy()
        q += spec.noise_scale * rng.standard_normal((n, d))
        k += spec.noise_scale * rng.standard_normal((n, d))

    v = rng.standard_normal((n, d))
    return AttentionHead(q, k, v)


class DumpError(ValueError):
    """Malformed or unreadable head dump file."""


def write_dump(heads, shape: LatentShape, path) -> None:
    """Write heads to a dump file (atomic: temp file + rename)."""
    heads = list(heads)
    if not heads:
        raise DumpError("refusing to write a dump with no heads")
    d = heads[0].d
    for i, head in enumerate(heads):
        if head.n != shape.n or head.d != d:
            raise DumpError(
                f"head {i} has shape ({head.n}, {head.d}), expected ({shape.n}, {d})"
            )
    parts = [_HEADER.pack(DUMP_MAGIC, DUMP_VERSION, shape.t, shape.h, shape.w,
                          d, len(heads), _DTYPE_F32)]
    for head in heads:
        for a in (head.q, head.k, head.v):
            parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    from .ioutil import atomic_write_bytes

    try:
        atomic_write_bytes(path, b"".join(parts))
    except OSError as e:
        raise DumpError(f"cannot write dump {os.fspath(path)}: {e}") from e


def read_dump(path) -> tuple[list[AttentionHead], LatentShape]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise DumpError(f"cannot read dump {os.fspath(path)}: {e}") from e
    if len(data) < _HEADER.size or data[:7] != DUMP_MAGIC:
        raise DumpError(f"{os.fspath(path)}: not a head dump")
    magic, version, t, h, w, d, num_heads, dtype = _HEADER.unpack_from(data)
    if version != DUMP_VERSION:
        raise DumpError(f"{os.fspath(path)}: unsupported dump version {version}")
    if dtype != _DTYPE_F32:
        raise DumpError(f"{os.fspath(path)}: unsupported dtype tag {dtype}")
    if min(t, h, w, d) < 1:
        raise DumpError(f"{os.fspath(path)}: corrupt dump")
    shape = LatentShape(t, h, w)
    n = shape.n
    expected = _HEADER.size + num_heads * 3 * n * d * 4
    if len(data) != expected:
        raise DumpError(f"{os.fspath(path)}: corrupt dump")
    flat = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    if not np.all(np.isfinite(flat)):
        raise DumpError(f"{os.fspath(path)}: non-finite tensor")
    tensors = flat.reshape(num_heads, 3, n, d)
    heads = [AttentionHead(tensors[i, 0], tensors[i, 1], tensors[i, 2])
             for i in range(num_heads)]
    return heads, shape
