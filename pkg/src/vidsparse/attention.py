"""Dense masked attention: the exact reference every sparse path is checked against.

Numerical policy: heads store float32; all score and softmax arithmetic is
carried out in float64. Large score matrices are never materialized whole --
the dense path walks the query rows in chunks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "AttentionHead",
    "AdditiveMask",
    "softmax_row",
    "attention_scores",
    "dense_attention",
    "cross_attention",
]

_DEFAULT_CHUNK_ROWS = 128


def _as_readonly_f32(a, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(a, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AttentionHead:
    """One attention head: query, key and value matrices of shape (n, d)."""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", _as_readonly_f32(self.q, "q"))
        object.__setattr__(self, "k", _as_readonly_f32(self.k, "k"))
        object.__setattr__(self, "v", _as_readonly_f32(self.v, "v"))
        if not (self.q.shape == self.k.shape == self.v.shape):
            raise ValueError(
                f"q/k/v shapes differ: {self.q.shape}, {self.k.shape}, {self.v.shape}"
            )
        if self.d < 1:
            raise ValueError("head dimension must be positive")

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def d(self) -> int:
        return self.q.shape[1]


class AdditiveMask:
    """Additive attention mask whose entries are 0 (keep) or -inf (drop).

    Small masks are held as a dense boolean keep matrix. Large masks are
    implicit: a row-block generator produces keep slabs on demand so the
    n x n matrix never exists in memory.
    """

    __slots__ = ("n", "all_keep", "_keep", "_keep_fn")

    def __init__(self, n, *, keep=None, keep_fn=None, all_keep=False):
        self.n = int(n)
        self.all_keep = bool(all_keep)
        self._keep = keep
        self._keep_fn = keep_fn

    @classmethod
    def zeros(cls, n: int) -> "AdditiveMask":
        """The all-zero mask: every (query, key) pair kept."""
        return cls(n, all_keep=True)

    @classmethod
    def from_keep(cls, keep, *, allow_empty_rows: bool = False) -> "AdditiveMask":
        keep = np.asarray(keep, dtype=bool)
        if keep.ndim != 2 or keep.shape[0] != keep.shape[1]:
            raise ValueError(f"keep matrix must be square, got {keep.shape}")
        if not allow_empty_rows and not keep.any(axis=1).all():
            raise ValueError("empty attention row")
        return cls(keep.shape[0], keep=keep)

    @classmethod
    def from_additive(cls, entries) -> "AdditiveMask":
        entries = np.asarray(entries, dtype=np.float64)
        bad = ~((entries == 0.0) | np.isneginf(entries))
        if bad.any():
            raise ValueError("additive mask entries must be 0 or -inf")
        return cls.from_keep(entries == 0.0)

    @classmethod
    def from_row_fn(cls, n: int, keep_fn) -> "AdditiveMask":
        """Implicit mask. ``keep_fn(start, stop)`` returns the boolean keep
        slab for query rows [start, stop)."""
        return cls(n, keep_fn=keep_fn)

    def keep_block(self, start: int, stop: int) -> np.ndarray:
        if self.all_keep:
            return np.ones((stop - start, self.n), dtype=bool)
        if self._keep is not None:
            return self._keep[start:stop]
        return np.asarray(self._keep_fn(start, stop), dtype=bool)

    def additive_block(self, start: int, stop: int) -> np.ndarray:
        out = np.zeros((stop - start, self.n), dtype=np.float64)
        out[~self.keep_block(start, stop)] = -np.inf
        return out

    def dense_additive(self) -> np.ndarray:
        return self.additive_block(0, self.n)


def softmax_row(scores) -> np.ndarray:
    """Probability vector of one score row, computed with max subtraction.

    -inf entries map to exactly 0. A row with no finite entry raises.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1:
        raise ValueError("softmax_row expects a 1-D score vector")
    return _softmax_rows(s[None, :].copy())[0]


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    """In-place row softmax of a float64 matrix that may contain -inf."""
    m = s.max(axis=1)
    if not np.all(np.isfinite(m)):
        raise ValueError("empty attention row")
    s -= m[:, None]
    np.exp(s, out=s)
    s /= s.sum(axis=1, keepdims=True)
    return s


def attention_scores(head: AttentionHead) -> np.ndarray:
    """Full (n, n) score matrix q k^T / sqrt(d) in float64.

    Materializes n^2 doubles; meant for analysis at small n. The dense and
    sparse execution paths compute scores chunk-wise instead.
    """
    q = head.q.astype(np.float64)
    k = head.k.astype(np.float64)
    return (q @ k.T) / np.sqrt(head.d)


def dense_attention(
    head: AttentionHead, mask: AdditiveMask, *, chunk_rows: int = _DEFAULT_CHUNK_ROWS
) -> np.ndarray:
    """Exact masked attention: softmax(q k^T / sqrt(d) + mask) v.

    Two-pass softmax per query row over the kept keys; raises
    "empty attention row" if the mask drops an entire row.
    """
    if mask.n != head.n:
        raise ValueError(f"mask size {mask.n} does not match head length {head.n}")
    q = head.q.astype(np.float64)
    k = head.k.astype(np.float64)
    v = head.v.astype(np.float64)
    scale = 1.0 / np.sqrt(head.d)
    out = np.empty((head.n, head.d), dtype=np.float64)
    for start in range(0, head.n, chunk_rows):
        stop = min(head.n, start + chunk_rows)
        s = q[start:stop] @ k.T
        s *= scale
        if not mask.all_keep:
            s[~mask.keep_block(start, stop)] = -np.inf
        out[start:stop] = _softmax_rows(s) @ v
    return out


def cross_attention(
    q, k, v, *, chunk_rows: int = _DEFAULT_CHUNK_ROWS
) -> np.ndarray:
    """Unmasked attention of nq query rows against a separate key/value set.

    The reduced-key execution path and the gather-equivalence checks both
    rest on this rectangular primitive.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if k.shape[0] == 0:
        raise ValueError("empty attention row")
    d = q.shape[1]
    scale = 1.0 / np.sqrt(d)
    out = np.empty((q.shape[0], v.shape[1]), dtype=np.float64)
    for start in range(0, q.shape[0], chunk_rows):
        stop = min(q.shape[0], start + chunk_rows)
        s = q[start:stop] @ k.T
        s *= scale
        out[start:stop] = _softmax_rows(s) @ v
    return out
