"""Floating-point operation model used by every reported speedup figure.

Each matmul stage of attention costs 2*m*n*k; the softmax over computed
scores costs 5 ops per score entry (subtract, exp, accumulate, divide, and
the running max comparison). A (query, key) pair therefore costs 4*d + 5:
two matmul stages of 2*d plus the softmax handling of its score.
"""

from __future__ import annotations

SOFTMAX_OPS_PER_SCORE = 5

__all__ = [
    "SOFTMAX_OPS_PER_SCORE",
    "matmul_flops",
    "score_flops",
    "attention_pair_flops",
    "dense_attention_flops",
]


def matmul_flops(m: int, k: int, n: int) -> int:
    """Multiply-add count of an (m x k) @ (k x n) product."""
    return 2 * m * k * n


def score_flops(nq: int, nk: int, d: int) -> int:
    """Cost of the score stage q k^T alone."""
    return matmul_flops(nq, d, nk)


def attention_pair_flops(pairs: int, d: int) -> int:
    """Full attention cost attributable to ``pairs`` computed score entries."""
    return pairs * (4 * d + SOFTMAX_OPS_PER_SCORE)


def dense_attention_flops(n: int, d: int) -> int:
    return attention_pair_flops(n * n, d)
