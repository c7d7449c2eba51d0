import numpy as np
import pytest

from vidsparse import AttentionHead, LatentShape


def reference_attention(q, k, v, keep=None):
    """Quadratic-time reference: per-row softmax in float64, no shortcuts.

    Deliberately independent of the library kernels (explicit row loop,
    explicit max subtraction, explicit normalization).
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    n, d = q.shape
    nk = k.shape[0]
    out = np.empty((n, v.shape[1]))
    for i in range(n):
        scores = np.array([q[i] @ k[j] for j in range(nk)]) / np.sqrt(d)
        if keep is not None:
            scores = np.where(keep[i], scores, -np.inf)
        m = scores.max()
        assert np.isfinite(m), "reference oracle hit an empty row"
        e = np.exp(scores - m)
        p = e / e.sum()
        out[i] = p @ v
    return out


def reference_recall(q_sub, k_sub, d, keep):
    """Per-row full softmax, explicit kept-mass sums; no shared code with
    the library's recall."""
    q = np.asarray(q_sub, dtype=np.float64)
    k = np.asarray(k_sub, dtype=np.float64)
    total = 0.0
    for i in range(q.shape[0]):
        scores = q[i] @ k.T / np.sqrt(d)
        e = np.exp(scores - scores.max())
        total += e[keep[i]].sum() / e.sum()
    return total / q.shape[0]


def random_head(n, d, seed):
    rng = np.random.default_rng(seed)
    return AttentionHead(
        rng.standard_normal((n, d), dtype=np.float32),
        rng.standard_normal((n, d), dtype=np.float32),
        rng.standard_normal((n, d), dtype=np.float32),
    )


def random_head_for_shape(shape: LatentShape, d, seed):
    return random_head(shape.n, d, seed)


def rel_l2(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
