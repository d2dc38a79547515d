"""Dense numeric primitives and the seedable random-stream factory.

Everything is float64. Vectors and matrices are plain numpy arrays; the
helpers here add the stability tricks (max-subtraction) and the input
validation the rest of the package relies on.
"""

import zlib

import numpy as np

from . import kernels


def _as_float_vector(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1 or a.size < 1:
        raise ValueError("expected a non-empty 1-D vector")
    return a


def softmax(logits) -> np.ndarray:
    """Stable softmax of a vector; entries in (0, 1], sum 1."""
    a = _as_float_vector(logits)
    if not np.isfinite(a).all():
        raise ValueError("non-finite logits")
    return kernels.row_softmax(a[None, :])[0]


def log_sum_exp(logits) -> float:
    """Stable log(sum(exp(x))); never overflows for spreads <= ~700."""
    a = _as_float_vector(logits)
    if not np.isfinite(a).all():
        raise ValueError("non-finite logits")
    return float(kernels.row_logsumexp(a[None, :])[0])


def l2_normalize(v) -> np.ndarray:
    """Scale a vector to unit Euclidean norm."""
    a = _as_float_vector(v)
    n = float(np.sqrt((a * a).sum()))
    if n == 0.0:
        raise ValueError("zero-norm embedding")
    return a / n


def l2_normalize_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise unit normalization of a matrix."""
    norms = np.sqrt((m * m).sum(axis=1, keepdims=True))
    if (norms == 0.0).any():
        raise ValueError("zero-norm embedding")
    return m / norms


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Shape-checked matrix product with a fixed reduction order.

    Bitwise-reproducible and equal to a naive triple loop; the platform
    BLAS behind ``@`` may fuse or reorder the k-reduction.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch: {a.shape} x {b.shape}")
    return kernels.matmul_fixed(np.ascontiguousarray(a), np.ascontiguousarray(b))


def derive_rng(seed: int, tag: str) -> np.random.Generator:
    """Counter-based generator for (seed, purpose-tag).

    All randomness in the package flows from a single seed through named
    streams so independent components cannot desynchronize. Philox is
    counter-based, so identical (seed, tag) pairs reproduce identical draw
    sequences across runs and platforms.
    """
    digest = zlib.crc32(tag.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=(int(seed) & 0xFFFFFFFFFFFFFFFF, digest))
    return np.random.Generator(np.random.Philox(ss))


def rng_standard_normal(rng: np.random.Generator, n: int) -> np.ndarray:
    """n standard-normal draws from the given stream."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return rng.standard_normal(n)
