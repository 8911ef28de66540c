"""
Dense float32 kernels shared by the layout, attention, model and sampler modules.

Every kernel works on numpy arrays of dtype float32 and accumulates in a fixed
left-to-right order, so identical inputs always give identical output bits.
"""

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand shapes or vector lengths do not line up"""


def as_tensor(a, name="tensor", ndim=2):
    """Return `a` as a C-contiguous float32 array with the expected number of dims"""
    arr = np.ascontiguousarray(a, dtype=DTYPE)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name} must have {ndim} dims, got shape {arr.shape}")
    return arr


# -----------------------------------------------
# Matrix product with a fixed accumulation order over the shared dimension.
# Leading (batch) dims are allowed as long as they agree, e.g. (heads, L, d) @ (heads, d, L)
def matmul(a, b):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2 dims, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dims differ: {a.shape} x {b.shape}")

    out = np.zeros(a.shape[:-1] + (b.shape[-1],), dtype=DTYPE)
    for k in range(a.shape[-1]):
        out += a[..., :, k : k + 1] * b[..., k : k + 1, :]
    return out


def row_sum(a, accumulate=DTYPE):
    """Sum over the last axis, strictly left to right, in the `accumulate` dtype"""
    a = np.asarray(a, dtype=DTYPE)
    total = np.zeros(a.shape[:-1] + (1,), dtype=accumulate)
    for j in range(a.shape[-1]):
        total += a[..., j : j + 1]
    return total


# -----------------------------------------------
# Numerically stable softmax over the last axis of scale * a.
# Entries equal to -inf act as masked keys; a row with every key masked returns zeros
def row_softmax(a, scale=1.0):
    a = np.asarray(a, dtype=DTYPE)
    if np.isnan(a).any() or np.isposinf(a).any():
        raise ShapeError("row_softmax input must be finite (or -inf for masked keys)")

    if a.shape[-1] == 0:
        return a.copy()

    z = a * DTYPE(scale)
    row_max = np.max(z, axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, DTYPE(0.0))
    e = np.exp(z - row_max).astype(DTYPE)
    # probabilities are accumulated in float64 and rounded once
    total = row_sum(e, np.float64).astype(DTYPE)

    out = np.zeros_like(e)
    np.divide(e, total, out=out, where=total > 0)
    return out


def layer_norm(a, gain, bias, eps=1e-6):
    a = np.asarray(a, dtype=DTYPE)
    gain = np.asarray(gain, dtype=DTYPE).reshape(-1)
    bias = np.asarray(bias, dtype=DTYPE).reshape(-1)
    if gain.shape[0] != a.shape[-1] or bias.shape[0] != a.shape[-1]:
        raise ShapeError(
            f"layer_norm gain/bias length ({gain.shape[0]}, {bias.shape[0]}) must equal cols {a.shape[-1]}"
        )
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")

    mean = a.mean(axis=-1, keepdims=True, dtype=DTYPE)
    centered = a - mean
    # second pass removes the rounding left in the first mean
    centered = centered - centered.mean(axis=-1, keepdims=True, dtype=DTYPE)
    var = (centered * centered).mean(axis=-1, keepdims=True, dtype=DTYPE)
    normed = centered / np.sqrt(var + DTYPE(eps))
    return (normed * gain + bias).astype(DTYPE)


def gelu(a):
    # tanh approximation, as used by the MM-DiT feed-forward
    a = np.asarray(a, dtype=DTYPE)
    c = DTYPE(np.sqrt(2.0 / np.pi))
    return (DTYPE(0.5) * a * (DTYPE(1.0) + np.tanh(c * (a + DTYPE(0.044715) * a * a * a)))).astype(DTYPE)


def frobenius_norm(a):
    return float(np.sqrt(np.sum(np.square(np.asarray(a, dtype=np.float64)))))


def relative_error(actual, expected, floor=1e-30):
    """Relative Frobenius error of `actual` against `expected` (float64 accumulation)"""
    diff = np.asarray(actual, dtype=np.float64) - np.asarray(expected, dtype=np.float64)
    return frobenius_norm(diff) / max(frobenius_norm(expected), floor)
