"""Dense tensor primitives.

Tensors are plain row-major :class:`numpy.ndarray` objects. Images are laid
out ``[height, width, channels]`` and convolution kernels
``[kh, kw, in_ch, out_ch]``. Training runs in float32; float64 is reserved for
gradient checking.
"""

import math

import numpy as np

from .errors import ShapeError

DTYPE = np.float32
WIDE_DTYPE = np.float64


def check_shape(shape):
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if len(shape) == 0:
        raise ShapeError("rank must be at least 1")
    if any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    return shape


def zeros(shape, dtype=DTYPE):
    return np.zeros(check_shape(shape), dtype=dtype)


def fill(shape, value, dtype=DTYPE):
    return np.full(check_shape(shape), value, dtype=dtype)


def zeros_like(t):
    return np.zeros_like(t)


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b):
    a, b = np.asarray(a), np.asarray(b)
    _same_shape(a, b, "add")
    return a + b


def mul(a, b):
    a, b = np.asarray(a), np.asarray(b)
    _same_shape(a, b, "mul")
    return a * b


def matmul(a, b):
    """Matrix product with a fixed accumulation order.

    Each output element is accumulated over ``k`` in ascending order, one
    rounded multiply and one rounded add per step, which makes the result
    identical to a naive triple loop in the same precision. Use this where
    reproducibility matters more than speed; the layers use BLAS.
    """
    a, b = np.asarray(a), np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    dtype = np.result_type(a, b)
    out = np.zeros((a.shape[0], b.shape[1]), dtype=dtype)
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def reshape(t, new_shape):
    t = np.asarray(t)
    new_shape = check_shape(new_shape)
    if math.prod(new_shape) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} ({t.size} elements) to {new_shape}")
    return t.reshape(new_shape)


def all_finite(t):
    return bool(np.isfinite(t).all())
