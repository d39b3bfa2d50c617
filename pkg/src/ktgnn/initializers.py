"""Parameter initialization helpers."""

import numpy as np

from .autodiff import parameter


def glorot(rng, rows, cols, dtype=np.float64):
    """Fan-based uniform init for weight matrices."""
    limit = np.sqrt(6.0 / (rows + cols))
    return parameter(rng.uniform(-limit, limit, size=(rows, cols)).astype(dtype))


def attention_vector(rng, rows, dtype=np.float64, scale=0.1):
    """Small uniform init for attention/gate heads (column vectors)."""
    return parameter(rng.uniform(-scale, scale, size=(rows, 1)).astype(dtype))


def zeros(rows, cols, dtype=np.float64):
    return parameter(np.zeros((rows, cols), dtype=dtype))
