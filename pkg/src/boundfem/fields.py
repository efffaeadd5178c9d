"""Normalization of coefficient fields (constants or callables on point arrays).

Fields follow one convention throughout the package: a scalar field maps an
array of points with shape (..., 2) to values of shape (...,); a vector field
maps (..., 2) to (..., 2). Plain numbers and 2-vectors are promoted to
constant fields.
"""

import numpy as np


def scalar_field(c):
    """Return a vectorized scalar field from a constant or callable."""
    if callable(c):
        def field(x):
            x = np.asarray(x, dtype=float)
            v = np.asarray(c(x), dtype=float)
            if v.shape != x.shape[:-1]:
                v = np.broadcast_to(v, x.shape[:-1])
            return v

        return field
    value = float(c)

    def field(x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], value)

    return field


def vector_field(c):
    """Return a vectorized 2D vector field from a constant 2-vector or callable."""
    if callable(c):
        def field(x):
            x = np.asarray(x, dtype=float)
            v = np.asarray(c(x), dtype=float)
            if v.shape != x.shape:
                v = np.broadcast_to(v, x.shape)
            return v

        return field
    value = np.asarray(c, dtype=float).reshape(2)

    def field(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(value, x.shape).copy()

    return field
