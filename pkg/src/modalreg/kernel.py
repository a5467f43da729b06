"""Gaussian kernels over outputs and inputs, their output derivatives, and
the Gram-type matrices used by the log-density-derivative estimator.

The output kernel is written as ``k_y(y, y') = phi((y - y')**2 / (2 s**2))``
with ``phi(t) = exp(-t)``.  ``varphi = -dphi/dt`` is exposed separately
because the fixed-point update is expressed through it; for the Gaussian
profile the two coincide.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DataError

__all__ = [
    "KernelParams",
    "JointPoint",
    "phi",
    "varphi",
    "ky",
    "kx",
    "dky_dy",
    "dky_dy2",
    "d2ky_dy_dy2",
    "sqdist",
    "gaussian_gram",
    "assemble_matrices",
    "median_trick",
]


def phi(t):
    """Kernel profile, convex and non-increasing on ``t >= 0``."""
    return np.exp(-np.asarray(t, dtype=float))


def varphi(t):
    """Negative derivative of :func:`phi`."""
    return np.exp(-np.asarray(t, dtype=float))


def _check_width(name, value):
    if not (np.isfinite(value) and value > 0):
        raise DataError(f"{name} must be positive and finite, got {value!r}")


@dataclass(frozen=True)
class KernelParams:
    """Widths of the output kernel, input kernel and regression kernel."""

    sigma_y: float
    sigma_x: float
    sigma_m: float = 1.0

    def __post_init__(self):
        for name in ("sigma_y", "sigma_x", "sigma_m"):
            _check_width(name, getattr(self, name))


@dataclass(frozen=True)
class JointPoint:
    y: float
    x: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        if x.ndim != 1 or x.size < 1:
            raise DataError("x must be a non-empty vector")
        if not (np.isfinite(self.y) and np.all(np.isfinite(x))):
            raise DataError("joint point has non-finite entries")
        object.__setattr__(self, "x", x)


def ky(y, y2, sigma_y):
    y = np.asarray(y, dtype=float)
    return phi((y - y2) ** 2 / (2.0 * sigma_y**2))


def kx(x, x2, sigma_x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape[-1] != x2.shape[-1]:
        raise DataError(f"dimension mismatch: {x.shape[-1]} vs {x2.shape[-1]}")
    return np.exp(-np.sum((x - x2) ** 2, axis=-1) / (2.0 * sigma_x**2))


def dky_dy(y, y2, sigma_y):
    """Derivative of ``ky`` in its first argument."""
    y = np.asarray(y, dtype=float)
    return -((y - y2) / sigma_y**2) * ky(y, y2, sigma_y)


def dky_dy2(y, y2, sigma_y):
    """Derivative of ``ky`` in its second argument."""
    y = np.asarray(y, dtype=float)
    return ((y - y2) / sigma_y**2) * ky(y, y2, sigma_y)


def d2ky_dy_dy2(y, y2, sigma_y):
    y = np.asarray(y, dtype=float)
    diff2 = (y - y2) ** 2
    return (1.0 / sigma_y**2 - diff2 / sigma_y**4) * ky(y, y2, sigma_y)


def sqdist(X, Z):
    """Pairwise squared Euclidean distances between the rows of X and Z."""
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if X.shape[1] != Z.shape[1]:
        raise DataError(f"dimension mismatch: {X.shape[1]} vs {Z.shape[1]}")
    # cdist forms explicit differences, so coincident rows give exact zeros
    return cdist(X, Z, "sqeuclidean")


def gaussian_gram(X, Z, sigma):
    return np.exp(-sqdist(X, Z) / (2.0 * sigma**2))


def assemble_matrices(y, X, params):
    """Return ``(K, G, H)`` for the training points ``(y_i, X_i)``.

    ``K[i, j] = k(z_i, z_j)``, ``G[i, j]`` is the derivative in the output
    of the second argument and ``H[i, j]`` the mixed second derivative,
    all with the factorised kernel ``ky * kx``.
    """
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if y.size == 0:
        raise DataError("cannot assemble kernel matrices for zero points")
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DataError("X must be an (n, d) matrix aligned with y")
    Kx = gaussian_gram(X, X, params.sigma_x)
    Y1 = y[:, None]
    Y2 = y[None, :]
    K = ky(Y1, Y2, params.sigma_y) * Kx
    G = dky_dy2(Y1, Y2, params.sigma_y) * Kx
    H = d2ky_dy_dy2(Y1, Y2, params.sigma_y) * Kx
    return K, G, H


def median_trick(X):
    """Median of the pairwise Euclidean distances between rows of X.

    For an even number of pairs the lower of the two middle values is
    returned, so the result is always one of the observed distances.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n < 2:
        raise DataError("median trick needs at least two points")
    iu = np.triu_indices(n, k=1)
    dists = np.sqrt(sqdist(X, X)[iu])
    dists.sort()
    med = dists[(dists.size - 1) // 2]
    if med <= 0:
        raise DataError("degenerate width: median pairwise distance is zero")
    return float(med)
