"""Kernel least-squares estimation of the log-density derivative
``d/dy log p(y, x)``.

The estimator minimises the empirical Fisher divergence plus an RKHS-norm
penalty.  Its minimiser has a closed form: derivative-of-kernel terms with
a common coefficient ``-1/(n lam)`` plus kernel terms whose coefficients
solve ``(K + n lam I) alpha = G 1 / (n lam)``.  Leave-one-out
cross-validation of the Fisher objective is available both analytically
(one n-by-n inverse) and by explicit refitting.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernel
from ._linalg import spd_solve
from .data import Dataset
from .errors import ConfigError, DataError, NumericalError

__all__ = [
    "LsldModel",
    "ModelGrid",
    "default_lambda",
    "fit_lsld",
    "eval_r",
    "eval_dr_dy",
    "empirical_fisher",
    "loocv_score",
    "loocv_naive",
    "default_grid",
    "select_model",
]


def default_lambda(n):
    return float(n) ** -0.9


@dataclass
class LsldModel:
    alphas: np.ndarray
    beta_const: float
    train_y: np.ndarray
    train_X: np.ndarray
    params: kernel.KernelParams
    lam: float

    @property
    def n(self):
        return self.train_y.size

    def _terms(self, y, X):
        y = np.atleast_1d(np.asarray(y, dtype=float)).ravel()
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            # one query point, or a batch of scalar inputs when d == 1
            X = X[None, :] if X.size == self.train_X.shape[1] and y.size == 1 else X[:, None]
        if X.shape[1] != self.train_X.shape[1]:
            raise DataError(
                f"dimension mismatch: model trained on d={self.train_X.shape[1]}, got {X.shape[1]}"
            )
        if X.shape[0] == 1 and y.size > 1:
            X = np.repeat(X, y.size, axis=0)
        if X.shape[0] != y.size:
            raise DataError("y and X have different numbers of query points")
        Kx = kernel.gaussian_gram(X, self.train_X, self.params.sigma_x)
        return y[:, None], self.train_y[None, :], Kx

    def r(self, y, X):
        """Estimated score at the query pairs ``(y[q], X[q])``."""
        Yq, Yl, Kx = self._terms(y, X)
        s = self.params.sigma_y
        inner = self.alphas * kernel.ky(Yq, Yl, s) + self.beta_const * kernel.dky_dy2(Yq, Yl, s)
        return np.sum(inner * Kx, axis=1)

    def dr_dy(self, y, X):
        Yq, Yl, Kx = self._terms(y, X)
        s = self.params.sigma_y
        inner = (self.alphas * kernel.dky_dy(Yq, Yl, s)
                 + self.beta_const * kernel.d2ky_dy_dy2(Yq, Yl, s))
        return np.sum(inner * Kx, axis=1)

    def to_dict(self):
        return {
            "kind": "lsld",
            "alphas": self.alphas.tolist(),
            "beta_const": float(self.beta_const),
            "train_y": self.train_y.tolist(),
            "train_X": self.train_X.tolist(),
            "sigma_y": self.params.sigma_y,
            "sigma_x": self.params.sigma_x,
            "sigma_m": self.params.sigma_m,
            "lambda": self.lam,
        }

    @classmethod
    def from_dict(cls, d):
        params = kernel.KernelParams(d["sigma_y"], d["sigma_x"], d.get("sigma_m", 1.0))
        return cls(np.array(d["alphas"], dtype=float), float(d["beta_const"]),
                   np.array(d["train_y"], dtype=float),
                   np.array(d["train_X"], dtype=float).reshape(len(d["train_y"]), -1),
                   params, float(d["lambda"]))


def _validate(data, lam):
    if not isinstance(data, Dataset):
        raise DataError("expected a Dataset")
    if not (np.isfinite(lam) and lam > 0):
        raise ConfigError(f"lambda must be positive, got {lam!r}")


def fit_lsld(data, params, lam):
    """Closed-form fit on all points of ``data``."""
    _validate(data, lam)
    n = data.n
    K, G, _ = kernel.assemble_matrices(data.y, data.X, params)
    nlam = n * lam
    rhs = G.sum(axis=1) / nlam
    A = K + nlam * np.eye(n)
    alphas = spd_solve(A, rhs, what="K-LSLD system")
    return LsldModel(alphas, -1.0 / nlam, data.y.copy(), data.X.copy(), params, float(lam))


def eval_r(model, y, x):
    return model.r(y, x)


def eval_dr_dy(model, y, x):
    return model.dr_dy(y, x)


def empirical_fisher(model, data):
    """``mean(r**2 / 2 + dr/dy)`` over the samples of ``data``.

    ``model`` is an :class:`LsldModel` or any callable ``f(y, X)`` that
    returns the pair ``(r, dr_dy)``.
    """
    if isinstance(model, LsldModel):
        r = model.r(data.y, data.X)
        dr = model.dr_dy(data.y, data.X)
    else:
        r, dr = model(data.y, data.X)
    return float(np.mean(0.5 * np.asarray(r) ** 2 + np.asarray(dr)))


def loocv_score(data, params, lam):
    """Leave-one-out Fisher score computed from a single n-by-n inverse."""
    _validate(data, lam)
    n = data.n
    if n < 3:
        raise DataError("LOOCV needs at least three samples")
    K, G, H = kernel.assemble_matrices(data.y, data.X, params)
    mlam = (n - 1) * lam
    try:
        L = np.linalg.inv(K + mlam * np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("LOOCV: singular K + (n-1) lam I") from exc
    diagL = np.diag(L)
    if np.any(diagL == 0):
        raise NumericalError("LOOCV: zero on the diagonal of the inverse")
    E = np.ones((n, n)) - np.eye(n)
    S = (G @ E) / mlam
    LS = L @ S
    A = L @ S - L * (np.diag(LS) / diagL)[None, :]
    B = -E / mlam
    r_loo = np.sum(K * A.T + G * B.T, axis=1)
    dr_loo = np.sum(G.T * A.T + H * B.T, axis=1)
    return float((0.5 * r_loo @ r_loo + dr_loo.sum()) / n)


def loocv_naive(data, params, lam):
    """Leave-one-out Fisher score by ``n`` explicit refits (test oracle)."""
    _validate(data, lam)
    n = data.n
    if n < 3:
        raise DataError("LOOCV needs at least three samples")
    total = 0.0
    for l in range(n):
        keep = np.arange(n) != l
        m = fit_lsld(data.subset(keep), params, lam)
        r = m.r(data.y[l:l + 1], data.X[l:l + 1])[0]
        dr = m.dr_dy(data.y[l:l + 1], data.X[l:l + 1])[0]
        total += 0.5 * r * r + dr
    return total / n


@dataclass
class ModelGrid:
    sigma_y_candidates: list
    sigma_x_candidates: list
    lam: float = None
    sigma_m: float = 1.0
    cells: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.sigma_y_candidates) == 0 or len(self.sigma_x_candidates) == 0:
            raise ConfigError("model grid must have at least one candidate per width")


GRID_FACTORS = (0.25, 0.5, 1.0, 2.0, 4.0)


def default_grid(data, factors=GRID_FACTORS, sigma_m=None):
    """Geometric grid around the median heuristics for ``x`` and ``y``."""
    mx = kernel.median_trick(data.X)
    my = kernel.median_trick(data.y[:, None])
    return ModelGrid([f * my for f in factors], [f * mx for f in factors],
                     sigma_m=mx if sigma_m is None else sigma_m)


def select_model(data, grid):
    """Pick ``(sigma_y, sigma_x)`` by analytic LOOCV and refit on all data.

    Ties go to the smallest ``sigma_y``, then the smallest ``sigma_x``.
    Scores of every cell are stored in ``grid.cells``.
    """
    lam = default_lambda(data.n) if grid.lam is None else grid.lam
    best = None
    failures = []
    grid.cells.clear()
    for sy in sorted(grid.sigma_y_candidates):
        for sx in sorted(grid.sigma_x_candidates):
            params = kernel.KernelParams(sy, sx, grid.sigma_m)
            try:
                score = loocv_score(data, params, lam)
            except NumericalError as exc:
                failures.append(f"(sigma_y={sy:g}, sigma_x={sx:g}): {exc}")
                continue
            grid.cells[(sy, sx)] = score
            if np.isfinite(score) and (best is None or score < best[0]):
                best = (score, params)
    if best is None:
        raise NumericalError("every grid cell failed: " + "; ".join(failures) if failures
                             else "no finite LOOCV score on the grid")
    params = best[1]
    return params, fit_lsld(data, params, lam)
