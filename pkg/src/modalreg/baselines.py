"""Comparison methods sharing the kernel expansion ``f(x) = theta . k_m(x)``:
kernel ridge regression, least absolute deviations fitted by IRLS, and
modal regression through a Gaussian joint KDE.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import kernel
from ._linalg import spd_solve
from .data import Dataset, make_rng
from .dmrk import DmrkConfig, DmrkModel, run_fixed_point
from .errors import ConfigError, DataError, NumericalError

__all__ = [
    "RidgeModel",
    "KdeModel",
    "DEFAULT_LAMBDA_GRID",
    "fit_krr",
    "fit_lad",
    "lad_objective",
    "kde_joint",
    "kde_dy",
    "lscv_terms",
    "lscv_score",
    "default_kde_grid",
    "select_kde_bandwidths",
    "build_H_kde",
    "build_h_kde",
    "fit_mrkde",
]

DEFAULT_LAMBDA_GRID = tuple(10.0**k for k in range(-6, 1))
IRLS_EPS = 1e-6


@dataclass
class RidgeModel:
    theta: np.ndarray
    sigma_m: float
    train_X: np.ndarray
    lambda_reg: float
    kind: str = "krr"
    converged: bool = True
    objective: list = field(default_factory=list, repr=False)
    cv_scores: dict = field(default_factory=dict, repr=False)

    def predict(self, X):
        return DmrkModel(self.theta, self.sigma_m, self.train_X).predict(X)

    def to_dict(self):
        return {"kind": self.kind, "theta": self.theta.tolist(), "sigma_m": self.sigma_m,
                "train_X": self.train_X.tolist(), "lambda_reg": self.lambda_reg,
                "converged": self.converged}

    @classmethod
    def from_dict(cls, d):
        theta = np.array(d["theta"], dtype=float)
        return cls(theta, float(d["sigma_m"]),
                   np.array(d["train_X"], dtype=float).reshape(theta.size, -1),
                   float(d["lambda_reg"]), d.get("kind", "krr"), bool(d.get("converged", True)))


def _check_grid(lambda_grid, folds, n):
    if len(lambda_grid) == 0:
        raise ConfigError("lambda grid is empty")
    if folds < 2:
        raise ConfigError("need at least two folds")
    if n < folds:
        raise DataError(f"{n} samples cannot be split into {folds} folds")


def _fold_ids(n, folds, seed):
    rng = make_rng(seed, "cv-folds")
    ids = np.arange(n) % folds
    return rng.permutation(ids)


def _ridge_solve(Km, y, lam):
    n = y.size
    theta = spd_solve(Km + n * lam * np.eye(n), y, what="kernel ridge system")
    return theta


def fit_krr(data, sigma_m, lambda_grid=DEFAULT_LAMBDA_GRID, folds=5, seed=0):
    """Kernel ridge regression, ``(K_m + n lam I) theta = y``.

    ``lam`` minimises the mean squared validation error of ``folds``-fold
    cross-validation; folds are fixed by ``seed``.
    """
    _check_grid(lambda_grid, folds, data.n)
    grid = sorted(lambda_grid)
    Km = kernel.gaussian_gram(data.X, data.X, sigma_m)
    fid = _fold_ids(data.n, folds, seed)
    errs = np.zeros(len(grid))
    for k in range(folds):
        tr, va = fid != k, fid == k
        # one eigendecomposition per fold serves every lambda
        evals, evecs = linalg.eigh(Km[np.ix_(tr, tr)])
        evals = np.clip(evals, 0.0, None)
        proj = evecs.T @ data.y[tr]
        m = int(tr.sum())
        for j, lam in enumerate(grid):
            theta = evecs @ (proj / (evals + m * lam))
            pred = Km[np.ix_(va, tr)] @ theta
            errs[j] += np.sum((pred - data.y[va]) ** 2)
    errs /= data.n
    best = int(np.argmin(errs))
    lam = grid[best]
    theta = _ridge_solve(Km, data.y, lam)
    return RidgeModel(theta, float(sigma_m), data.X.copy(), float(lam), "krr",
                      cv_scores=dict(zip(grid, errs.tolist())))


def lad_objective(theta, Km, y, lam):
    """``sum |y - K_m theta| + (lam n / 2) theta' K_m theta``."""
    resid = y - Km @ theta
    return float(np.sum(np.abs(resid)) + 0.5 * lam * y.size * theta @ Km @ theta)


def _irls(Km, y, lam, max_iters=200, tol=1e-6, eps=IRLS_EPS, theta0=None):
    """Majorise-minimise iterations for the penalised absolute loss.

    Each step solves ``(K_m + n lam diag(max(|r_i|, eps))) theta = y``.
    A step is accepted only if it does not raise the objective; the
    returned history lists the objective after every accepted step.
    """
    n = y.size
    theta = _ridge_solve(Km, y, lam) if theta0 is None else np.asarray(theta0, float).copy()
    obj = lad_objective(theta, Km, y, lam)
    history = [obj]
    converged = False
    for _ in range(max_iters):
        resid = y - Km @ theta
        scale = np.maximum(np.abs(resid), eps)
        try:
            new = spd_solve(Km + n * lam * np.diag(scale), y, what="IRLS system", rtol=1e-6)
        except NumericalError:
            break
        new_obj = lad_objective(new, Km, y, lam)
        if new_obj > obj + 1e-10 * max(1.0, abs(obj)):
            # majoriser of the smoothed loss no longer decreases the exact loss
            converged = True
            break
        delta = np.max(np.abs(new - theta))
        theta, obj = new, new_obj
        history.append(obj)
        if delta < tol:
            converged = True
            break
    return theta, converged, history


def fit_lad(data, sigma_m, lambda_grid=DEFAULT_LAMBDA_GRID, folds=5, seed=0,
            max_iters=200, tol=1e-6):
    """Kernel least absolute deviations by IRLS.

    ``lam`` is chosen by ``folds``-fold cross-validation of the mean
    absolute validation error.  ``converged`` is False on the returned
    model when IRLS hit ``max_iters``; a warning is issued as well.
    """
    _check_grid(lambda_grid, folds, data.n)
    grid = sorted(lambda_grid)
    Km = kernel.gaussian_gram(data.X, data.X, sigma_m)
    fid = _fold_ids(data.n, folds, seed)
    errs = np.zeros(len(grid))
    for k in range(folds):
        tr, va = fid != k, fid == k
        Ktr = Km[np.ix_(tr, tr)]
        for j, lam in enumerate(grid):
            theta, _, _ = _irls(Ktr, data.y[tr], lam, max_iters, tol)
            pred = Km[np.ix_(va, tr)] @ theta
            errs[j] += np.sum(np.abs(pred - data.y[va]))
    errs /= data.n
    best = int(np.argmin(errs))
    lam = grid[best]
    theta, converged, history = _irls(Km, data.y, lam, max_iters, tol)
    if not converged:
        warnings.warn(f"IRLS did not converge in {max_iters} iterations", RuntimeWarning,
                      stacklevel=2)
    return RidgeModel(theta, float(sigma_m), data.X.copy(), float(lam), "lad",
                      converged=converged, objective=history,
                      cv_scores=dict(zip(grid, errs.tolist())))


# ---------------------------------------------------------------------------
# joint kernel density estimate


@dataclass
class KdeModel:
    h_y: float
    h_x: float
    train: Dataset

    def __post_init__(self):
        if not (self.h_y > 0 and self.h_x > 0):
            raise ConfigError("KDE bandwidths must be positive")

    @property
    def Z(self):
        d = self.train.d
        return (2 * np.pi) ** ((d + 1) / 2) * self.h_y * self.h_x**d

    def _parts(self, y, X):
        y = np.atleast_1d(np.asarray(y, dtype=float)).ravel()
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :] if X.size == self.train.d and y.size == 1 else X[:, None]
        if X.shape[0] == 1 and y.size > 1:
            X = np.repeat(X, y.size, axis=0)
        if X.shape[1] != self.train.d or X.shape[0] != y.size:
            raise DataError("query shape does not match the KDE training data")
        ex = kernel.gaussian_gram(X, self.train.X, self.h_x)
        diff = y[:, None] - self.train.y[None, :]
        ey = np.exp(-(diff**2) / (2 * self.h_y**2))
        return diff, ey, ex

    def density(self, y, X):
        _, ey, ex = self._parts(y, X)
        return np.sum(ey * ex, axis=1) / (self.train.n * self.Z)

    def dy(self, y, X):
        diff, ey, ex = self._parts(y, X)
        return np.sum(-diff / self.h_y**2 * ey * ex, axis=1) / (self.train.n * self.Z)

    def to_dict(self):
        return {"kind": "kde", "h_y": self.h_y, "h_x": self.h_x,
                "train_X": self.train.X.tolist(), "train_y": self.train.y.tolist()}


def kde_joint(model, y, x):
    return model.density(y, x)


def kde_dy(model, y, x):
    return model.dy(y, x)


def lscv_terms(data, h_y, h_x):
    """Return ``(int p^2, mean_l p^{(-l)}(z_l))`` for the Gaussian joint KDE.

    The integral of the squared estimate is a double sum of Gaussians with
    widths ``sqrt(2) h`` (convolution of two Gaussian kernels).
    """
    n, d = data.n, data.d
    if n < 2:
        raise DataError("LSCV needs at least two samples")
    dy2 = (data.y[:, None] - data.y[None, :]) ** 2
    dx2 = kernel.sqdist(data.X, data.X)
    conv = (np.exp(-dy2 / (4 * h_y**2)) * np.exp(-dx2 / (4 * h_x**2))
            / ((4 * np.pi) ** ((d + 1) / 2) * h_y * h_x**d))
    int_sq = conv.sum() / n**2
    Z = (2 * np.pi) ** ((d + 1) / 2) * h_y * h_x**d
    k = np.exp(-dy2 / (2 * h_y**2) - dx2 / (2 * h_x**2))
    np.fill_diagonal(k, 0.0)
    loo = k.sum(axis=1) / ((n - 1) * Z)
    return float(int_sq), float(loo.mean())


def lscv_score(data, h_y, h_x):
    int_sq, loo = lscv_terms(data, h_y, h_x)
    return int_sq - 2.0 * loo


GRID_FACTORS = (0.25, 0.5, 1.0, 2.0, 4.0)


def default_kde_grid(data, factors=GRID_FACTORS):
    """Multiples of Silverman-type reference bandwidths in ``d + 1`` dims."""
    n, q = data.n, data.d + 1
    ref = (4.0 / (q + 2)) ** (1.0 / (q + 4)) * n ** (-1.0 / (q + 4))
    sy = max(float(data.y.std()), 1e-12)
    sx = max(float(np.mean(data.X.std(axis=0))), 1e-12)
    return [f * ref * sy for f in factors], [f * ref * sx for f in factors]


def select_kde_bandwidths(data, grid=None):
    """Least-squares cross-validation over ``grid = (h_y list, h_x list)``.

    Ties go to the smallest ``h_y``, then the smallest ``h_x``.
    """
    if grid is None:
        grid = default_kde_grid(data)
    hys, hxs = grid
    if len(hys) == 0 or len(hxs) == 0:
        raise ConfigError("KDE bandwidth grid is empty")
    best = None
    for hy in sorted(hys):
        for hx in sorted(hxs):
            s = lscv_score(data, hy, hx)
            if np.isfinite(s) and (best is None or s < best[0]):
                best = (s, hy, hx)
    if best is None:
        raise NumericalError("no finite LSCV score on the grid")
    return float(best[1]), float(best[2])


class _KdeProblem:
    def __init__(self, data, kde, sigma_m):
        self.Km = kernel.gaussian_gram(data.X, data.X, sigma_m)
        self.Ex = kernel.gaussian_gram(data.X, kde.train.X, kde.h_x)
        self.yl = kde.train.y
        self.h_y = kde.h_y

    def weights(self, theta):
        f = self.Km @ theta
        e = np.exp(-((f[:, None] - self.yl[None, :]) ** 2) / (2 * self.h_y**2)) * self.Ex
        return e.sum(axis=1), e @ self.yl

    def H(self, theta):
        w, _ = self.weights(theta)
        H = (self.Km.T * w) @ self.Km
        return 0.5 * (H + H.T)

    def h(self, theta):
        return self.Km.T @ self.weights(theta)[1]


def build_H_kde(theta, data, kde, sigma_m):
    return _KdeProblem(data, kde, sigma_m).H(np.asarray(theta, dtype=float))


def build_h_kde(theta, data, kde, sigma_m):
    return _KdeProblem(data, kde, sigma_m).h(np.asarray(theta, dtype=float))


def fit_mrkde(data, theta0, kde, sigma_m, config=None):
    """Fixed-point iteration on the KDE plug-in of the joint-density risk.

    Uses the stopping rule and diagonal loading of :class:`DmrkConfig`.
    Returns ``(DmrkModel, FixedPointTrace)``; the trace carries no
    path-integral values.
    """
    config = config or DmrkConfig()
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.shape != (data.n,):
        raise DataError(f"theta0 must have length n={data.n}")
    problem = _KdeProblem(data, kde, sigma_m)

    def step(theta):
        w, v = problem.weights(theta)
        H = (problem.Km.T * w) @ problem.Km
        H = 0.5 * (H + H.T)
        j = 1e-8 * np.trace(H) / H.shape[0] if config.jitter is None else float(config.jitter)
        A = H + j * np.eye(H.shape[0]) if j > 0 else H
        return spd_solve(A, problem.Km.T @ v, what="KDE fixed-point system", rtol=1e-6), j

    theta, trace = run_fixed_point(step, None, theta0, config, label="MR-KDE")
    return DmrkModel(theta, float(sigma_m), data.X.copy(), kind="mrkde"), trace
