"""Kernel modal regression by fixed-point iteration.

The regressor is ``f(x) = theta . k_m(x)`` with a Gaussian regression
kernel centred on the training inputs.  Plugging the kernel score
estimate into the gradient of the empirical log-density risk gives

    grad = h(theta) - H(theta) theta,

and the update ``theta <- H(theta)^{-1} h(theta)`` zeroes that
approximation.  :func:`path_integral_estimate` integrates the approximated
gradient along the straight segment between two iterates, which estimates
the change of the risk; under the hypotheses of the monotonicity result
(nonnegative ``k_x``, convex non-increasing profile, positive-definite
``H`` and zero ``alpha``) it is strictly positive for every step.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from . import kernel
from ._linalg import spd_solve
from .errors import ConfigError, DataError, NumericalError

__all__ = [
    "DmrkModel",
    "DmrkConfig",
    "FixedPointTrace",
    "build_H_theta",
    "build_h_theta",
    "plugin_gradient",
    "fixed_point_step",
    "path_integral_estimate",
    "path_integral_quadrature",
    "fit_dmrk",
    "predict",
]

ALPHA_MODES = ("full", "zeroed")


@dataclass
class DmrkModel:
    theta: np.ndarray
    sigma_m: float
    train_X: np.ndarray
    kind: str = "dmrk"

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None] if self.train_X.shape[1] == 1 else X[None, :]
        if X.shape[1] != self.train_X.shape[1]:
            raise DataError(
                f"dimension mismatch: model expects d={self.train_X.shape[1]}, got {X.shape[1]}"
            )
        out = np.empty(X.shape[0])
        # chunked so that large test sets do not build one huge Gram matrix
        step = 4096
        for s in range(0, X.shape[0], step):
            Km = kernel.gaussian_gram(X[s:s + step], self.train_X, self.sigma_m)
            out[s:s + step] = Km @ self.theta
        return out

    def to_dict(self):
        return {"kind": self.kind, "theta": self.theta.tolist(), "sigma_m": self.sigma_m,
                "train_X": self.train_X.tolist()}

    @classmethod
    def from_dict(cls, d):
        theta = np.array(d["theta"], dtype=float)
        return cls(theta, float(d["sigma_m"]),
                   np.array(d["train_X"], dtype=float).reshape(theta.size, -1),
                   d.get("kind", "dmrk"))


def predict(model, X):
    return model.predict(X)


@dataclass
class DmrkConfig:
    """Stopping rule and numerical safeguards for the fixed-point loop.

    ``jitter=None`` loads the diagonal of ``H`` with ``1e-8 * trace(H)/n``
    at every step; a number is used verbatim (``0`` disables loading).
    ``trace_dhat=False`` skips the per-step path integral, which dominates
    the cost of an iteration when ``alpha_mode="full"``.
    """

    max_iters: int = 500
    tol: float = 1e-6
    jitter: float = None
    alpha_mode: str = "full"
    quadrature_nodes: int = 101
    record_thetas: bool = True
    trace_dhat: bool = True
    blowup_factor: float = 1e6

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError("max_iters must be at least 1")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.jitter is not None and self.jitter < 0:
            raise ConfigError("jitter must be nonnegative")
        if self.alpha_mode not in ALPHA_MODES:
            raise ConfigError(f"alpha_mode must be one of {ALPHA_MODES}")
        if self.quadrature_nodes < 3:
            raise ConfigError("quadrature_nodes must be at least 3")


@dataclass
class FixedPointTrace:
    thetas: list = field(default_factory=list)
    d_hats: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    jitters: list = field(default_factory=list)

    def to_dict(self):
        return {"d_hats": [float(v) for v in self.d_hats], "converged": self.converged,
                "iterations": self.iterations}


class _Problem:
    """Quantities that stay fixed during one fixed-point run."""

    def __init__(self, data, lsld, sigma_m, alpha_mode="full"):
        if lsld.train_y.shape != data.y.shape or not np.array_equal(lsld.train_y, data.y):
            raise DataError("the score model must be fitted on the regression data")
        if alpha_mode not in ALPHA_MODES:
            raise ConfigError(f"alpha_mode must be one of {ALPHA_MODES}")
        self.n = data.n
        self.y = data.y
        self.X = data.X
        self.sigma_m = float(sigma_m)
        self.Km = kernel.gaussian_gram(data.X, data.X, sigma_m)
        self.Kx = kernel.gaussian_gram(data.X, lsld.train_X, lsld.params.sigma_x)
        self.sigma_y = lsld.params.sigma_y
        self.lam = lsld.lam
        self.alphas = lsld.alphas if alpha_mode == "full" else np.zeros_like(lsld.alphas)
        self.lsld = lsld

    def t(self, f):
        return (f[:, None] - self.y[None, :]) ** 2 / (2.0 * self.sigma_y**2)

    def weights(self, theta):
        """Per-sample weights ``w_i`` of ``H`` and right-hand side ``v_i`` of ``h``."""
        f = self.Km @ theta
        t = self.t(f)
        n, lam, s2 = self.n, self.lam, self.sigma_y**2
        vp = kernel.varphi(t) * self.Kx
        w = vp.sum(axis=1) / (n * n * lam * s2)
        v = (kernel.phi(t) * self.Kx) @ self.alphas / n + vp @ self.y / (n * n * lam * s2)
        return w, v

    def H(self, theta):
        w, _ = self.weights(theta)
        H = (self.Km.T * w) @ self.Km
        return 0.5 * (H + H.T)

    def h(self, theta):
        _, v = self.weights(theta)
        return self.Km.T @ v

    def r_at(self, f):
        """Score estimate at ``(f_i, x_i)`` with the configured alpha mode."""
        t = self.t(f)
        diff = self.y[None, :] - f[:, None]
        inner = (self.alphas * kernel.phi(t)
                 + diff / (self.n * self.lam * self.sigma_y**2) * kernel.varphi(t))
        return np.sum(inner * self.Kx, axis=1)


def build_H_theta(theta, data, lsld, sigma_m):
    return _Problem(data, lsld, sigma_m).H(np.asarray(theta, dtype=float))


def build_h_theta(theta, data, lsld, sigma_m, alpha_mode="full"):
    return _Problem(data, lsld, sigma_m, alpha_mode).h(np.asarray(theta, dtype=float))


def plugin_gradient(theta, data, lsld, sigma_m, alpha_mode="full"):
    """``mean_i r(f(x_i), x_i) k_m(x_i)`` evaluated through the score model."""
    theta = np.asarray(theta, dtype=float)
    Km = kernel.gaussian_gram(data.X, data.X, sigma_m)
    f = Km @ theta
    if alpha_mode == "full":
        r = lsld.r(f, data.X)
    else:
        zeroed = type(lsld)(np.zeros_like(lsld.alphas), lsld.beta_const, lsld.train_y,
                            lsld.train_X, lsld.params, lsld.lam)
        r = zeroed.r(f, data.X)
    return Km.T @ r / data.n


def _resolve_jitter(H, jitter):
    if jitter is None:
        return 1e-8 * np.trace(H) / H.shape[0]
    return float(jitter)


def _solve_step(H, h, jitter, what):
    n = H.shape[0]
    A = H + jitter * np.eye(n) if jitter > 0 else H
    try:
        return spd_solve(A, h, what=what, rtol=1e-6)
    except NumericalError as exc:
        raise NumericalError(f"{exc} (jitter={jitter:g})", **exc.info) from exc


def _step(problem, theta, jitter):
    w, v = problem.weights(theta)
    H = (problem.Km.T * w) @ problem.Km
    H = 0.5 * (H + H.T)
    h = problem.Km.T @ v
    j = _resolve_jitter(H, jitter)
    return _solve_step(H, h, j, "fixed-point system"), j


def fixed_point_step(theta, data, lsld, config=None, sigma_m=None):
    """One update ``theta' = (H(theta) + jitter I)^{-1} h(theta)``."""
    config = config or DmrkConfig()
    if sigma_m is None:
        sigma_m = lsld.params.sigma_m
    problem = _Problem(data, lsld, sigma_m, config.alpha_mode)
    return _step(problem, np.asarray(theta, dtype=float), config.jitter)[0]


def _dhat(problem, theta1, theta2, nodes):
    f1 = problem.Km @ theta1
    f2 = problem.Km @ theta2
    n, lam = problem.n, problem.lam
    # derivative-of-kernel part in closed form
    beta_part = np.sum(problem.Kx * (kernel.phi(problem.t(f2)) - kernel.phi(problem.t(f1))))
    beta_part /= n * n * lam
    if not np.any(problem.alphas):
        return float(beta_part)
    df = f2 - f1
    ts = np.linspace(0.0, 1.0, nodes)
    vals = np.empty(nodes)
    for k, tk in enumerate(ts):
        tt = problem.t(f1 + tk * df)
        vals[k] = np.sum((kernel.phi(tt) * problem.Kx) @ problem.alphas * df) / n
    return float(beta_part + simpson(vals, x=ts))


def path_integral_estimate(theta1, theta2, data, lsld, sigma_m, quadrature_nodes=101,
                           alpha_mode="full"):
    """Line integral of the approximated gradient from ``theta1`` to ``theta2``.

    The derivative-of-kernel part is integrated exactly; the ``alpha`` part
    by composite Simpson quadrature with ``quadrature_nodes`` nodes.
    """
    if quadrature_nodes < 3:
        raise ConfigError("quadrature_nodes must be at least 3")
    theta1 = np.asarray(theta1, dtype=float)
    theta2 = np.asarray(theta2, dtype=float)
    if theta1.shape != theta2.shape:
        raise DataError("theta1 and theta2 differ in shape")
    if np.array_equal(theta1, theta2):
        return 0.0
    problem = _Problem(data, lsld, sigma_m, alpha_mode)
    return _dhat(problem, theta1, theta2, quadrature_nodes)


def path_integral_quadrature(theta1, theta2, data, lsld, sigma_m, nodes=1001, alpha_mode="full"):
    """Same quantity by brute-force Simpson over the full score estimate."""
    theta1 = np.asarray(theta1, dtype=float)
    theta2 = np.asarray(theta2, dtype=float)
    problem = _Problem(data, lsld, sigma_m, alpha_mode)
    f1 = problem.Km @ theta1
    df = problem.Km @ (theta2 - theta1)
    ts = np.linspace(0.0, 1.0, nodes)
    vals = np.array([np.mean(problem.r_at(f1 + t * df) * df) for t in ts])
    return float(simpson(vals, x=ts))


def run_fixed_point(step, dhat, theta0, config, label="DMR-K"):
    """Shared iteration driver for DMR-K and the KDE baseline.

    ``step(theta) -> (theta_next, jitter)``; ``dhat(theta, theta_next)`` is
    recorded per step when given.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    trace = FixedPointTrace()
    if config.record_thetas:
        trace.thetas.append(theta.copy())
    scale = max(np.max(np.abs(theta)), 1.0)
    for it in range(1, config.max_iters + 1):
        theta_next, j = step(theta)
        trace.iterations = it
        trace.jitters.append(j)
        if dhat is not None:
            trace.d_hats.append(dhat(theta, theta_next))
        if config.record_thetas:
            trace.thetas.append(theta_next.copy())
        if not np.all(np.isfinite(theta_next)) or np.max(np.abs(theta_next)) > config.blowup_factor * scale:
            raise NumericalError(
                f"{label} diverged at iteration {it}: |theta|_inf="
                f"{np.max(np.abs(theta_next)):.3g} (initial scale {scale:.3g})",
                iteration=it,
            )
        delta = np.max(np.abs(theta_next - theta))
        theta = theta_next
        if delta < config.tol:
            trace.converged = True
            break
    return theta, trace


def fit_dmrk(data, theta0, lsld, config=None, sigma_m=None):
    """Iterate the fixed-point update from ``theta0``.

    Returns the fitted :class:`DmrkModel` and a :class:`FixedPointTrace`
    with the path-integral estimate of every step.
    """
    config = config or DmrkConfig()
    if sigma_m is None:
        sigma_m = lsld.params.sigma_m
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.shape != (data.n,):
        raise DataError(f"theta0 must have length n={data.n}")
    problem = _Problem(data, lsld, sigma_m, config.alpha_mode)
    theta, trace = run_fixed_point(
        lambda th: _step(problem, th, config.jitter),
        (lambda a, b: _dhat(problem, a, b, config.quadrature_nodes)) if config.trace_dhat else None,
        theta0, config,
    )
    return DmrkModel(theta, float(sigma_m), data.X.copy()), trace
