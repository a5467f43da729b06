"""End-to-end fitting recipes shared by the command line and the benchmark.

Each recipe takes a training :class:`~modalreg.data.Dataset` and returns
``(model, log)`` where ``model.predict`` maps raw inputs to raw outputs and
``log`` is a JSON-ready record of every selection the recipe made.
Synthetic data are fitted in their own units; file data and every neural
method are fitted on standardised copies.
"""

import warnings
from contextlib import contextmanager
from dataclasses import asdict, dataclass, fields


from . import baselines, dmrk, kernel, lsld, nn
from .data import Standardizer, make_rng
from .errors import ConfigError, ModalRegError
from .io import NeuralModel, StandardizedModel

METHODS = ("dmrk", "dmrnn", "krr", "lad", "mrkde")
NEURAL_BASELINES = ("nn_ls", "nn_lad")
ALL_METHODS = METHODS + NEURAL_BASELINES


@dataclass
class FitOptions:
    """Hyperparameter overrides; ``None`` keeps the documented default."""

    lam: float = None
    sigma_y: float = None
    sigma_x: float = None
    sigma_m: float = None
    h_y: float = None
    h_x: float = None
    init: str = "lad"
    max_iters: int = 500
    tol: float = 1e-6
    jitter: float = None
    alpha_mode: str = "full"
    trace_dhat: bool = True
    folds: int = 5
    epochs: int = 500
    batch_size: int = 128
    lr: float = 1e-3
    weight_decay: float = 1e-4
    hidden: tuple = None
    standardize: bool = None

    def __post_init__(self):
        if self.init not in ("lad", "krr"):
            raise ConfigError("init must be 'lad' or 'krr'")

    @classmethod
    def from_mapping(cls, values):
        """Build from string or typed values, ignoring ``None`` entries."""
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            if raw is None:
                continue
            key = key.replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown hyperparameter {key!r}")
            kw[key] = _coerce(key, raw, cls.__dataclass_fields__[key].default)
        return cls(**kw)

    def to_dict(self):
        return asdict(self)


_INT_KEYS = {"max_iters", "folds", "epochs", "batch_size"}
_BOOL_KEYS = {"trace_dhat", "standardize"}
_STR_KEYS = {"init", "alpha_mode"}


def _coerce(key, raw, default):
    if not isinstance(raw, str):
        return raw
    try:
        if key in _STR_KEYS:
            return raw
        if key in _BOOL_KEYS:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if key in _INT_KEYS:
            return int(raw)
        if key == "hidden":
            return tuple(int(v) for v in raw.replace(",", " ").split())
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


@contextmanager
def stage(name):
    """Prefix library errors raised inside the block with a stage name."""
    try:
        yield
    except ModalRegError as exc:
        if not getattr(exc, "stage", None):
            exc.stage = name
            exc.args = (f"{name}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise


def _regression_width(train, opts):
    if opts.sigma_m is not None:
        return float(opts.sigma_m)
    return kernel.median_trick(train.X)


def _initial_fit(train, sigma_m, opts, seed, cache, log):
    key = ("init", opts.init, sigma_m)
    if cache is not None and key in cache:
        model = cache[key]
    else:
        with stage(f"{opts.init} initialisation"):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                if opts.init == "lad":
                    model = baselines.fit_lad(train, sigma_m, folds=opts.folds, seed=seed)
                else:
                    model = baselines.fit_krr(train, sigma_m, folds=opts.folds, seed=seed)
        if cache is not None:
            cache[key] = model
    log["init"] = {"method": opts.init, "lambda": model.lambda_reg,
                   "converged": bool(model.converged)}
    return model


def _fit_krr(train, seed, opts, cache, log):
    sm = _regression_width(train, opts)
    with stage("krr"):
        model = baselines.fit_krr(train, sm, folds=opts.folds, seed=seed)
    log.update(sigma_m=sm, lambda_reg=model.lambda_reg, cv_scores=_keyed(model.cv_scores))
    if cache is not None:
        cache[("init", "krr", sm)] = model
    return model


def _fit_lad(train, seed, opts, cache, log):
    sm = _regression_width(train, opts)
    opts_lad = FitOptions(**{**opts.to_dict(), "init": "lad"})
    model = _initial_fit(train, sm, opts_lad, seed, cache, log)
    log.update(sigma_m=sm, lambda_reg=model.lambda_reg, converged=bool(model.converged),
               cv_scores=_keyed(model.cv_scores))
    del log["init"]
    return model


def _dmrk_config(opts):
    return dmrk.DmrkConfig(max_iters=opts.max_iters, tol=opts.tol, jitter=opts.jitter,
                           alpha_mode=opts.alpha_mode, record_thetas=False,
                           trace_dhat=opts.trace_dhat)


def _fit_dmrk(train, seed, opts, cache, log):
    sm = _regression_width(train, opts)
    with stage("width selection"):
        if opts.sigma_y is not None and opts.sigma_x is not None:
            grid = lsld.ModelGrid([opts.sigma_y], [opts.sigma_x], lam=opts.lam, sigma_m=sm)
        else:
            grid = lsld.default_grid(train, sigma_m=sm)
            grid.lam = opts.lam
            if opts.sigma_y is not None:
                grid.sigma_y_candidates = [opts.sigma_y]
            if opts.sigma_x is not None:
                grid.sigma_x_candidates = [opts.sigma_x]
        params, score_model = lsld.select_model(train, grid)
    log.update(sigma_m=sm, sigma_y=params.sigma_y, sigma_x=params.sigma_x,
               lam=score_model.lam,
               loocv=[[sy, sx, v] for (sy, sx), v in sorted(grid.cells.items())])
    init = _initial_fit(train, sm, opts, seed, cache, log)
    with stage("fixed-point iteration"):
        model, trace = dmrk.fit_dmrk(train, init.theta, score_model, _dmrk_config(opts), sm)
    log["trace"] = trace.to_dict()
    return model


def _fit_mrkde(train, seed, opts, cache, log):
    sm = _regression_width(train, opts)
    with stage("bandwidth selection"):
        hys, hxs = baselines.default_kde_grid(train)
        if opts.h_y is not None:
            hys = [opts.h_y]
        if opts.h_x is not None:
            hxs = [opts.h_x]
        h_y, h_x = baselines.select_kde_bandwidths(train, (hys, hxs))
    log.update(sigma_m=sm, h_y=h_y, h_x=h_x)
    kde = baselines.KdeModel(h_y, h_x, train)
    init = _initial_fit(train, sm, opts, seed, cache, log)
    with stage("fixed-point iteration"):
        model, trace = baselines.fit_mrkde(train, init.theta, kde, sm, _dmrk_config(opts))
    log["trace"] = trace.to_dict()
    return model


def _train_config(opts, seed, pretrain):
    return nn.TrainConfig(epochs=opts.epochs, batch_size=opts.batch_size, lr=opts.lr,
                          seed=seed, pretrain=pretrain, weight_decay=opts.weight_decay,
                          hidden=opts.hidden)


def _fit_dmrnn(train, seed, opts, cache, log):
    records = []
    with stage("dmrnn"):
        f_net, score = nn.fit_dmrnn(train, _train_config(opts, seed, "lad"), log=records)
    log["training"] = records
    return NeuralModel(f_net, score, "dmrnn")


def _fit_nn_baseline(loss):
    def fit(train, seed, opts, cache, log):
        records = []
        config = _train_config(opts, seed, loss)
        with stage(f"nn {loss}"):
            f_net = nn.default_regressor(train.d, make_rng(seed, "init"), opts.hidden)
            nn.pretrain_regressor(train, f_net, config, loss=loss, log=records)
        log["training"] = records
        return NeuralModel(f_net, None, f"nn_{loss}")
    return fit


_RECIPES = {
    "krr": _fit_krr,
    "lad": _fit_lad,
    "dmrk": _fit_dmrk,
    "mrkde": _fit_mrkde,
    "dmrnn": _fit_dmrnn,
    "nn_ls": _fit_nn_baseline("ls"),
    "nn_lad": _fit_nn_baseline("lad"),
}


def _keyed(d):
    return [[k, v] for k, v in sorted(d.items())]


def uses_standardization(method, train, opts):
    if method in ("dmrnn",) + NEURAL_BASELINES:
        return True
    if opts.standardize is not None:
        return bool(opts.standardize)
    return train.meta.get("source") != "synthetic"


def fit_method(method, train, seed=0, options=None, cache=None):
    """Fit ``method`` on ``train``; returns ``(model, log)``.

    ``cache`` is an optional dict shared between methods fitted on the same
    training set, so the LAD fit used as a starting point is computed once.
    """
    if method not in _RECIPES:
        raise ConfigError(f"unknown method {method!r}; choose from {ALL_METHODS}")
    opts = options or FitOptions()
    log = {"method": method, "seed": int(seed), "n": train.n, "d": train.d}
    standardize = uses_standardization(method, train, opts)
    log["standardized"] = standardize
    if standardize:
        with stage("standardisation"):
            scaler = Standardizer.fit(train)
        work = scaler.apply(train)
        if cache is not None:
            cache = cache.setdefault("standardized", {})
    else:
        work = train
    model = _RECIPES[method](work, seed, opts, cache, log)
    if standardize:
        model = StandardizedModel(model, scaler)
    return model, log


def predict_standardized(model, X):
    """Predictions in the standardised output units of a wrapped model."""
    if isinstance(model, StandardizedModel):
        return model.predict_standardized(X)
    return model.predict(X)
