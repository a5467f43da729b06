"""Neural modal regression with a learned score.

Two networks are trained with hand-written backpropagation and Adam:

* a score model ``r(y, x) = sum_k w_k exp(-(y - mu_k(x))**2 / (2 s_k**2))``
  whose centres ``mu_k`` share one sigmoid MLP trunk and whose widths
  ``s_k`` are fixed.  It is fitted by minimising the empirical Fisher
  objective ``mean(r**2 / 2 + dr/dy)``.  Being a sum of Gaussian bumps in
  ``y`` it vanishes as ``|y| -> inf`` whatever the parameters are.
* a ReLU regressor ``f(x)``, pretrained by LAD (or LS) and then moved
  along the stochastic ascent direction
  ``mean_b df/dtheta(x_b) * r(f(x_b), x_b)``.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from .data import make_rng
from .errors import ConfigError, DataError, ModalRegError, NumericalError

__all__ = [
    "Mlp",
    "ScoreNet",
    "AdamState",
    "TrainConfig",
    "StaleCacheError",
    "mlp_forward",
    "mlp_backward",
    "score_eval",
    "fisher_loss_and_grads",
    "adam_step",
    "train_score_net",
    "pretrain_regressor",
    "dmrnn_gradient",
    "fit_dmrnn",
    "default_regressor",
    "default_score_net",
]

ACTIVATIONS = ("relu", "sigmoid", "identity")


class StaleCacheError(ModalRegError, RuntimeError):
    """A forward cache was used after the network parameters changed."""


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return z


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0).astype(float)
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


class Mlp:
    """Fully connected network acting on row batches.

    ``params`` is the flat list ``[W_0, b_0, W_1, b_1, ...]`` with
    ``W_k`` of shape ``(fan_in, fan_out)``.
    """

    def __init__(self, sizes, activations, rng=None, params=None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ConfigError(f"invalid layer sizes {sizes}")
        if len(activations) != len(sizes) - 1:
            raise ConfigError("need one activation per layer")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {a!r}")
        self.sizes = sizes
        self.activations = list(activations)
        self._version = 0
        if params is not None:
            self.params = [np.array(p, dtype=float) for p in params]
            self._check_shapes()
            return
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = []
        for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], self.activations):
            if act == "relu":
                scale = np.sqrt(2.0 / fan_in)
            else:
                scale = np.sqrt(1.0 / fan_in)
            self.params.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            # a small positive bias keeps narrow ReLU layers from starting dead
            self.params.append(np.full(fan_out, 0.1 if act == "relu" else 0.0))

    def _check_shapes(self):
        expected = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            expected += [(fan_in, fan_out), (fan_out,)]
        if [p.shape for p in self.params] != expected:
            raise ConfigError("parameter shapes do not match the layer sizes")
        if not all(np.all(np.isfinite(p)) for p in self.params):
            raise NumericalError("non-finite network parameters")

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    def touch(self):
        """Mark the parameters as modified; invalidates earlier caches."""
        self._version += 1

    def forward(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.sizes[0]:
            raise DataError(f"input dimension {X.shape[1]} != {self.sizes[0]}")
        inputs, pre = [], []
        a = X
        for k in range(self.n_layers):
            W, b = self.params[2 * k], self.params[2 * k + 1]
            z = a @ W + b
            inputs.append(a)
            pre.append(z)
            a = _act(self.activations[k], z)
        cache = {"inputs": inputs, "pre": pre, "out": a, "version": self._version}
        return a, cache

    def __call__(self, X):
        return self.forward(X)[0]

    def backward(self, cache, out_grad, want_input_grad=False):
        """Gradients of ``sum(out * out_grad)`` w.r.t. every parameter."""
        if cache.get("version") != self._version:
            raise StaleCacheError("forward cache is stale; re-run forward()")
        delta = np.asarray(out_grad, dtype=float)
        if delta.shape != cache["out"].shape:
            raise DataError(f"out_grad shape {delta.shape} != output {cache['out'].shape}")
        grads = [None] * len(self.params)
        for k in reversed(range(self.n_layers)):
            z = cache["pre"][k]
            a = cache["out"] if k == self.n_layers - 1 else cache["inputs"][k + 1]
            delta = delta * _act_grad(self.activations[k], z, a)
            grads[2 * k] = cache["inputs"][k].T @ delta
            grads[2 * k + 1] = delta.sum(axis=0)
            delta = delta @ self.params[2 * k].T
        if want_input_grad:
            return grads, delta
        return grads

    def to_dict(self):
        return {"kind": "mlp", "sizes": self.sizes, "activations": self.activations,
                "shapes": [list(p.shape) for p in self.params],
                "params": [p.ravel().tolist() for p in self.params]}

    @classmethod
    def from_dict(cls, d):
        params = [np.array(v, dtype=float).reshape(s) for v, s in zip(d["params"], d["shapes"])]
        return cls(d["sizes"], d["activations"], params=params)

    def predict(self, X):
        return self(X)[:, 0]


def mlp_forward(net, x):
    return net.forward(x)


def mlp_backward(net, cache, out_grad):
    return net.backward(cache, out_grad)


class ScoreNet:
    """Sum of ``K`` Gaussian bumps in ``y`` with input-dependent centres."""

    def __init__(self, trunk, w, sigmas):
        self.trunk = trunk
        self.w = np.array(w, dtype=float)
        sigmas = np.array(sigmas, dtype=float)
        if sigmas.shape != self.w.shape or trunk.sizes[-1] != self.w.size:
            raise ConfigError("bump weights, widths and trunk output must all have length K")
        if np.any(sigmas <= 0):
            raise ConfigError("bump widths must be positive")
        sigmas.setflags(write=False)
        self._sigmas = sigmas

    @property
    def sigmas(self):
        return self._sigmas

    @property
    def K(self):
        return self.w.size

    @property
    def params(self):
        return self.trunk.params + [self.w]

    def touch(self):
        self.trunk.touch()

    def _bumps(self, y, X):
        y = np.atleast_1d(np.asarray(y, dtype=float)).ravel()
        mu, cache = self.trunk.forward(X)
        if mu.shape[0] != y.size:
            raise DataError("y and X have different numbers of rows")
        u = (y[:, None] - mu) / self.sigmas**2
        e = np.exp(-((y[:, None] - mu) ** 2) / (2.0 * self.sigmas**2))
        return u, e, cache

    def evaluate(self, y, X):
        """Return ``(r, dr/dy)`` at the rows ``(y[b], X[b])``."""
        u, e, _ = self._bumps(y, X)
        r = e @ self.w
        dr = -(u * e) @ self.w
        return r, dr

    def r(self, y, X):
        return self.evaluate(y, X)[0]

    def fisher_loss_and_grads(self, y, X):
        u, e, cache = self._bumps(y, X)
        B = u.shape[0]
        r = e @ self.w
        dr = -(u * e) @ self.w
        loss = float(np.mean(0.5 * r**2 + dr))
        grad_w = ((r[:, None] - u) * e).sum(axis=0) / B
        grad_mu = self.w * e * (r[:, None] * u + 1.0 / self.sigmas**2 - u**2) / B
        grads = self.trunk.backward(cache, grad_mu)
        return loss, grads + [grad_w]

    def to_dict(self):
        return {"kind": "scorenet", "trunk": self.trunk.to_dict(), "w": self.w.tolist(),
                "sigmas": self.sigmas.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(Mlp.from_dict(d["trunk"]), d["w"], d["sigmas"])


def score_eval(net, y, x):
    return net.evaluate(y, x)


def fisher_loss_and_grads(net, y, X):
    return net.fisher_loss_and_grads(y, X)


@dataclass
class AdamState:
    m: list
    v: list
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0

    @classmethod
    def for_params(cls, params, lr=1e-3, weight_decay=0.0, **kw):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                   lr=lr, weight_decay=weight_decay, **kw)


def adam_step(params, grads, state, direction="descent"):
    """In-place bias-corrected Adam update with decoupled weight decay.

    ``direction="ascent"`` moves along ``+grads``; the decay always
    shrinks parameters towards zero.
    """
    if direction not in ("descent", "ascent"):
        raise ConfigError("direction must be 'descent' or 'ascent'")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DataError("params, grads and optimiser state disagree in length")
    sign = -1.0 if direction == "descent" else 1.0
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise DataError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p += sign * state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay:
            p -= state.lr * state.weight_decay * p
    return params


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    pretrain: str = "lad"
    weight_decay: float = 1e-4
    n_bumps: int = None
    holdout_fraction: float = 0.2
    hidden: tuple = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be at least 1")
        if self.pretrain not in ("lad", "ls", "none"):
            raise ConfigError("pretrain must be 'lad', 'ls' or 'none'")

    def to_dict(self):
        return asdict(self)


def default_regressor(d, rng, hidden=None):
    """ReLU regressor with hidden widths ``(2d, d)`` unless overridden."""
    h1, h2 = hidden if hidden is not None else (2 * d, d)
    return Mlp([d, h1, h2, 1], ["relu", "relu", "identity"], rng)


def default_score_net(d, rng, n_bumps=None):
    K = n_bumps if n_bumps is not None else (50 if d < 30 else 100)
    trunk = Mlp([d, 2 * K, K, K], ["sigmoid", "sigmoid", "identity"], rng)
    # spread the initial centres over the standardised output range
    trunk.params[-1][:] = np.linspace(-2.0, 2.0, K)
    w = rng.normal(0.0, 0.01, size=K)
    sigmas = np.logspace(0.0, 1.0, K)
    return ScoreNet(trunk, w, sigmas)


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield perm[s:s + batch_size]


def _check_finite(value, stage, epoch, batch):
    if not np.isfinite(value):
        raise NumericalError(f"{stage}: non-finite loss at epoch {epoch}, batch {batch}",
                             epoch=epoch, batch=batch)


def train_score_net(data, net, config, adam=None, log=None):
    """Fit the score model by minibatch Adam on the Fisher objective.

    A held-out fraction of the data (``config.holdout_fraction``) is kept
    aside and its loss appended to ``log`` once per epoch.
    """
    rng = make_rng(config.seed, "score-net")
    n = data.n
    perm = rng.permutation(n)
    n_hold = int(round(config.holdout_fraction * n)) if n >= 5 else 0
    hold, fit_idx = perm[:n_hold], perm[n_hold:]
    Xf, yf = data.X[fit_idx], data.y[fit_idx]
    adam = adam or AdamState.for_params(net.params, config.lr, config.weight_decay)
    log = log if log is not None else []
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for b, idx in enumerate(_batches(fit_idx.size, config.batch_size, rng)):
            loss, grads = net.fisher_loss_and_grads(yf[idx], Xf[idx])
            _check_finite(loss, "score training", epoch, b)
            adam_step(net.params, grads, adam, "descent")
            net.touch()
            total += loss * idx.size
            count += idx.size
        rec = {"stage": "score", "epoch": epoch, "loss": total / count}
        if n_hold:
            r, dr = net.evaluate(data.y[hold], data.X[hold])
            rec["heldout_loss"] = float(np.mean(0.5 * r**2 + dr))
        log.append(rec)
    return net


def pretrain_regressor(data, net, config, adam=None, loss="lad", log=None):
    """Minibatch Adam on the mean absolute (``lad``) or squared (``ls``) error."""
    if loss not in ("lad", "ls"):
        raise ConfigError("loss must be 'lad' or 'ls'")
    rng = make_rng(config.seed, f"pretrain-{loss}")
    adam = adam or AdamState.for_params(net.params, config.lr, config.weight_decay)
    log = log if log is not None else []
    for epoch in range(config.epochs):
        total = 0.0
        for b, idx in enumerate(_batches(data.n, config.batch_size, rng)):
            out, cache = net.forward(data.X[idx])
            resid = out[:, 0] - data.y[idx]
            B = idx.size
            if loss == "lad":
                value = float(np.mean(np.abs(resid)))
                g = np.sign(resid) / B
            else:
                value = float(np.mean(resid**2))
                g = 2.0 * resid / B
            _check_finite(value, f"{loss} pretraining", epoch, b)
            grads = net.backward(cache, g[:, None])
            adam_step(net.params, grads, adam, "descent")
            net.touch()
            total += value * B
        log.append({"stage": f"pretrain-{loss}", "epoch": epoch, "loss": total / data.n})
    return net


def dmrnn_gradient(X_batch, f_net, score):
    """Minibatch ascent direction ``mean_b df/dtheta(x_b) r(f(x_b), x_b)``."""
    X_batch = np.asarray(X_batch, dtype=float)
    out, cache = f_net.forward(X_batch)
    if out.shape[1] != 1:
        raise DataError("regressor must have a single output")
    r = score.r(out[:, 0], X_batch)
    return f_net.backward(cache, r[:, None] / X_batch.shape[0])


def fit_dmrnn(data, config=None, log=None, f_net=None, score=None):
    """Pretrain, fit the score model, then run Adam ascent on the regressor.

    ``data`` is expected to be standardised.  Returns ``(f_net, score)``.
    """
    config = config or TrainConfig()
    log = log if log is not None else []
    rng = make_rng(config.seed, "init")
    if f_net is None:
        f_net = default_regressor(data.d, rng, config.hidden)
    if score is None:
        score = default_score_net(data.d, rng, config.n_bumps)
    if config.pretrain != "none":
        pretrain_regressor(data, f_net, config, loss=config.pretrain, log=log)
    train_score_net(data, score, config, log=log)
    adam = AdamState.for_params(f_net.params, config.lr, config.weight_decay)
    brng = make_rng(config.seed, "dmrnn")
    for epoch in range(config.epochs):
        gnorm = 0.0
        for b, idx in enumerate(_batches(data.n, config.batch_size, brng)):
            grads = dmrnn_gradient(data.X[idx], f_net, score)
            gsq = sum(float(np.sum(g * g)) for g in grads)
            _check_finite(gsq, "DMR-NN ascent", epoch, b)
            adam_step(f_net.params, grads, adam, "ascent")
            f_net.touch()
            gnorm += gsq
        log.append({"stage": "dmrnn", "epoch": epoch, "grad_sq": gnorm})
    return f_net, score


def write_log(records, path):
    """Training log as one JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
