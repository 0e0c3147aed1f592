"""Embedding + MLP click-through model with manual backprop and Adam."""
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._random import make_rng

LOSS_CLAMP = 1e-7
CHECKPOINT_VERSION = 1


def logloss(yhat, y, delta=LOSS_CLAMP):
    """Per-sample binary cross-entropy against (possibly soft) targets."""
    yhat = np.clip(np.asarray(yhat, dtype=np.float64), delta, 1.0 - delta)
    y = np.asarray(y, dtype=np.float64)
    return -y * np.log(yhat) - (1.0 - y) * np.log1p(-yhat)


@dataclass
class DropoutConfig:
    rate: float = 0.1
    enabled: bool = False

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")


@dataclass
class ForwardCache:
    x_global: np.ndarray
    inputs: list
    pre: list
    masks: list
    logits: np.ndarray

    @property
    def last_hidden(self):
        return self.inputs[-1]


class CTRNet:
    """Field embeddings concatenated into a ReLU MLP with a sigmoid output.

    Parameters are kept in ``self.params`` (a dict of float64 arrays):
    ``emb``, ``W0``/``b0`` ... for hidden layers, then ``w_out``/``b_out``.
    Dropout, when active, acts on every hidden activation.
    """

    def __init__(self, vocab_sizes, embed_dim=10, hidden=(100, 100, 100), dropout=0.1, seed=0, params=None):
        self.vocab_sizes = [int(v) for v in vocab_sizes]
        self.embed_dim = int(embed_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.dropout = float(dropout)
        self.offsets = np.concatenate([[0], np.cumsum(self.vocab_sizes)[:-1]]).astype(np.int64)
        self.params = self._init_params(seed) if params is None else {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        self._check_shapes()

    @property
    def n_fields(self):
        return len(self.vocab_sizes)

    @property
    def n_hidden(self):
        return len(self.hidden)

    @property
    def last_width(self):
        return self.hidden[-1] if self.hidden else self.n_fields * self.embed_dim

    @property
    def param_names(self):
        names = ["emb"]
        for i in range(self.n_hidden):
            names += [f"W{i}", f"b{i}"]
        return names + ["w_out", "b_out"]

    def _shapes(self):
        shapes = {"emb": (sum(self.vocab_sizes), self.embed_dim)}
        width = self.n_fields * self.embed_dim
        for i, h in enumerate(self.hidden):
            shapes[f"W{i}"] = (width, h)
            shapes[f"b{i}"] = (h,)
            width = h
        shapes["w_out"] = (width,)
        shapes["b_out"] = (1,)
        return shapes

    def _init_params(self, seed):
        rng = make_rng(seed, "model", "init")
        params = {}
        for name, shape in self._shapes().items():
            if name == "emb":
                params[name] = rng.uniform(-0.01, 0.01, shape)
            elif name.startswith("b"):
                params[name] = np.zeros(shape)
            else:
                bound = np.sqrt(6.0 / shape[0]) if name.startswith("W") else 1.0 / np.sqrt(shape[0])
                params[name] = rng.uniform(-bound, bound, shape)
        return params

    def _check_shapes(self):
        for name, shape in self._shapes().items():
            if name not in self.params or self.params[name].shape != shape:
                raise ValueError(f"parameter {name} must have shape {shape}")

    def copy(self):
        return CTRNet(self.vocab_sizes, self.embed_dim, self.hidden, self.dropout, params=self.params)

    def zeros_like_params(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, X, dropout=None, rng=None):
        """Return ``(yhat, cache)`` for an ``(n, n_fields)`` id matrix.

        ``dropout`` is a :class:`DropoutConfig`; ``None`` or disabled means a
        deterministic pass.
        """
        X = np.asarray(X, dtype=np.int64)
        if X.ndim != 2 or X.shape[1] != self.n_fields:
            raise ValueError(f"expected features of shape (n, {self.n_fields}), got {X.shape}")
        if X.size and (X.min() < 0 or (X >= np.asarray(self.vocab_sizes)).any()):
            raise ValueError("feature id outside its field vocabulary")
        p = dropout.rate if dropout is not None and dropout.enabled else 0.0
        if p > 0 and rng is None:
            raise ValueError("dropout needs an rng")
        x_global = X + self.offsets
        a = self.params["emb"][x_global].reshape(len(X), -1)
        inputs, pre, masks = [a], [], []
        for i in range(self.n_hidden):
            z = a @ self.params[f"W{i}"] + self.params[f"b{i}"]
            a = np.maximum(z, 0.0)
            if p > 0:
                mask = (rng.random(a.shape) >= p) / (1.0 - p)
                a = a * mask
            else:
                mask = None
            pre.append(z)
            masks.append(mask)
            inputs.append(a)
        logits = a @ self.params["w_out"] + self.params["b_out"][0]
        return expit(logits), ForwardCache(x_global, inputs, pre, masks, logits)

    def predict_proba(self, X, batch_size=65536):
        X = np.asarray(X, dtype=np.int64)
        out = np.empty(len(X))
        for start in range(0, len(X), batch_size):
            out[start:start + batch_size] = self.forward(X[start:start + batch_size])[0]
        return out

    def backward(self, cache, yhat, targets, weights=None):
        """Gradient of ``mean_i(weight_i * logloss_i)`` w.r.t. every parameter.

        The sigmoid/log-loss pair gives ``dL/dlogit = yhat - target``. Only
        embedding rows touched by the batch get nonzero gradient.
        """
        n = len(yhat)
        if len(cache.logits) != n:
            raise ValueError("cache does not match this batch")
        w = np.ones(n) if weights is None else np.broadcast_to(np.asarray(weights, dtype=np.float64), (n,))
        dz = w * (np.asarray(yhat) - np.asarray(targets, dtype=np.float64)) / max(n, 1)
        grads = {}
        a = cache.inputs[-1]
        grads["w_out"] = a.T @ dz
        grads["b_out"] = np.array([dz.sum()])
        da = np.outer(dz, self.params["w_out"])
        for i in reversed(range(self.n_hidden)):
            if cache.masks[i] is not None:
                da = da * cache.masks[i]
            dzl = da * (cache.pre[i] > 0)
            grads[f"W{i}"] = cache.inputs[i].T @ dzl
            grads[f"b{i}"] = dzl.sum(axis=0)
            da = dzl @ self.params[f"W{i}"].T
        g_emb = np.zeros_like(self.params["emb"])
        np.add.at(g_emb, cache.x_global.ravel(), da.reshape(-1, self.embed_dim))
        grads["emb"] = g_emb
        return grads


@dataclass
class AdamState:
    """Adam moments for every parameter plus the step counter ``t``."""

    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    lr: float = 0.01
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params, **kwargs):
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, **kwargs)

    def copy(self):
        return AdamState({k: a.copy() for k, a in self.m.items()}, {k: a.copy() for k, a in self.v.items()},
                         self.t, self.beta1, self.beta2, self.lr, self.eps)


def adam_step(params, state, grads):
    """Apply one bias-corrected Adam update in place; returns ``(params, state)``."""
    if state.t < 0:
        raise ValueError("Adam step counter must be >= 0")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def train_epochs(net, X, targets, weights=None, epochs=1, batch_size=256, seed=0, state=None,
                 label_fn=None, on_step=None, lr=0.01, dropout=True):
    """Minibatch Adam training on weighted log loss.

    ``label_fn(yhat, targets) -> soft targets`` rewrites the targets of each
    minibatch from the current prediction (treated as a constant).
    ``on_step(grads)`` is called after every optimizer step.
    Returns ``(net, state)``; ``net`` is updated in place.
    """
    X = np.asarray(X, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)
    n = len(X)
    if n == 0:
        raise ValueError("cannot train on empty data")
    weights = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if state is None:
        state = AdamState.zeros(net.params, lr=lr)
    drop = DropoutConfig(net.dropout, enabled=dropout and net.dropout > 0)
    for epoch in range(epochs):
        rng = make_rng(seed, "train", epoch)
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            yhat, cache = net.forward(X[idx], dropout=drop, rng=rng)
            y = targets[idx] if label_fn is None else label_fn(yhat, targets[idx])
            grads = net.backward(cache, yhat, y, weights[idx])
            adam_step(net.params, state, grads)
            if on_step is not None:
                on_step(grads)
    return net, state


def save_checkpoint(path, net, state=None):
    """Write shapes, flat parameter arrays and Adam state to an ``.npz`` file."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "vocab_sizes": net.vocab_sizes,
        "embed_dim": net.embed_dim,
        "hidden": list(net.hidden),
        "dropout": net.dropout,
        "shapes": {k: list(v.shape) for k, v in net.params.items()},
        "adam": None if state is None else {
            "t": state.t, "beta1": state.beta1, "beta2": state.beta2, "lr": state.lr, "eps": state.eps,
        },
    }
    arrays = {f"param/{k}": v.ravel() for k, v in net.params.items()}
    if state is not None:
        arrays.update({f"adam_m/{k}": v.ravel() for k, v in state.m.items()})
        arrays.update({f"adam_v/{k}": v.ravel() for k, v in state.v.items()})
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with Path(path).open("wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(net, state_or_None)``."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(data["meta"].tobytes().decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        shapes = meta["shapes"]
        params = {k: data[f"param/{k}"].reshape(shapes[k]) for k in shapes}
        net = CTRNet(meta["vocab_sizes"], meta["embed_dim"], meta["hidden"], meta["dropout"], params=params)
        state = None
        if meta["adam"] is not None:
            state = AdamState({k: data[f"adam_m/{k}"].reshape(shapes[k]).copy() for k in shapes},
                              {k: data[f"adam_v/{k}"].reshape(shapes[k]).copy() for k in shapes},
                              **meta["adam"])
    return net, state


class CTRClassifier(ClassifierMixin, BaseEstimator):
    """Scikit-learn wrapper around :class:`CTRNet`.

    ``X`` is an integer matrix of per-field ids. ``y`` may hold soft labels
    in ``[0, 1]``; ``sample_weight`` scales each sample's loss.

    Parameters
    ----------
    vocab_sizes : list of int, optional
        Per-field vocabulary sizes. Inferred as ``X.max(axis=0) + 1`` if omitted.
    embed_dim : int, default=10
    hidden : tuple of int, default=(100, 100, 100)
    dropout : float, default=0.1
    learning_rate : float, default=0.01
    batch_size : int, default=8192
    epochs : int, default=1
    random_state : int, default=0
    """

    def __init__(self, vocab_sizes=None, embed_dim=10, hidden=(100, 100, 100), dropout=0.1,
                 learning_rate=0.01, batch_size=8192, epochs=1, random_state=0):
        self.vocab_sizes = vocab_sizes
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.random_state = random_state

    def fit(self, X, y, sample_weight=None):
        X = check_array(X, dtype=np.int64)
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (len(X),) or (y < 0).any() or (y > 1).any():
            raise ValueError("y must be a vector of labels in [0, 1]")
        sizes = self.vocab_sizes if self.vocab_sizes is not None else (X.max(axis=0) + 1).tolist()
        self.net_ = CTRNet(sizes, self.embed_dim, self.hidden, self.dropout, seed=self.random_state)
        self.net_, self.adam_ = train_epochs(self.net_, X, y, sample_weight, epochs=self.epochs,
                                             batch_size=self.batch_size, seed=self.random_state,
                                             lr=self.learning_rate)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "net_")
        p = self.net_.predict_proba(check_array(X, dtype=np.int64))
        return np.column_stack([1.0 - p, p])

    def decision_function(self, X):
        check_is_fitted(self, "net_")
        p = self.net_.predict_proba(check_array(X, dtype=np.int64))
        return np.log(np.clip(p, LOSS_CLAMP, None)) - np.log1p(-np.clip(p, None, 1 - LOSS_CLAMP))

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)
