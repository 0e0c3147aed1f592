"""Shared oracles for the test suite."""
import numpy as np

from ctrcoreset.gradfeat import last_layer_gradient
from ctrcoreset.model import CTRNet

FD_STEP = 1e-4


def mean_loss(net, X, y, w):
    # log loss written in logit space so saturated sigmoids keep full precision
    _, cache = net.forward(X)
    z = cache.logits
    return float(np.mean(w * (np.logaddexp(0.0, z) - y * z)))


def toy_problem(seed, kink_margin=1e-3, max_tries=50):
    """Small random net and batch with every ReLU input away from its kink."""
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        fields = int(rng.integers(1, 4))
        sizes = rng.integers(2, 6, fields).tolist()
        hidden = tuple(rng.integers(2, 6, int(rng.integers(1, 3))).tolist())
        net = CTRNet(sizes, embed_dim=int(rng.integers(1, 4)), hidden=hidden, dropout=0.0,
                     seed=int(rng.integers(1 << 30)))
        for name in net.params:
            net.params[name] = rng.normal(0.0, 0.8, net.params[name].shape)
        n = int(rng.integers(1, 6))
        X = np.column_stack([rng.integers(0, s, n) for s in sizes])
        y = rng.uniform(0.0, 1.0, n)
        w = rng.uniform(0.2, 2.0, n)
        _, cache = net.forward(X)
        if all(np.abs(z).min() > kink_margin for z in cache.pre):
            return net, X, y, w
    raise RuntimeError("no kink-free toy problem found")


def relative_error(analytic, numeric, abs_floor=1e-7):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    near_zero = scale < abs_floor
    err = np.where(near_zero, 0.0, diff / np.where(near_zero, 1.0, scale))
    return float(err.max(initial=0.0)), float(diff[near_zero].max(initial=0.0))


def fd_full_gradient(net, X, y, w, h=FD_STEP):
    grads = {}
    for name, p in net.params.items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = mean_loss(net, X, y, w)
            flat[i] = old - h
            down = mean_loss(net, X, y, w)
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        grads[name] = g
    return grads


def fd_last_layer_per_sample(net, X, y, h=FD_STEP):
    """Per-sample derivative of the unweighted loss w.r.t. ``[w_out; b_out]``."""
    out = np.zeros((len(X), net.last_width + 1))
    for r in range(len(X)):
        xr, yr, one = X[r:r + 1], y[r:r + 1], np.ones(1)
        for j in range(net.last_width + 1):
            name, idx = ("w_out", j) if j < net.last_width else ("b_out", 0)
            p = net.params[name]
            old = p[idx]
            p[idx] = old + h
            up = mean_loss(net, xr, yr, one)
            p[idx] = old - h
            down = mean_loss(net, xr, yr, one)
            p[idx] = old
            out[r, j] = (up - down) / (2 * h)
    return out


def check_gradients(seed):
    """Max relative errors ``(full_backprop, last_layer)`` against central differences."""
    net, X, y, w = toy_problem(seed)
    yhat, cache = net.forward(X)
    analytic = net.backward(cache, yhat, y, w)
    numeric = fd_full_gradient(net, X, y, w)
    full = [relative_error(analytic[k], numeric[k]) for k in net.params]
    last = relative_error(last_layer_gradient(net, X, y), fd_last_layer_per_sample(net, X, y))
    return max(e for e, _ in full), max(a for _, a in full), last[0], last[1]


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
