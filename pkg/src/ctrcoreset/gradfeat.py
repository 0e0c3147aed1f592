"""Per-sample final-layer gradients and their Adam-adjusted form.

For a sigmoid output with log loss the final-layer gradient of sample i is
``(yhat_i - y*_i) * [h_i; 1]`` where ``h_i`` is the last hidden activation.
"""
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class MomentState:
    """Adam moments restricted to the final layer (``w_out`` then ``b_out``).

    ``m`` and ``v`` hold the moments *before* step ``t``; ``t`` is the step
    a hypothetical update would take, so it starts at 1.
    """

    m: np.ndarray
    v: np.ndarray
    t: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, dim, **kwargs):
        return cls(np.zeros(dim), np.zeros(dim), **kwargs)

    @classmethod
    def from_adam(cls, state):
        """Snapshot the final-layer block of a trainer's :class:`AdamState`."""
        return cls(
            np.concatenate([state.m["w_out"], state.m["b_out"]]),
            np.concatenate([state.v["w_out"], state.v["b_out"]]),
            t=state.t + 1, beta1=state.beta1, beta2=state.beta2, eps=state.eps,
        )

    def copy(self):
        return MomentState(self.m.copy(), self.v.copy(), self.t, self.beta1, self.beta2, self.eps)


def final_layer_block(grads):
    """Stack a full gradient dict's final-layer entries as one vector."""
    return np.concatenate([grads["w_out"], grads["b_out"]])


def last_layer_gradient(net, X, y_soft, weights=None):
    """Per-sample final-layer gradients, shape ``(n, last_width + 1)``.

    Runs a deterministic forward pass (no dropout).
    """
    yhat, cache = net.forward(X)
    return last_layer_gradient_from(cache.last_hidden, yhat, y_soft, weights)


def last_layer_gradient_from(hidden, yhat, y_soft, weights=None):
    r = np.asarray(yhat) - np.asarray(y_soft, dtype=np.float64)
    if weights is not None:
        r = r * np.asarray(weights, dtype=np.float64)
    return np.concatenate([r[:, None] * hidden, r[:, None]], axis=1)


def adam_adjusted_gradient(g, moments):
    """Gradient direction Adam would take if ``g`` were the next step's gradient.

    Works row-wise on a ``(n, dim)`` matrix or on a single vector. The
    moments are left untouched.
    """
    if moments.t < 1:
        raise ValueError("moment timestep must be >= 1")
    g = np.asarray(g, dtype=np.float64)
    m_hat = (moments.beta1 * moments.m + (1.0 - moments.beta1) * g) / (1.0 - moments.beta1 ** moments.t)
    v_hat = (moments.beta2 * moments.v + (1.0 - moments.beta2) * g * g) / (1.0 - moments.beta2 ** moments.t)
    return m_hat / (np.sqrt(v_hat) + moments.eps)


def update_moments(moments, grad):
    """Standard Adam moment recursion with a realized training gradient."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != moments.m.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match moments {moments.m.shape}")
    return MomentState(
        moments.beta1 * moments.m + (1.0 - moments.beta1) * grad,
        moments.beta2 * moments.v + (1.0 - moments.beta2) * grad * grad,
        moments.t + 1, moments.beta1, moments.beta2, moments.eps,
    )


_GRAD_MAGIC = b"CTRGRAD1"


def save_gradients(path, grads, t=0):
    """Binary dump: magic, ``(n, dim, t)`` as little-endian int64, then f64 rows."""
    grads = np.ascontiguousarray(grads, dtype="<f8")
    with Path(path).open("wb") as fh:
        fh.write(_GRAD_MAGIC)
        fh.write(struct.pack("<qqq", grads.shape[0], grads.shape[1], int(t)))
        fh.write(grads.tobytes())


def load_gradients(path):
    """Returns ``(grads, t)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != _GRAD_MAGIC:
        raise ValueError("not a gradient dump")
    n, dim, t = struct.unpack("<qqq", raw[8:32])
    return np.frombuffer(raw[32:], dtype="<f8").reshape(n, dim).copy(), t
