"""Progressive label self-correction.

The soft target is ``y* = (1 - eps) * y + eps * yhat`` with
``eps = g(t) * l(yhat)``: ``g`` is a sigmoid schedule over training
progress, ``l`` is one minus the normalized binary entropy of the
prediction. ``y*`` is treated as a constant when differentiating.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .model import LOSS_CLAMP, logloss

DEFAULT_SHARPNESS = 16.0
_LN2 = np.log(2.0)


@dataclass
class TrustSchedule:
    total_steps: int
    sharpness: float = DEFAULT_SHARPNESS
    step: int = 0

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")

    @property
    def value(self):
        return global_trust(self.step, self.total_steps, self.sharpness)

    def advance(self, n=1):
        self.step = min(self.step + n, self.total_steps)
        return self


@dataclass
class SoftLabel:
    value: float
    label: float
    prediction: float
    epsilon: float


def global_trust(t, T, beta=DEFAULT_SHARPNESS):
    if T <= 0:
        raise ValueError("T must be >= 1")
    return expit(beta * (np.asarray(t, dtype=np.float64) / T - 0.5))


def binary_entropy(p, delta=LOSS_CLAMP):
    p = np.clip(np.asarray(p, dtype=np.float64), delta, 1.0 - delta)
    return -p * np.log(p) - (1.0 - p) * np.log1p(-p)


def local_trust(yhat):
    return np.clip(1.0 - binary_entropy(yhat) / _LN2, 0.0, 1.0)


def epsilon(t, T, beta, yhat):
    return global_trust(t, T, beta) * local_trust(yhat)


def correct_label(y, yhat, eps):
    y = np.asarray(y, dtype=np.float64)
    return (1.0 - eps) * y + eps * np.asarray(yhat, dtype=np.float64)


def soft_label(y, yhat, eps):
    """Scalar convenience returning the :class:`SoftLabel` record."""
    return SoftLabel(float(correct_label(y, yhat, eps)), float(y), float(yhat), float(eps))


def corrected_targets(y, yhat, t, T, beta=DEFAULT_SHARPNESS):
    return correct_label(y, yhat, epsilon(t, T, beta, yhat))


def loss_lc(yhat, y, t, T, beta=DEFAULT_SHARPNESS):
    """Log loss of ``yhat`` against the self-corrected target."""
    return logloss(yhat, corrected_targets(y, yhat, t, T, beta))


def loss_lc_grad(yhat, y, t, T, beta=DEFAULT_SHARPNESS):
    """``dL/dyhat`` with ``y*`` held fixed: ``(yhat - y*) / (yhat (1 - yhat))``."""
    yhat = np.asarray(yhat, dtype=np.float64)
    ystar = corrected_targets(y, yhat, t, T, beta)
    return (yhat - ystar) / (yhat * (1.0 - yhat))
