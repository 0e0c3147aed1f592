"""Monte-Carlo-dropout loss bounds and pruning of the noisiest coreset samples."""
import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._random import make_rng
from .model import DropoutConfig, logloss


@dataclass
class DenoiseConfig:
    n_passes: int = 10
    z: float = 1.96
    remove_rate: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if self.n_passes < 2:
            raise ValueError("n_passes must be >= 2 to estimate a variance")
        if not 0.0 <= self.remove_rate < 1.0:
            raise ValueError("remove_rate must lie in [0, 1)")
        if self.z < 0:
            raise ValueError("z must be >= 0")


class LossStats:
    """Streaming (Welford) mean and unbiased variance per sample."""

    def __init__(self, size):
        self.n = 0
        self.mean = np.zeros(size)
        self._m2 = np.zeros(size)

    def update(self, losses):
        losses = np.asarray(losses, dtype=np.float64)
        self.n += 1
        delta = losses - self.mean
        self.mean += delta / self.n
        self._m2 += delta * (losses - self.mean)
        return self

    @property
    def variance(self):
        if self.n < 2:
            return np.zeros_like(self.mean)
        return np.maximum(self._m2, 0.0) / (self.n - 1)


def mc_loss_passes(net, X, targets, config):
    """Loss statistics over ``config.n_passes`` dropout passes.

    Pass ``i`` draws its masks from stream ``(seed, "denoise", i)``.
    """
    if net.n_hidden == 0:
        raise ValueError("model has no dropout sites")
    stats = LossStats(len(X))
    drop = DropoutConfig(net.dropout, enabled=True)
    for i in range(config.n_passes):
        yhat, _ = net.forward(X, dropout=drop, rng=make_rng(config.seed, "denoise", i))
        stats.update(logloss(yhat, targets))
    return stats


def upper_bound(stats, config):
    """``mean + z * sqrt(var / n_passes)``."""
    if stats.n != config.n_passes:
        raise ValueError(f"stats hold {stats.n} passes, expected {config.n_passes}")
    return stats.mean + config.z * np.sqrt(stats.variance / config.n_passes)


def removal_count(size, remove_rate):
    return int(math.floor(remove_rate * size + 1e-9))


def filter_coreset(upper, remove_rate):
    """Positions to keep (in order) and to drop.

    Drops the ``floor(rate * n)`` largest bounds; among equal bounds the
    higher position goes first, so lower positions are kept.
    """
    upper = np.asarray(upper, dtype=np.float64)
    if not 0.0 <= remove_rate < 1.0:
        raise ValueError("remove_rate must lie in [0, 1)")
    n_remove = removal_count(len(upper), remove_rate)
    pos = np.arange(len(upper))
    order = np.lexsort((-pos, -upper))
    removed = np.sort(order[:n_remove])
    keep = np.setdiff1d(pos, removed, assume_unique=True)
    return keep, removed


def write_report(path, ids, stats, upper, removed):
    removed = set(np.asarray(removed).tolist())
    var = stats.variance
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_index", "m_loss", "v_loss", "l_upper", "removed"])
        for p, idx in enumerate(ids):
            writer.writerow([int(idx), repr(float(stats.mean[p])), repr(float(var[p])),
                             repr(float(upper[p])), int(p in removed)])
