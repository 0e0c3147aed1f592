"""Facility-location maximization over gradient similarity kernels.

The kernel of a batch is ``S = C - D`` where ``D`` holds pairwise L2
distances and ``C = max(D)``, so ``S >= 0`` with ``S_ii = C`` the row
maximum. ``F(A) = sum_i max_{j in A} S_ij`` with ``F(empty) = 0``.

All greedy variants run through one batched core that keeps, per problem,
a candidate mask ``W``, a coverage vector ``V`` and its sum ``u``. Problems
are spread over the worker pool, each solved to completion by one worker
so its kernel stays cache-resident. Each problem draws from its own stream
``problem_rng(seed, b)``, so a batched solve is bit-identical to solving
every problem alone.
"""
import itertools
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._random import problem_rng
from .parallel import parallel_map

STRATEGIES = ("naive", "stochastic")
DEFAULT_EPSILON = 0.01
# float64 elements per gain block (1 MiB), sized to stay in cache
_BLOCK = 1 << 17
_KERNEL_BLOCK = 1024
_BRUTE_FORCE_LIMIT = 10 ** 6


@dataclass
class SimilarityKernel:
    S: np.ndarray
    C: float
    batch_id: int = 0

    @property
    def n(self):
        return self.S.shape[0]


@dataclass
class GreedyConfig:
    k: Union[int, Sequence[int]]
    strategy: str = "stochastic"
    epsilon: float = DEFAULT_EPSILON
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.strategy == "stochastic" and not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")


@dataclass
class SelectionResult:
    """Chosen indices in pick order, their medoid weights and the gain trace."""

    selected: np.ndarray
    weights: np.ndarray
    value: float
    gains: np.ndarray
    C: float = 0.0
    meta: dict = field(default_factory=dict)


def _as_matrix(kernel):
    return kernel.S if isinstance(kernel, SimilarityKernel) else np.asarray(kernel, dtype=np.float64)


def _kernel_constant(kernel, S):
    if isinstance(kernel, SimilarityKernel):
        return kernel.C
    return float(np.max(np.diag(S))) if S.size else 0.0


def pairwise_l2(G, block=_KERNEL_BLOCK, threads=None):
    """Symmetric Euclidean distance matrix with an exactly zero diagonal.

    Blocks use the Gram expansion; entries small enough to lose precision
    to cancellation are recomputed from explicit differences.
    """
    G = np.ascontiguousarray(G, dtype=np.float64)
    n = len(G)
    sq = np.einsum("ij,ij->i", G, G)
    D = np.empty((n, n))
    starts = list(range(0, n, block))
    pairs = [(a, b) for i, a in enumerate(starts) for b in starts[i:]]

    def fill(pair):
        a, b = pair
        ga, gb = G[a:a + block], G[b:b + block]
        scale = sq[a:a + block, None] + sq[None, b:b + block]
        d2 = scale - 2.0 * (ga @ gb.T)
        r, c = np.nonzero(d2 <= 1e-8 * scale)
        if len(r):
            diff = ga[r] - gb[c]
            d2[r, c] = np.einsum("ij,ij->i", diff, diff)
        np.maximum(d2, 0.0, out=d2)
        np.sqrt(d2, out=d2)
        if a == b:
            d2 = 0.5 * (d2 + d2.T)
            np.fill_diagonal(d2, 0.0)
            D[a:a + block, a:a + block] = d2
        else:
            D[a:a + block, b:b + block] = d2
            D[b:b + block, a:a + block] = d2.T

    parallel_map(fill, pairs, threads)
    return D


def build_kernel(grads, batch_id=0, threads=None):
    """Similarity kernel ``C - ||g_i - g_j||`` with ``C`` the batch's max distance."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.ndim != 2 or len(grads) < 1:
        raise ValueError("grads must be a non-empty (N, dim) matrix")
    if not np.isfinite(grads).all():
        raise ValueError("gradients contain NaN or infinite entries")
    D = pairwise_l2(grads, threads=threads)
    C = float(D.max())
    np.subtract(C, D, out=D)
    return SimilarityKernel(D, C, batch_id)


def facility_location_value(kernel, subset):
    """``sum_i max_{j in subset} S_ij``; the empty set scores 0."""
    S = _as_matrix(kernel)
    subset = np.asarray(subset, dtype=np.int64)
    if subset.size == 0:
        return 0.0
    if subset.min() < 0 or subset.max() >= len(S):
        raise IndexError("subset index out of range")
    return float(S[:, subset].max(axis=1).sum())


def compute_weights(kernel, selected):
    """Medoid weights: how many points each selected element covers best.

    Returned in the order of ``selected``; ties go to the lowest index.
    """
    S = _as_matrix(kernel)
    selected = np.asarray(selected, dtype=np.int64)
    if selected.size == 0:
        raise ValueError("selected must be non-empty")
    order = np.argsort(selected, kind="stable")
    ranked = selected[order]
    owner = np.argmax(S[:, ranked], axis=1)
    counts = np.bincount(owner, minlength=len(ranked)).astype(np.float64)
    weights = np.empty_like(counts)
    weights[order] = counts
    return weights


def sample_size(n, k, epsilon):
    """Stochastic-greedy candidates per round, ``ceil(n * ln(1/eps) / k)``."""
    return int(math.ceil(n * math.log(1.0 / epsilon) / k))


def _check_budget(k, n):
    if not 1 <= k <= n:
        raise ValueError(f"budget k={k} must satisfy 1 <= k <= N={n}")


class _Problem:
    __slots__ = ("S", "k", "s", "rng", "mask", "V", "u", "selected", "gains")

    def __init__(self, S, k, s, rng):
        self.S = S
        self.k = k
        self.s = s
        self.rng = rng
        self.mask = np.ones(len(S), dtype=bool)
        self.V = np.zeros(len(S))
        self.u = 0.0
        self.selected = []
        self.gains = []

    def candidates(self):
        pool = np.flatnonzero(self.mask)
        if self.s >= len(pool):
            return pool
        return np.sort(self.rng.choice(pool, size=self.s, replace=False))

    def add(self, item, gain):
        self.selected.append(int(item))
        self.gains.append(float(gain))
        np.maximum(self.V, self.S[item], out=self.V)
        self.u = float(self.V.sum())
        self.mask[item] = False


def _score(problem, cands, buf):
    """Marginal gains of ``cands`` for one problem, in cache-sized row blocks."""
    n = problem.S.shape[0]
    step = max(1, len(buf) // n)
    out = np.empty(len(cands))
    for start in range(0, len(cands), step):
        rows = cands[start:start + step]
        block = buf[:len(rows) * n].reshape(len(rows), n)
        np.take(problem.S, rows, axis=0, out=block)
        np.maximum(block, problem.V, out=block)
        out[start:start + len(rows)] = block.sum(axis=1)
    out -= problem.u
    return out


def _solve(kernels, ks, strategy, epsilon, seed, threads=None, problem_ids=None):
    mats = [_as_matrix(K) for K in kernels]
    if len(ks) != len(mats):
        raise ValueError("one budget per problem is required")
    if problem_ids is None:
        problem_ids = range(len(mats))
    problems = []
    for b, S, k in zip(problem_ids, mats, ks):
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError("kernels must be square")
        _check_budget(int(k), len(S))
        s = sample_size(len(S), int(k), epsilon) if strategy == "stochastic" else len(S)
        problems.append(_Problem(S, int(k), s, problem_rng(seed, b)))

    def run(p):
        buf = np.empty(_BLOCK)
        for _ in range(p.k):
            cands = p.candidates()
            gains = _score(p, cands, buf)
            best = int(np.argmax(gains))
            p.add(cands[best], gains[best])
        return p

    # problems are independent and own their streams, so each worker solves one to completion
    parallel_map(run, problems, threads)

    results = []
    for S, p, K in zip(mats, problems, kernels):
        sel = np.array(p.selected, dtype=np.int64)
        results.append(SelectionResult(
            sel, compute_weights(S, sel), p.u, np.array(p.gains), _kernel_constant(K, S),
            meta={"strategy": strategy, "sample_size": p.s, "epsilon": epsilon if strategy == "stochastic" else None},
        ))
    return results


def naive_greedy(kernel, k):
    """Exact greedy: each round adds the best marginal gain, lowest index on ties."""
    return _solve([kernel], [k], "naive", None, 0)[0]


def stochastic_greedy(kernel, config):
    """Greedy over ``sample_size(N, k, eps)`` random unselected candidates per round.

    Uses problem stream 0 of ``config.seed``, the same stream a batched solve
    gives its first problem.
    """
    (k,) = np.atleast_1d(config.k)
    return _solve([kernel], [int(k)], "stochastic", config.epsilon, config.seed)[0]


def batched_greedy(kernels, config, threads=None, problem_ids=None):
    """Solve several facility-location problems in lockstep.

    ``config.k`` is a shared budget or one budget per problem; problems with
    a smaller budget stop early and their result matches a solo run.
    ``problem_ids`` picks each problem's random stream (default: position),
    so a long list can be solved in slices without changing any result.
    """
    kernels = list(kernels)
    ks = np.broadcast_to(np.atleast_1d(config.k), (len(kernels),)).astype(int).tolist()
    return _solve(kernels, ks, config.strategy, config.epsilon, config.seed, threads, problem_ids)


def batched_stochastic_greedy(kernels, config, threads=None, problem_ids=None):
    if config.strategy != "stochastic":
        config = GreedyConfig(config.k, "stochastic", config.epsilon, config.seed)
    return batched_greedy(kernels, config, threads, problem_ids)


def brute_force_opt(kernel, k):
    """Exhaustive optimum over all ``k``-subsets; returns ``(value, witness)``."""
    S = _as_matrix(kernel)
    n = len(S)
    _check_budget(k, n)
    if math.comb(n, k) > _BRUTE_FORCE_LIMIT:
        raise ValueError(f"C({n}, {k}) exceeds the brute-force limit")
    combos = itertools.combinations(range(n), k)
    best_value, best = -np.inf, None
    while True:
        block = np.array(list(itertools.islice(combos, 4096)), dtype=np.int64)
        if block.size == 0:
            break
        values = S[:, block].max(axis=2).sum(axis=0)
        i = int(np.argmax(values))
        if values[i] > best_value:
            best_value, best = float(values[i]), block[i]
    return best_value, best


_KERNEL_MAGIC = b"CTRKERN1"


def save_kernel(path, kernel):
    """Binary dump: magic, N (int64), C (f64), then row-major f64 values."""
    S = np.ascontiguousarray(kernel.S, dtype="<f8")
    with Path(path).open("wb") as fh:
        fh.write(_KERNEL_MAGIC)
        fh.write(struct.pack("<qd", S.shape[0], kernel.C))
        fh.write(S.tobytes())


def load_kernel(path, batch_id=0):
    raw = Path(path).read_bytes()
    if raw[:8] != _KERNEL_MAGIC:
        raise ValueError("not a kernel dump")
    n, C = struct.unpack("<qd", raw[8:24])
    return SimilarityKernel(np.frombuffer(raw[24:], dtype="<f8").reshape(n, n).copy(), C, batch_id)


class FacilityLocationSelector(TransformerMixin, BaseEstimator):
    """Pick representative rows of a feature (e.g. gradient) matrix.

    Parameters
    ----------
    n_select : int
        Number of rows to keep.
    strategy : {"stochastic", "naive"}, default="stochastic"
    epsilon : float, default=0.01
        Stochastic-greedy error; sets the per-round candidate sample size.
    random_state : int, default=0

    Attributes
    ----------
    selected_ : ndarray of int
        Chosen row indices in pick order.
    weights_ : ndarray of float
        Number of rows each chosen row covers best.
    value_ : float
        Facility-location objective of the selection.
    """

    def __init__(self, n_select=10, strategy="stochastic", epsilon=DEFAULT_EPSILON, random_state=0):
        self.n_select = n_select
        self.strategy = strategy
        self.epsilon = epsilon
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        kernel = build_kernel(X)
        cfg = GreedyConfig(self.n_select, self.strategy, self.epsilon, self.random_state)
        result = batched_greedy([kernel], cfg)[0]
        self.selected_ = result.selected
        self.weights_ = result.weights
        self.value_ = result.value
        self.kernel_constant_ = kernel.C
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "selected_")
        return check_array(X, dtype=np.float64)[self.selected_]
