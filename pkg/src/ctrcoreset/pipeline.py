"""End-to-end coreset construction: select, denoise, train, evaluate.

Selection runs ``n_choose`` rounds. Each round featurizes the not-yet
selected samples with Adam-adjusted final-layer gradients of the current
model (against self-corrected labels), picks medoids per disjoint batch,
then fine-tunes the model on everything selected so far.
"""
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import rankdata
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._random import derive_seed, make_rng
from .dataset import Dataset, FieldSchema, partition_batches, split_indices
from .denoise import DenoiseConfig, filter_coreset, mc_loss_passes, upper_bound
from .gradfeat import (MomentState, adam_adjusted_gradient, final_layer_block,
                       last_layer_gradient_from, update_moments)
from .model import AdamState, CTRNet, logloss, train_epochs
from .selfcorrect import DEFAULT_SHARPNESS, corrected_targets
from .submod import GreedyConfig, batched_greedy, build_kernel
from .parallel import parallel_map

log = logging.getLogger(__name__)

# batches whose kernels are held in memory at once during selection
_KERNELS_IN_FLIGHT = 16
_KERNEL_BYTES_IN_FLIGHT = 1 << 30


def _in_flight(batch_size):
    return int(max(1, min(_KERNELS_IN_FLIGHT, _KERNEL_BYTES_IN_FLIGHT // (8 * batch_size * batch_size))))


@dataclass
class PipelineConfig:
    """Every knob of a run. ``budget <= 1`` is a fraction of the selection pool, larger values a count."""

    budget: float = 0.01
    n_choose: int = 3
    selection_batch_size: int = 1000
    strategy: str = "stochastic"
    epsilon: float = 0.01
    trust_sharpness: float = DEFAULT_SHARPNESS
    n_denoise: int = 10
    z: float = 1.96
    remove_rate: float = 0.10
    embed_dim: int = 4
    hidden: tuple = (100, 100, 100)
    dropout: float = 0.1
    learning_rate: float = 0.01
    batch_size: int = 256
    select_train_epochs: int = 1
    final_batch_size: Optional[int] = None
    final_max_epochs: int = 50
    patience: int = 1
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.n_choose < 1:
            raise ValueError("n_choose must be >= 1")
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if self.selection_batch_size < 1:
            raise ValueError("selection_batch_size must be >= 1")

    def budget_size(self, n):
        # budgets up to 1 are fractions of the pool, larger ones are counts
        k = int(math.floor(self.budget * n + 1e-9)) if self.budget <= 1 else int(self.budget)
        if k > n:
            raise ValueError(f"budget {k} exceeds dataset size {n}")
        return max(k, 1) if n else 0

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def fingerprint(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def denoise_config(self):
        return DenoiseConfig(self.n_denoise, self.z, self.remove_rate, derive_seed(self.seed, "denoise"))

    def new_model(self, schema, label):
        return CTRNet(schema.vocab_sizes, self.embed_dim, self.hidden, self.dropout,
                      seed=derive_seed(self.seed, label))


@dataclass
class CoresetArtifact:
    indices: np.ndarray
    weights: np.ndarray
    soft_labels: np.ndarray
    epochs: np.ndarray
    objectives: list = field(default_factory=list)
    fingerprint: str = ""
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.indices)

    def subset(self, positions, **meta):
        positions = np.asarray(positions, dtype=np.int64)
        return CoresetArtifact(self.indices[positions], self.weights[positions], self.soft_labels[positions],
                               self.epochs[positions], list(self.objectives), self.fingerprint,
                               {**self.meta, **meta})

    def save(self, path):
        """CSV ``global_index,weight,soft_label,epoch`` plus a ``.meta.json`` sidecar."""
        path = Path(path)
        lines = ["global_index,weight,soft_label,epoch"]
        for i, w, y, e in zip(self.indices, self.weights, self.soft_labels, self.epochs):
            lines.append(f"{int(i)},{float(w)!r},{float(y)!r},{int(e)}")
        path.write_text("\n".join(lines) + "\n")
        sidecar = {"fingerprint": self.fingerprint, "objectives": self.objectives, **self.meta}
        meta_path(path).write_text(json.dumps(sidecar, indent=1, sort_keys=True))

    @classmethod
    def load(cls, path):
        path = Path(path)
        rows = [ln.split(",") for ln in path.read_text().splitlines()[1:] if ln.strip()]
        cols = list(zip(*rows)) if rows else [(), (), (), ()]
        meta = {}
        if meta_path(path).exists():
            meta = json.loads(meta_path(path).read_text())
        return cls(
            np.array(cols[0], dtype=np.int64), np.array(cols[1], dtype=np.float64),
            np.array(cols[2], dtype=np.float64), np.array(cols[3], dtype=np.int64),
            meta.pop("objectives", []), meta.pop("fingerprint", ""), meta,
        )


def meta_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


@dataclass
class Metrics:
    auc: Optional[float]
    logloss: float
    n: int

    def to_dict(self):
        return asdict(self)


def split_evenly(total, parts):
    """Largest-remainder split of an integer into ``parts`` near-equal integers."""
    if parts <= 0:
        return []
    base, extra = divmod(int(total), int(parts))
    return [base + (1 if i < extra else 0) for i in range(parts)]


def roc_auc(scores, labels):
    """Mann-Whitney AUC with midranks for ties; ``None`` for a single class."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels) > 0.5
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def evaluate(net, dataset, labels=None):
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    labels = dataset.labels if labels is None else np.asarray(labels)
    p = net.predict_proba(dataset.features)
    return Metrics(roc_auc(p, labels), float(logloss(p, labels).mean()), len(dataset))


def _featurize(net, X, y, moments, step, total_steps, sharpness):
    yhat, cache = net.forward(X)
    ystar = corrected_targets(y, yhat, step, total_steps, sharpness)
    g = last_layer_gradient_from(cache.last_hidden, yhat, ystar)
    return adam_adjusted_gradient(g, moments), ystar


def planned_steps(config, k):
    """Optimizer steps the selection phase will take (the trust horizon)."""
    sizes = np.cumsum(split_evenly(k, config.n_choose))
    return int(sum(config.select_train_epochs * math.ceil(s / config.batch_size) for s in sizes if s > 0))


@dataclass
class SelectionOutcome:
    artifact: CoresetArtifact
    model: CTRNet
    moments: MomentState
    adam: AdamState
    moment_trace: list = field(default_factory=list)


def run_select(dataset, config, threads=None):
    """Build the pre-denoise coreset of ``dataset`` (usually the training split)."""
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot select from an empty dataset")
    k = config.budget_size(n)
    X, y = dataset.features, dataset.labels.astype(np.float64)
    net = config.new_model(dataset.schema, "select-model")
    adam = AdamState.zeros(net.params, lr=config.learning_rate)
    moments = MomentState.from_adam(adam)
    total_steps = max(planned_steps(config, k), 1)
    sharpness = config.trust_sharpness
    chosen = np.zeros(n, dtype=bool)
    pos, weights, soft, epochs_of, objectives = [], [], [], [], []
    step = 0
    trace = []

    for e, epoch_quota in enumerate(split_evenly(k, config.n_choose)):
        snapshot = moments.copy()
        trace.append(snapshot)
        pool = np.flatnonzero(~chosen)
        batches = partition_batches(pool, config.selection_batch_size, seed=derive_seed(config.seed, "epoch", e))
        quotas = [min(q, len(b)) for q, b in zip(split_evenly(epoch_quota, len(batches)), batches)]
        active = [b for b, q in enumerate(quotas) if q > 0]
        gcfg_seed = derive_seed(config.seed, "greedy", e)
        width = _in_flight(max(len(b) for b in batches))
        for start in range(0, len(active), width):
            ids = active[start:start + width]
            feats = [_featurize(net, X[batches[b]], y[batches[b]], snapshot, step, total_steps, sharpness)
                     for b in ids]
            kernels = parallel_map(lambda a: build_kernel(a[1][0], batch_id=a[0]), list(zip(ids, feats)), threads)
            cfg = GreedyConfig([quotas[b] for b in ids], config.strategy, config.epsilon, gcfg_seed)
            results = batched_greedy(kernels, cfg, threads=threads, problem_ids=ids)
            for b, (_, ystar), res in zip(ids, feats, results):
                picked = batches[b][res.selected]
                chosen[picked] = True
                pos.append(picked)
                weights.append(res.weights)
                soft.append(ystar[res.selected])
                epochs_of.append(np.full(len(picked), e))
                objectives.append({"epoch": e, "batch": int(b), "value": res.value, "C": res.C,
                                   "size": int(len(batches[b])), "quota": int(quotas[b])})

        sel = np.concatenate(pos)
        w = np.concatenate(weights)
        clock = {"step": step}

        def label_fn(yhat, targets):
            return corrected_targets(targets, yhat, clock["step"], total_steps, sharpness)

        def on_step(grads):
            nonlocal moments
            clock["step"] += 1
            moments = update_moments(moments, final_layer_block(grads))

        train_epochs(net, X[sel], y[sel], w, epochs=config.select_train_epochs, batch_size=config.batch_size,
                     seed=derive_seed(config.seed, "select-train", e), state=adam, label_fn=label_fn,
                     on_step=on_step)
        step = clock["step"]
        log.info("selection round %d: %d selected, %d optimizer steps", e, len(sel), step)

    sel = np.concatenate(pos)
    artifact = CoresetArtifact(
        dataset.ids[sel], np.concatenate(weights), np.concatenate(soft), np.concatenate(epochs_of),
        objectives, config.fingerprint(),
        {"seed": config.seed, "budget": int(k), "total_steps": total_steps, "config": config.to_dict()},
    )
    return SelectionOutcome(artifact, net, moments, adam, trace)


@dataclass
class DenoiseOutcome:
    artifact: CoresetArtifact
    stats: object
    upper: np.ndarray
    removed: np.ndarray


def run_denoise(artifact, net, dataset, config):
    """Drop the coreset samples with the highest MC-dropout loss upper bound.

    ``dataset`` must be indexable by the artifact's global indices.
    """
    dcfg = config.denoise_config() if isinstance(config, PipelineConfig) else config
    if len(artifact) == 0:
        return DenoiseOutcome(artifact, None, np.zeros(0), np.zeros(0, dtype=np.int64))
    X = dataset.features[artifact.indices]
    stats = mc_loss_passes(net, X, artifact.soft_labels, dcfg)
    upper = upper_bound(stats, dcfg)
    keep, removed = filter_coreset(upper, dcfg.remove_rate)
    pruned = artifact.subset(keep, removed=artifact.indices[removed].tolist(), remove_rate=dcfg.remove_rate,
                             n_denoise=dcfg.n_passes, z=dcfg.z)
    return DenoiseOutcome(pruned, stats, upper, removed)


def fold_unseen_to_oov(net, X):
    """Point embedding rows of ids absent from ``X`` at their field's OOV row.

    Same effect as mapping those ids to OOV at inference time.
    """
    emb = net.params["emb"]
    for f, (offset, size) in enumerate(zip(net.offsets, net.vocab_sizes)):
        unseen = np.setdiff1d(np.arange(1, size), X[:, f])
        emb[offset + unseen] = emb[offset]
    return net


def train_final(dataset, artifact, config, val=None):
    """Train a fresh model on the weighted, soft-labeled coreset.

    With ``val`` given, stops once validation log loss fails to improve for
    ``config.patience`` epochs and returns the best epoch's parameters.
    Ids never seen in the coreset are scored through their field's OOV row.
    """
    if len(artifact) == 0:
        raise ValueError("cannot train on an empty coreset")
    X = dataset.features[artifact.indices]
    net = config.new_model(dataset.schema, "final-model")
    state = AdamState.zeros(net.params, lr=config.learning_rate)
    best, best_loss, bad = net.copy(), np.inf, 0
    history = []
    for epoch in range(config.final_max_epochs):
        train_epochs(net, X, artifact.soft_labels, artifact.weights, epochs=1,
                     batch_size=config.final_batch_size or config.batch_size,
                     seed=derive_seed(config.seed, "final-train", epoch), state=state)
        if val is None:
            best = net
            continue
        loss = evaluate(fold_unseen_to_oov(net.copy(), X), val).logloss
        history.append(loss)
        if loss < best_loss:
            best, best_loss, bad = net.copy(), loss, 0
        else:
            bad += 1
            if bad >= config.patience:
                break
    return fold_unseen_to_oov(best.copy(), X), history


def random_baseline(dataset, k, seed=0):
    """Uniform coreset of ``k`` samples with unit weights and hard labels."""
    n = len(dataset)
    if k > n:
        raise ValueError(f"k={k} exceeds dataset size {n}")
    pos = np.sort(make_rng(seed, "random-baseline").choice(n, size=k, replace=False))
    return CoresetArtifact(dataset.ids[pos], np.ones(k), dataset.labels[pos].astype(np.float64),
                           np.zeros(k, dtype=np.int64), meta={"method": "random", "seed": seed})


@dataclass
class PipelineResult:
    selection: SelectionOutcome
    denoised: DenoiseOutcome
    model: CTRNet
    metrics: Metrics
    timings: dict
    splits: tuple


def run_pipeline(dataset, config, threads=None):
    """Split 8/1/1, select on train, denoise, train on the coreset, score on test."""
    train_idx, val_idx, test_idx = split_indices(len(dataset), seed=derive_seed(config.seed, "split"))
    train = dataset.subset(train_idx)
    timings = {}
    t0 = time.perf_counter()
    sel = run_select(train, config, threads)
    timings["select"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    den = run_denoise(sel.artifact, sel.model, dataset, config)
    timings["denoise"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    net, _ = train_final(dataset, den.artifact, config, val=dataset.subset(val_idx))
    timings["train"] = time.perf_counter() - t0
    metrics = evaluate(net, dataset.subset(test_idx))
    return PipelineResult(sel, den, net, metrics, timings, (train_idx, val_idx, test_idx))


class NoiseAwareCoresetSelector(BaseEstimator):
    """Scikit-learn front end for selection + denoising.

    ``X`` is an ``(n, n_fields)`` matrix of per-field ids (0 = OOV) and
    ``y`` the observed binary labels. After ``fit``, ``indices_``,
    ``weights_`` and ``soft_labels_`` describe the denoised coreset and
    ``fit_resample`` returns it directly.
    """

    def __init__(self, budget=0.01, n_choose=3, selection_batch_size=1000, strategy="stochastic",
                 epsilon=0.01, trust_sharpness=DEFAULT_SHARPNESS, n_denoise=10, z=1.96, remove_rate=0.10,
                 embed_dim=4, hidden=(100, 100, 100), dropout=0.1, learning_rate=0.01, batch_size=256,
                 select_train_epochs=1, vocab_sizes=None, random_state=0):
        self.budget = budget
        self.n_choose = n_choose
        self.selection_batch_size = selection_batch_size
        self.strategy = strategy
        self.epsilon = epsilon
        self.trust_sharpness = trust_sharpness
        self.n_denoise = n_denoise
        self.z = z
        self.remove_rate = remove_rate
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.select_train_epochs = select_train_epochs
        self.vocab_sizes = vocab_sizes
        self.random_state = random_state

    def _config(self):
        return PipelineConfig(
            budget=self.budget, n_choose=self.n_choose, selection_batch_size=self.selection_batch_size,
            strategy=self.strategy, epsilon=self.epsilon, trust_sharpness=self.trust_sharpness,
            n_denoise=self.n_denoise, z=self.z, remove_rate=self.remove_rate, embed_dim=self.embed_dim,
            hidden=self.hidden, dropout=self.dropout, learning_rate=self.learning_rate,
            batch_size=self.batch_size, select_train_epochs=self.select_train_epochs, seed=self.random_state,
        )

    def fit(self, X, y):
        X = check_array(X, dtype=np.int64)
        y = np.asarray(y)
        if y.shape != (len(X),) or not np.isin(y, (0, 1)).all():
            raise ValueError("y must be a binary label vector matching X")
        sizes = self.vocab_sizes if self.vocab_sizes is not None else (X.max(axis=0) + 1).tolist()
        schema = FieldSchema([{f"v{i}": i for i in range(1, int(s))} for s in sizes], min_count=1)
        data = Dataset(X, y, schema)
        config = self._config()
        sel = run_select(data, config)
        den = run_denoise(sel.artifact, sel.model, data, config)
        self.selection_ = sel.artifact
        self.indices_ = den.artifact.indices
        self.weights_ = den.artifact.weights
        self.soft_labels_ = den.artifact.soft_labels
        self.removed_ = np.asarray(den.artifact.meta.get("removed", []), dtype=np.int64)
        self.model_ = sel.model
        self.n_features_in_ = X.shape[1]
        return self

    def fit_resample(self, X, y):
        """Returns ``(X_coreset, soft_labels, weights)``."""
        self.fit(X, y)
        return np.asarray(X)[self.indices_], self.soft_labels_, self.weights_

    def get_support(self):
        check_is_fitted(self, "indices_")
        return self.indices_
