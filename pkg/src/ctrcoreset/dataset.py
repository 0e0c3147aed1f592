"""Categorical click-through data: vocabulary, CSV ingestion, synthesis, noise.

Features are stored per field as local ids into that field's vocabulary.
Id 0 of every field is reserved for out-of-vocabulary tokens.
"""
import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit

from ._random import make_rng

OOV_ID = 0
OOV_TOKEN = "<oov>"
DEFAULT_MIN_COUNT = 10


class SchemaError(ValueError):
    """Rows or encoded features do not agree with the field schema."""


class DataError(ValueError):
    """Input file is missing or malformed."""


@dataclass
class FieldSchema:
    """Per-field token vocabularies.

    ``vocabs[f]`` maps a token of field ``f`` to its id in ``1..size-1``;
    ``counts[f]`` keeps the raw token counts seen while building.
    """

    vocabs: list
    counts: list = field(default_factory=list)
    min_count: int = DEFAULT_MIN_COUNT

    def __post_init__(self):
        if not self.counts:
            self.counts = [{} for _ in self.vocabs]
        self._inverse = [{i: tok for tok, i in v.items()} for v in self.vocabs]

    @property
    def field_count(self):
        return len(self.vocabs)

    @property
    def vocab_sizes(self):
        return [len(v) + 1 for v in self.vocabs]

    @property
    def oov_ids(self):
        return [OOV_ID] * self.field_count

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.vocab_sizes)[:-1]]).astype(np.int64)

    @property
    def total_features(self):
        return int(sum(self.vocab_sizes))

    @classmethod
    def from_sizes(cls, sizes):
        """Schema with synthetic tokens ``v1 .. v{size-1}`` per field."""
        if any(int(s) < 2 for s in sizes):
            raise SchemaError("every field needs at least one token besides OOV")
        return cls([{f"v{i}": i for i in range(1, int(s))} for s in sizes], min_count=1)

    def encode(self, tokens):
        if len(tokens) != self.field_count:
            raise SchemaError(f"expected {self.field_count} fields, got {len(tokens)}")
        return [v.get(tok, OOV_ID) for v, tok in zip(self.vocabs, tokens)]

    def decode(self, features):
        return [inv.get(int(i), OOV_TOKEN) for inv, i in zip(self._inverse, features)]

    def validate(self, features):
        features = np.asarray(features)
        if features.ndim != 2 or features.shape[1] != self.field_count:
            raise SchemaError(f"features must have shape (n, {self.field_count})")
        if features.size and (features.min() < 0 or (features >= np.asarray(self.vocab_sizes)).any()):
            raise SchemaError("feature id outside its field vocabulary")
        return features

    def to_dict(self):
        return {
            "min_count": self.min_count,
            "fields": [
                {"vocab": v, "counts": c, "oov_id": OOV_ID}
                for v, c in zip(self.vocabs, self.counts)
            ],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            [dict(f["vocab"]) for f in d["fields"]],
            [dict(f.get("counts", {})) for f in d["fields"]],
            min_count=int(d.get("min_count", DEFAULT_MIN_COUNT)),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except FileNotFoundError as exc:
            raise DataError(f"schema file not found: {path}") from exc


@dataclass
class Sample:
    features: np.ndarray
    label: int
    soft_label: float
    weight: float = 1.0


@dataclass
class Dataset:
    """Encoded samples held column-wise.

    ``ids`` are stable global sample indices; a subset keeps the ids of the
    rows it was cut from.
    """

    features: np.ndarray
    labels: np.ndarray
    schema: FieldSchema
    soft_labels: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    clean_labels: Optional[np.ndarray] = None
    ids: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.labels)
        self.features = np.asarray(self.features, dtype=np.int64).reshape(n, self.schema.field_count)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.soft_labels is None:
            self.soft_labels = self.labels.astype(np.float64)
        if self.weights is None:
            self.weights = np.ones(n)
        if self.ids is None:
            self.ids = np.arange(n, dtype=np.int64)
        self.soft_labels = np.asarray(self.soft_labels, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.ids = np.asarray(self.ids, dtype=np.int64)

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return Sample(self.features[i], int(self.labels[i]), float(self.soft_labels[i]), float(self.weights[i]))

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.features[indices],
            self.labels[indices],
            self.schema,
            soft_labels=self.soft_labels[indices],
            weights=self.weights[indices],
            clean_labels=None if self.clean_labels is None else self.clean_labels[indices],
            ids=self.ids[indices],
        )

    def with_labels(self, labels):
        out = self.subset(np.arange(len(self)))
        out.labels = np.asarray(labels, dtype=np.int64)
        out.soft_labels = out.labels.astype(np.float64)
        return out

    @property
    def positive_rate(self):
        return float(self.labels.mean()) if len(self) else float("nan")


def build_vocab(raw_rows, min_count=DEFAULT_MIN_COUNT):
    """Build a :class:`FieldSchema` from ``[label, tok_1, ..., tok_F]`` rows.

    Tokens seen fewer than ``min_count`` times map to the field's OOV id.
    Kept tokens get consecutive ids from 1 in order of first appearance.
    """
    if min_count < 1:
        raise ValueError("min_count must be a positive integer")
    counters = None
    order = None
    for row in raw_rows:
        tokens = row[1:]
        if counters is None:
            counters = [Counter() for _ in tokens]
            order = [dict() for _ in tokens]
        elif len(tokens) != len(counters):
            raise SchemaError(f"ragged row: expected {len(counters)} fields, got {len(tokens)}")
        for f, tok in enumerate(tokens):
            counters[f][tok] += 1
            order[f].setdefault(tok, len(order[f]))
    if counters is None:
        return FieldSchema([], min_count=min_count)
    vocabs = []
    for counter, seen in zip(counters, order):
        kept = [tok for tok in seen if counter[tok] >= min_count]
        vocabs.append({tok: i + 1 for i, tok in enumerate(kept)})
    return FieldSchema(vocabs, [dict(c) for c in counters], min_count=min_count)


def _parse_label(value, lineno):
    try:
        label = int(value)
    except ValueError:
        label = None
    if label not in (0, 1):
        raise DataError(f"line {lineno}: label must be 0 or 1, got {value!r}")
    return label


def read_rows(path, header=False):
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        if header:
            next(reader, None)
        return [row for row in reader if row]


def load_csv(path, schema=None, min_count=DEFAULT_MIN_COUNT, header=False, clean_path=None):
    """Load ``label,tok_1,...,tok_F`` rows into a :class:`Dataset`.

    With ``schema=None`` the vocabulary is built from the file itself;
    otherwise the given schema is frozen and unseen tokens become OOV.
    """
    rows = read_rows(path, header=header)
    if schema is None:
        try:
            schema = build_vocab(rows, min_count=min_count)
        except SchemaError as exc:
            raise DataError(str(exc)) from exc
    if not rows:
        return Dataset(np.zeros((0, schema.field_count), dtype=np.int64), np.zeros(0, dtype=np.int64), schema)
    labels = np.empty(len(rows), dtype=np.int64)
    features = np.empty((len(rows), schema.field_count), dtype=np.int64)
    for i, row in enumerate(rows):
        labels[i] = _parse_label(row[0], i + 1)
        if len(row) - 1 != schema.field_count:
            raise DataError(f"line {i + 1}: expected {schema.field_count} fields, got {len(row) - 1}")
        features[i] = schema.encode(row[1:])
    clean = None
    if clean_path is not None:
        clean = load_clean_labels(clean_path)
        if len(clean) != len(labels):
            raise DataError("clean-label sidecar length does not match the data file")
    return Dataset(features, labels, schema, clean_labels=clean)


def load_clean_labels(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"clean-label file not found: {path}")
    lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    return np.array([_parse_label(v, i + 1) for i, v in enumerate(lines)], dtype=np.int64)


def write_csv(dataset, path, clean_path=None):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for i in range(len(dataset)):
            writer.writerow([int(dataset.labels[i])] + dataset.schema.decode(dataset.features[i]))
    if clean_path is not None:
        clean = dataset.labels if dataset.clean_labels is None else dataset.clean_labels
        Path(clean_path).write_text("".join(f"{int(v)}\n" for v in clean))


@dataclass
class LogisticTeacher:
    """Ground-truth click model: ``P(y=1) = sigmoid(bias + sum_f w_f[x_f])``."""

    weights: list
    bias: float = 0.0

    @classmethod
    def random(cls, sizes, scale=1.0, bias=0.0, rng=None):
        rng = np.random.default_rng(rng)
        return cls([rng.normal(0.0, scale, int(s)) for s in sizes], bias)

    @classmethod
    def zeros(cls, sizes):
        return cls([np.zeros(int(s)) for s in sizes], 0.0)

    def score(self, features):
        out = np.full(len(features), float(self.bias))
        for f, w in enumerate(self.weights):
            out += np.asarray(w)[features[:, f]]
        return out


def synth_generate(n, field_sizes, teacher=None, seed=0, skew=0.0, teacher_scale=1.0):
    """Draw ``n`` labeled samples from a logistic teacher.

    Field values are uniform over the non-OOV ids, or Zipf-like with
    exponent ``skew`` over a seeded random ranking. The drawn labels are
    also kept as ``clean_labels``.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    schema = FieldSchema.from_sizes(field_sizes)
    if teacher is None:
        teacher = LogisticTeacher.random(field_sizes, scale=teacher_scale, rng=make_rng(seed, "synth", "teacher"))
    rng = make_rng(seed, "synth", "rows")
    features = np.empty((n, schema.field_count), dtype=np.int64)
    for f, size in enumerate(schema.vocab_sizes):
        ids = np.arange(1, size)
        if skew > 0:
            p = 1.0 / np.arange(1, size) ** skew
            ids = rng.permutation(ids)
            features[:, f] = rng.choice(ids, size=n, p=p / p.sum())
        else:
            features[:, f] = rng.integers(1, size, size=n)
    labels = (rng.random(n) < expit(teacher.score(features))).astype(np.int64)
    return Dataset(features, labels, schema, clean_labels=labels.copy())


def flip_labels(dataset, indices):
    labels = dataset.labels.copy()
    indices = np.asarray(indices, dtype=np.int64)
    labels[indices] = 1 - labels[indices]
    out = dataset.with_labels(labels)
    if out.clean_labels is None:
        out.clean_labels = dataset.labels.copy()
    return out


def inject_noise(dataset, flip_rate, seed=0):
    """Flip exactly ``round(flip_rate * n)`` labels chosen without replacement.

    Returns the noisy dataset and the sorted flipped indices.
    """
    if not 0.0 <= flip_rate <= 1.0:
        raise ValueError("flip_rate must lie in [0, 1]")
    n = len(dataset)
    n_flip = int(math.floor(flip_rate * n + 0.5))
    rng = make_rng(seed, "noise")
    flipped = np.sort(rng.choice(n, size=n_flip, replace=False)).astype(np.int64)
    return flip_labels(dataset, flipped), flipped


def partition_batches(indices, batch_size, seed=0):
    """Shuffle ``indices`` (or ``range(indices)``) into disjoint batches.

    All batches hold ``batch_size`` items except possibly the last.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if isinstance(indices, Dataset):
        indices = len(indices)
    if np.ndim(indices) == 0:
        indices = np.arange(int(indices), dtype=np.int64)
    perm = np.asarray(indices, dtype=np.int64)[make_rng(seed, "partition").permutation(len(indices))]
    return [perm[i:i + batch_size] for i in range(0, len(perm), batch_size)]


def split_indices(n, fractions=(0.8, 0.1, 0.1), seed=0):
    """Seeded shuffle of ``range(n)`` cut into train/validation/test parts."""
    perm = make_rng(seed, "split").permutation(n)
    cuts = np.floor(np.cumsum(fractions)[:-1] / np.sum(fractions) * n).astype(int)
    return [np.sort(part) for part in np.split(perm, cuts)]
