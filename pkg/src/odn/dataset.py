"""Feature-vector datasets: CSV ingestion, synthetic blobs, open-set splits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import ConfigError, LoadError, MissingLabelError, SplitError

UNKNOWN = 0


def fmt_float(x: float) -> str:
    """17 significant digits; round-trips every float64 exactly."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class FeatureSample:
    id: int
    true_label: int
    features: np.ndarray


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable bundle of ids, labels and an (n, dim) feature matrix.

    Row order is meaningful: it is the stream order seen by the detector.
    """

    dim: int
    ids: np.ndarray
    labels: np.ndarray
    features: np.ndarray
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        feats = np.asarray(self.features, dtype=np.float64).reshape(len(ids), self.dim)
        if len(labels) != len(ids):
            raise ValueError("ids and labels differ in length")
        if len(np.unique(ids)) != len(ids):
            raise ValueError("sample ids must be unique")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features must be finite")
        for arr in (ids, labels, feats):
            arr.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "features", feats)
        index: dict[int, np.ndarray] = {}
        for lab in np.unique(labels):
            pos = np.flatnonzero(labels == lab)
            pos.setflags(write=False)
            index[int(lab)] = pos
        object.__setattr__(self, "_index", index)

    @classmethod
    def empty(cls, dim: int) -> "Dataset":
        return cls(dim, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, dim)))

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[FeatureSample]:
        return iter(self.samples)

    @property
    def samples(self) -> list[FeatureSample]:
        return [
            FeatureSample(int(i), int(l), self.features[k])
            for k, (i, l) in enumerate(zip(self.ids, self.labels))
        ]

    @property
    def index(self) -> dict[int, np.ndarray]:
        return self._index

    @property
    def label_set(self) -> list[int]:
        return sorted(self._index)

    def subset(self, positions: Iterable[int]) -> "Dataset":
        pos = np.asarray(list(positions), dtype=np.int64)
        return Dataset(self.dim, self.ids[pos], self.labels[pos], self.features[pos])

    def with_labels(self, labels: np.ndarray) -> "Dataset":
        return Dataset(self.dim, self.ids, labels, self.features)

    def select_ids(self, ids: Iterable[int]) -> "Dataset":
        where = {int(i): k for k, i in enumerate(self.ids)}
        return self.subset(where[int(i)] for i in ids)

    def drop_ids(self, ids: Iterable[int]) -> "Dataset":
        gone = set(int(i) for i in ids)
        return self.subset(k for k, i in enumerate(self.ids) if int(i) not in gone)

    @staticmethod
    def concat(parts: list["Dataset"]) -> "Dataset":
        parts = [p for p in parts if p is not None]
        dim = parts[0].dim
        return Dataset(
            dim,
            np.concatenate([p.ids for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.features for p in parts]).reshape(-1, dim),
        )


@dataclass(frozen=True)
class OpenSplit:
    known_labels: frozenset
    unknown_labels: frozenset
    train: Dataset
    known_test: Dataset
    unknown_pool: Dataset
    seed: int
    # split label -> label in the source dataset
    label_map: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.known_labels & self.unknown_labels:
            raise SplitError("known and unknown label sets overlap")
        if set(self.train.label_set) & self.unknown_labels:
            raise SplitError("training data contains unknown categories")
        seen: set[int] = set()
        for part in (self.train, self.known_test, self.unknown_pool):
            ids = set(part.ids.tolist())
            if ids & seen:
                raise SplitError("a sample id appears in more than one partition")
            seen |= ids


# --------------------------------------------------------------------------- CSV


def load_csv(path: str | Path) -> Dataset:
    """Read ``label,f0,...,f{d-1}`` rows; sample ids are 0-based row numbers."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError("missing header", line=1) from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0] != "label":
            raise LoadError("header must start with 'label' followed by feature columns", line=1)
        expected = [f"f{k}" for k in range(len(header) - 1)]
        if header[1:] != expected:
            raise LoadError(f"feature columns must be named f0..f{len(expected) - 1}", line=1)
        dim = len(expected)
        labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise LoadError(f"expected {dim + 1} fields, got {len(row)}", line=lineno)
            try:
                lab = int(row[0])
            except ValueError:
                raise LoadError(f"label {row[0]!r} is not an integer", line=lineno) from None
            if lab < 0:
                raise LoadError(f"label {lab} is negative", line=lineno)
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise LoadError(f"bad float: {exc}", line=lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise LoadError("non-finite feature value", line=lineno)
            labels.append(lab)
            rows.append(vals)
    n = len(labels)
    return Dataset(dim, np.arange(n), np.asarray(labels, dtype=np.int64), np.asarray(rows).reshape(n, dim))


def save_csv(ds: Dataset, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(",".join(["label"] + [f"f{k}" for k in range(ds.dim)]) + "\n")
        for lab, row in zip(ds.labels, ds.features):
            fh.write(",".join([str(int(lab))] + [fmt_float(v) for v in row]) + "\n")


# ---------------------------------------------------------------------- synthesis


def synth_blobs(
    n_classes: int,
    per_class: int,
    dim: int,
    spread: float,
    separation: float,
    seed: int,
) -> Dataset:
    """Isotropic Gaussian clusters, class ``c`` centred on ``separation * e_c``.

    Labels are 1..n_classes; samples are grouped by class in label order.
    """
    if n_classes < 2 or per_class < 1:
        raise ConfigError("need n_classes >= 2 and per_class >= 1")
    if dim < n_classes:
        raise ConfigError(f"dim ({dim}) must be >= n_classes ({n_classes})")
    if spread <= 0 or separation <= 0:
        raise ConfigError("spread and separation must be positive")
    rng = np.random.default_rng(seed)
    centers = separation * np.eye(n_classes, dim)
    feats = centers.repeat(per_class, axis=0) + rng.normal(0.0, spread, size=(n_classes * per_class, dim))
    labels = np.arange(1, n_classes + 1).repeat(per_class)
    return Dataset(dim, np.arange(n_classes * per_class), labels, feats)


# ------------------------------------------------------------------------- splits


def make_open_split(ds: Dataset, n_known: int, train_frac: float, seed: int) -> OpenSplit:
    """Pick ``n_known`` categories at random and split them per class.

    Known labels become 1..n_known and the remaining categories N+1..N+U, both in
    shuffled order, so split labels never collide. Each known class contributes
    ``floor(train_frac * n)`` training samples but always leaves one for testing.
    """
    labels = ds.label_set
    if not 0 < train_frac < 1:
        raise ConfigError("train_frac must lie in (0, 1)")
    if n_known < 1 or len(labels) < n_known:
        raise ConfigError(f"need at least n_known = {n_known} categories, found {len(labels)}")
    rng = np.random.default_rng(seed)
    order = [labels[k] for k in rng.permutation(len(labels))]
    known_src, unknown_src = order[:n_known], order[n_known:]
    remap = {src: k + 1 for k, src in enumerate(order)}

    train_pos, test_pos = [], []
    for src in known_src:
        pos = ds.index[src]
        if len(pos) < 2:
            raise SplitError(f"known category {src} has fewer than 2 samples")
        pos = pos[rng.permutation(len(pos))]
        n_train = min(int(math.floor(train_frac * len(pos))), len(pos) - 1)
        train_pos.extend(sorted(pos[:n_train].tolist()))
        test_pos.extend(sorted(pos[n_train:].tolist()))
    pool_pos = sorted(p for src in unknown_src for p in ds.index[src].tolist())

    def part(positions: list[int]) -> Dataset:
        sub = ds.subset(positions)
        return sub.with_labels(np.array([remap[int(l)] for l in sub.labels], dtype=np.int64))

    return OpenSplit(
        known_labels=frozenset(range(1, n_known + 1)),
        unknown_labels=frozenset(range(n_known + 1, len(order) + 1)),
        train=part(train_pos),
        known_test=part(test_pos),
        unknown_pool=part(pool_pos),
        seed=seed,
        label_map={v: k for k, v in remap.items()},
    )


def split_pool(pool: Dataset, stream_frac: float, seed: int) -> tuple[Dataset, Dataset]:
    """Per-category split of the unknown pool into (detector stream, held-out test)."""
    rng = np.random.default_rng(seed)
    stream, test = [], []
    for lab in pool.label_set:
        pos = pool.index[lab]
        pos = pos[rng.permutation(len(pos))]
        n_stream = min(int(math.floor(stream_frac * len(pos))), len(pos) - 1)
        stream.extend(pos[:n_stream].tolist())
        test.extend(pos[n_stream:].tolist())
    return pool.subset(sorted(stream)), pool.subset(sorted(test))


def balanced_subset(ds: Dataset, labels: Iterable[int], per_class: int, seed: int) -> Dataset:
    """``min(per_class, available)`` samples per label, drawn without replacement.

    Shortfalls are recorded on the returned object as ``shortfall``
    (label -> missing count).
    """
    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    shortfall: dict[int, int] = {}
    for lab in sorted(set(int(l) for l in labels)):
        if lab not in ds.index:
            raise MissingLabelError(f"label {lab} has no samples")
        pos = ds.index[lab]
        take = min(per_class, len(pos))
        if take < per_class:
            shortfall[lab] = per_class - take
        chosen.extend(sorted(rng.choice(pos, size=take, replace=False).tolist()))
    out = ds.subset(chosen)
    object.__setattr__(out, "shortfall", shortfall)
    return out
