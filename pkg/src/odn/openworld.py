"""The open-world session: detect unknowns, ask the teacher, grow the classifier.

Each iteration sweeps the residual unknown stream, has the teacher label
detections (bounded per category), incorporates the largest pending group as
category ``N + k``, fine-tunes with balanced data and allometric learning
rates, recalibrates, and takes an evaluation snapshot.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import classifier as clf
from .classifier import ClassifierState, TrainConfig
from .config import SessionConfig
from .dataset import Dataset, OpenSplit, balanced_subset, split_pool
from .errors import NothingToAdd, ODNError, OracleError, SplitError
from .evaluation import MetricsReport, evaluate_open
from .thresholds import TripletThresholds, calibrate, detect_batch

log = logging.getLogger(__name__)


@dataclass
class TeacherOracle:
    truth: dict  # sample id -> truth label
    known: set = field(default_factory=set)  # truths the model already recognises
    labels_issued: int = 0
    per_category_issued: dict = field(default_factory=dict)

    def ask(self, sample_id: int) -> int:
        try:
            return self.truth[int(sample_id)]
        except KeyError:
            raise OracleError(f"teacher has no truth for sample {sample_id}") from None

    def record(self, truth: int) -> None:
        self.labels_issued += 1
        self.per_category_issued[truth] = self.per_category_issued.get(truth, 0) + 1


@dataclass
class Detections:
    unknown: Dataset
    accepted: Dataset  # features/ids of samples accepted as known
    accepted_labels: np.ndarray


@dataclass
class IterationRecord:
    iteration: int
    added_truth: int
    added_source_label: int
    assigned_label: int
    detected_unknown_count: int
    false_detection_count: int
    teacher_labels_used: int
    training_samples: int
    snapshot: MetricsReport

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "snapshot"}
        d["snapshot"] = self.snapshot.to_dict()
        return d


@dataclass
class SessionLog:
    config: dict
    initial: MetricsReport
    iterations: list[IterationRecord] = field(default_factory=list)
    labels_issued: int = 0
    per_category_issued: dict = field(default_factory=dict)
    stop_reason: str = ""
    labeling_policy: dict = field(default_factory=dict)
    # filled in by run_open_world, not serialised
    state: ClassifierState | None = None
    thresholds: TripletThresholds | None = None
    used_ids: frozenset = frozenset()
    stream_sizes: dict = field(default_factory=dict)

    @property
    def final_report(self) -> MetricsReport:
        return self.iterations[-1].snapshot if self.iterations else self.initial

    @property
    def average_labels_per_category(self) -> float:
        n = len(self.iterations)
        return self.labels_issued / n if n else 0.0

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "labeling_policy": self.labeling_policy,
            "initial": self.initial.to_dict(),
            "iterations": [r.to_dict() for r in self.iterations],
            "final_per_category": {str(c): a for c, a in self.final_report.per_category.items()},
            "labels_issued": self.labels_issued,
            "per_category_issued": {str(c): n for c, n in sorted(self.per_category_issued.items())},
            "average_labels_per_category": self.average_labels_per_category,
            "stop_reason": self.stop_reason,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


# ------------------------------------------------------------------ stage functions


def detect_unknown_pool(state, thresholds, pool: Dataset, passes: int = 1) -> Detections:
    """Split ``pool`` into detected-unknown and accepted-as-known, in pool order.

    Extra passes re-screen the accepted set; on a fixed model they change nothing.
    """
    if passes < 1:
        raise ValueError("passes must be >= 1")
    if not len(pool):
        return Detections(pool, pool, np.zeros(0, dtype=np.int64))
    outcomes = detect_batch(state, thresholds, pool.features)
    unknown_ids = [int(i) for i, o in zip(pool.ids, outcomes) if not o.known]
    labels = {int(i): o.label for i, o in zip(pool.ids, outcomes) if o.known}
    for _ in range(passes - 1):
        rest = pool.select_ids(labels)
        if not len(rest):
            break
        again = detect_batch(state, thresholds, rest.features)
        for i, o in zip(rest.ids, again):
            if not o.known:
                unknown_ids.append(int(i))
                del labels[int(i)]
            else:
                labels[int(i)] = o.label
    keep = set(unknown_ids)
    unknown = pool.subset(k for k, i in enumerate(pool.ids) if int(i) in keep)
    accepted = pool.subset(k for k, i in enumerate(pool.ids) if int(i) in labels)
    return Detections(unknown, accepted, np.array([labels[int(i)] for i in accepted.ids], dtype=np.int64))


def label_with_teacher(detected: Dataset, oracle: TeacherOracle, budget_per_category: int):
    """Group detections by teacher truth, spending at most the per-category budget.

    The budget counts labels issued over the oracle's lifetime. Returns
    ``(groups, false_ids)``: ``groups`` maps truth -> Dataset (labels = truth),
    ``false_ids`` lists detections whose truth is already known.
    """
    if budget_per_category < 1:
        raise ValueError("budget_per_category must be >= 1")
    picked: dict[int, list[int]] = {}
    false_ids: list[int] = []
    for k, sid in enumerate(detected.ids):
        truth = oracle.ask(sid)
        if truth in oracle.known:
            false_ids.append(int(sid))
            continue
        if oracle.per_category_issued.get(truth, 0) >= budget_per_category:
            continue
        oracle.record(truth)
        picked.setdefault(truth, []).append(k)
    groups = {t: detected.subset(pos).with_labels(np.full(len(pos), t)) for t, pos in sorted(picked.items())}
    return groups, false_ids


def choose_next_category(groups: dict) -> int:
    """Truth id of the largest group; ties go to the smaller id."""
    if not groups:
        raise NothingToAdd("no labeled group to incorporate")
    return min(groups, key=lambda t: (-len(groups[t]), t))


def mean_activation(state: ClassifierState, samples: Dataset) -> np.ndarray:
    return clf.activations(state, samples.features).mean(axis=0)


def incorporate_category(
    state: ClassifierState,
    new_samples: Dataset,
    alpha: float = 0.5,
    beta: float = 0.5,
    M: int = 5,
    init: str = "emphasis",
    seed: int = 0,
) -> ClassifierState:
    """Append a column for the new category; it becomes label ``K + 1``."""
    if not len(new_samples):
        raise ValueError("cannot incorporate a category without samples")
    if len(new_samples.label_set) != 1:
        raise ValueError("new samples must share one truth label")
    m = min(M, state.n_categories)
    col, bias = clf.emphasis_init(state, mean_activation(state, new_samples), m, alpha, beta)
    if init == "stochastic":
        mean_col, mean_bias = clf.emphasis_init(state, np.zeros(state.n_categories), 1, 1.0, 0.0)
        col, bias = clf.stochastic_column(state, mean_col, seed), mean_bias
    return clf.expand(state, col, bias)


def incremental_finetune(
    state: ClassifierState,
    new_samples: Dataset,
    train: Dataset,
    cfg: TrainConfig,
    allometry: bool = True,
    factors=None,
) -> tuple[ClassifierState, Dataset]:
    """Fine-tune on the new samples plus an equally sized draw of every older category.

    ``train`` carries the labeled data of categories 1..K-1; ``new_samples``
    must already carry label K. Returns the state and the balanced set used.
    """
    K = state.n_categories
    if state.n_initial != K - 1:
        raise ValueError("state must be freshly expanded by one column")
    missing = set(range(1, K)) - set(train.label_set)
    if missing:
        raise SplitError(f"training data lacks categories {sorted(missing)}")
    known = balanced_subset(train, range(1, K), len(new_samples), cfg.seed)
    data = Dataset.concat([known, new_samples])
    if factors is None:
        factors = clf.allometry_factors(state.n_initial, K) if allometry else np.ones(K)
    return clf.finetune(state, data, cfg, factors), data


# ---------------------------------------------------------------------- session


def run_open_world(split: OpenSplit, cfg: SessionConfig) -> SessionLog:
    """Train, calibrate, then incorporate unknown categories one per iteration.

    The unknown pool is divided per category into a detector stream and a
    held-out test part. Recalibration uses the original training data plus
    every teacher-labeled sample incorporated so far.
    """
    n_known = len(split.known_labels)
    stream, unknown_test = split_pool(split.unknown_pool, cfg.train_frac, cfg.split_seed + 1)
    oracle = TeacherOracle(truth={int(i): int(l) for i, l in zip(stream.ids, stream.labels)})

    state = clf.train_initial(split.train, cfg.train_config())
    train_all = split.train
    thresholds = calibrate(state, train_all, cfg.epsilon, cfg.rho, cfg.confidence)
    used = set(train_all.ids.tolist())
    incorporated: dict[int, int] = {}

    def snapshot() -> MetricsReport:
        return evaluate_open(state, thresholds, split.known_test, unknown_test, incorporated, exclude_ids=used)

    alpha, beta = cfg.blend
    session = SessionLog(
        config=cfg.to_dict(),
        initial=snapshot(),
        labeling_policy={
            "budget_per_category": cfg.budget,
            "passes": cfg.passes,
            "order": "first-seen",
            "selection": "largest-group",
            "note": "budget and multi-pass policy are configurable stand-ins",
        },
        stream_sizes={int(l): len(p) for l, p in stream.index.items()},
    )
    pending: dict[int, Dataset] = {}
    residual = stream
    idle = 0
    while len(session.iterations) < cfg.max_iterations:
        it = len(session.iterations) + 1
        try:
            found = detect_unknown_pool(state, thresholds, residual, cfg.passes)
            issued_before = oracle.labels_issued
            groups, false_ids = label_with_teacher(found.unknown, oracle, cfg.budget)
            for t, g in groups.items():
                pending[t] = Dataset.concat([pending[t], g]) if t in pending else g
            residual = residual.drop_ids(i for g in groups.values() for i in g.ids)
            if not pending:
                if len(found.unknown) or not len(residual):
                    # stream used up, or every detection was known or over budget
                    session.stop_reason = "exhausted"
                    break
                idle += 1
                if idle >= cfg.patience:
                    session.stop_reason = "stalled"
                    break
                continue
            idle = 0

            truth = choose_next_category(pending)
            label = state.n_categories + 1
            new = pending.pop(truth)
            new = new.with_labels(np.full(len(new), label))
            state = incorporate_category(state, new, alpha, beta, cfg.M, cfg.init, seed=cfg.train_seed + 1000 * it)
            state, _ = incremental_finetune(
                state, new, train_all, cfg.train_config(seed_offset=it, finetune=True), cfg.allometry
            )
            incorporated[truth] = label
            oracle.known.add(truth)
            train_all = Dataset.concat([train_all, new])
            used |= set(new.ids.tolist())
            thresholds = calibrate(state, train_all, cfg.epsilon, cfg.rho, cfg.confidence)
            report = snapshot()
        except ODNError as exc:
            exc.args = (f"iteration {it}: {exc}",)
            raise
        session.iterations.append(
            IterationRecord(
                iteration=it,
                added_truth=truth,
                added_source_label=int(split.label_map.get(truth, truth)),
                assigned_label=label,
                detected_unknown_count=len(found.unknown),
                false_detection_count=len(false_ids),
                teacher_labels_used=oracle.labels_issued - issued_before,
                training_samples=len(new),
                snapshot=report,
            )
        )
        log.info("iteration %d: truth %d -> label %d (%d samples)", it, truth, label, len(new))
    else:
        session.stop_reason = "max_iterations"

    session.labels_issued = oracle.labels_issued
    session.per_category_issued = dict(oracle.per_category_issued)
    session.state, session.thresholds, session.used_ids = state, thresholds, frozenset(used)
    assert n_known + len(session.iterations) == state.n_categories
    return session
