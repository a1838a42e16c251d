"""Open-set evaluation protocol, experiment drivers and report emission."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping

import numpy as np

from .classifier import ClassifierState, predict
from .dataset import Dataset, OpenSplit, fmt_float
from .errors import ConfigError, ODNError, ProtocolError
from .thresholds import TripletThresholds, detect_batch

if TYPE_CHECKING:
    from .config import SessionConfig


@dataclass
class MetricsReport:
    overall_accuracy: float
    known_accuracy: float
    unknown_accuracy: float
    known_correct: int
    known_total: int
    unknown_correct: int
    unknown_total: int
    # category -> (correct, total); knowns by label, unknowns by split truth id
    per_category_counts: dict = field(default_factory=dict)
    n_known_at_eval: int = 0
    openness_unknown_count: int = 0
    empty_categories: list = field(default_factory=list)

    @property
    def per_category(self) -> dict[int, float]:
        return {c: _frac(k, n) for c, (k, n) in sorted(self.per_category_counts.items())}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_category_counts"] = {str(c): list(v) for c, v in sorted(self.per_category_counts.items())}
        d["per_category"] = {str(c): a for c, a in self.per_category.items()}
        return d


def _frac(k: int, n: int) -> float:
    return k / n if n else 0.0


def _tally(per_cat: dict, cats: np.ndarray, hits: np.ndarray) -> None:
    for c, h in zip(cats.tolist(), hits.tolist()):
        k, n = per_cat.get(c, (0, 0))
        per_cat[c] = (k + int(h), n + 1)


def _build(known_hits, known_cats, unknown_hits, unknown_cats, n_known) -> MetricsReport:
    per_cat: dict[int, tuple[int, int]] = {}
    _tally(per_cat, known_cats, known_hits)
    _tally(per_cat, unknown_cats, unknown_hits)
    kc, kt = int(known_hits.sum()), len(known_hits)
    uc, ut = int(unknown_hits.sum()), len(unknown_hits)
    return MetricsReport(
        overall_accuracy=_frac(kc + uc, kt + ut),
        known_accuracy=_frac(kc, kt),
        unknown_accuracy=_frac(uc, ut),
        known_correct=kc,
        known_total=kt,
        unknown_correct=uc,
        unknown_total=ut,
        per_category_counts=per_cat,
        n_known_at_eval=n_known,
        openness_unknown_count=len(np.unique(unknown_cats)),
    )


def evaluate_open(
    state: ClassifierState,
    thresholds: TripletThresholds,
    known_test: Dataset,
    unknown_test: Dataset,
    incorporated: Mapping[int, int] | None = None,
    exclude_ids: Iterable[int] = (),
) -> MetricsReport:
    """Score a model through the detector.

    ``incorporated`` maps an unknown truth id to the label it was assigned.
    Unknown-category samples whose category is not incorporated yet count as
    wrong whatever the detector says. ``exclude_ids`` are the ids used for
    training or calibration; any overlap with the test sets aborts.
    """
    incorporated = dict(incorporated or {})
    overlap = set(known_test.ids.tolist()) & set(unknown_test.ids.tolist())
    if overlap:
        raise ProtocolError(f"{len(overlap)} sample ids in both test partitions")
    leaked = set(exclude_ids) & (set(known_test.ids.tolist()) | set(unknown_test.ids.tolist()))
    if leaked:
        raise ProtocolError(f"{len(leaked)} test samples were used for training or calibration")

    def verdicts(ds: Dataset) -> np.ndarray:
        if not len(ds):
            return np.zeros(0, dtype=np.int64)
        return np.array([o.label or 0 for o in detect_batch(state, thresholds, ds.features)], dtype=np.int64)

    known_hits = verdicts(known_test) == known_test.labels
    target = np.array([incorporated.get(int(l), -1) for l in unknown_test.labels], dtype=np.int64)
    unknown_hits = verdicts(unknown_test) == target
    return _build(known_hits, known_test.labels, unknown_hits, unknown_test.labels, state.n_categories)


def evaluate_closed(state: ClassifierState, test: Dataset, labels: Iterable[int] | None = None) -> MetricsReport:
    """Plain argmax accuracy with no rejection.

    ``labels`` lists the categories expected in the report; those with no
    test samples are listed in ``empty_categories``.
    """
    if len(test) and (test.labels.min() < 1 or test.labels.max() > state.n_categories):
        raise ProtocolError("closed-set test contains labels the model does not know")
    pred = predict(state, test.features) if len(test) else np.zeros(0, dtype=np.int64)
    rep = _build(pred == test.labels, test.labels, np.zeros(0, bool), np.zeros(0, np.int64), state.n_categories)
    expected = range(1, state.n_categories + 1) if labels is None else labels
    rep.empty_categories = sorted(int(c) for c in expected if int(c) not in rep.per_category_counts)
    return rep


# ------------------------------------------------------------------------ drivers


def openness_sweep(ds: Dataset, n_known: int, unknown_counts: list[int], cfg: "SessionConfig") -> list[tuple[int, MetricsReport]]:
    """One full session per unknown-category count with a fixed known set."""
    from .openworld import run_open_world

    counts = sorted(set(int(c) for c in unknown_counts))
    if not counts or counts[0] < 0:
        raise ConfigError("unknown counts must be non-negative")
    if len(ds.label_set) < n_known + counts[-1]:
        raise ConfigError(f"dataset has {len(ds.label_set)} categories, need {n_known + counts[-1]}")
    full = _split_for(ds, n_known, cfg)
    order = sorted(full.unknown_labels)
    rows = []
    for u in counts:
        keep = set(order[:u])
        pool = full.unknown_pool.subset(k for k, l in enumerate(full.unknown_pool.labels) if int(l) in keep)
        split = replace(full, unknown_labels=frozenset(keep), unknown_pool=pool)
        log = run_open_world(split, cfg)
        rows.append((u, log.final_report))
    return rows


def _split_for(ds: Dataset, n_known: int, cfg: "SessionConfig") -> OpenSplit:
    from .dataset import make_open_split

    return make_open_split(ds, n_known, cfg.train_frac, cfg.split_seed)


def compare_init_strategies(split: OpenSplit, cfg: "SessionConfig", seeds: list[int]) -> list[dict]:
    """Mean-column vs norm-matched random-column initialisation, averaged over seeds.

    Rows: ``{"iteration", "arm", "accuracy"}`` with iteration 0 the initial model.
    """
    arms = {
        "mean": replace(cfg, init="emphasis", alpha=1.0, beta=0.0),
        "stochastic": replace(cfg, init="stochastic"),
    }
    return _arms_table(split, arms, seeds)


ABLATION_ARMS = ("simple-mean", "emphasis-only", "allometry-only", "both")


def ablation_arms(cfg: "SessionConfig") -> dict:
    return {
        "simple-mean": replace(cfg, emphasis=False, allometry=False),
        "emphasis-only": replace(cfg, emphasis=True, allometry=False),
        "allometry-only": replace(cfg, emphasis=False, allometry=True),
        "both": replace(cfg, emphasis=True, allometry=True),
    }


def ablation_table(split: OpenSplit, cfg: "SessionConfig", seeds: list[int]) -> list[dict]:
    return _arms_table(split, ablation_arms(cfg), seeds)


def _arms_table(split: OpenSplit, arms: dict, seeds: list[int]) -> list[dict]:
    from .openworld import run_open_world

    if len(seeds) < 2:
        raise ConfigError("need at least two seeds")
    rows = []
    for arm, arm_cfg in arms.items():
        curves = []
        for s in seeds:
            log = run_open_world(split, replace(arm_cfg, train_seed=int(s)))
            curves.append([log.initial.overall_accuracy] + [r.snapshot.overall_accuracy for r in log.iterations])
        length = max(len(c) for c in curves)
        # a run that stopped early keeps its last value for the remaining iterations
        padded = np.array([c + [c[-1]] * (length - len(c)) for c in curves])
        for it, acc in enumerate(padded.mean(axis=0)):
            rows.append({"iteration": it, "arm": arm, "accuracy": float(acc)})
    return rows


# ------------------------------------------------------------------------ emission

METRICS_COLUMNS = ("scope", "category", "correct", "total", "accuracy")
SWEEP_COLUMNS = ("unknown_count", "overall", "known", "unknown")
COMPARE_COLUMNS = ("iteration", "arm", "accuracy")


def metrics_rows(rep: MetricsReport) -> list[dict]:
    rows = [
        {"scope": "overall", "category": "", "correct": rep.known_correct + rep.unknown_correct,
         "total": rep.known_total + rep.unknown_total, "accuracy": rep.overall_accuracy},
        {"scope": "known", "category": "", "correct": rep.known_correct,
         "total": rep.known_total, "accuracy": rep.known_accuracy},
        {"scope": "unknown", "category": "", "correct": rep.unknown_correct,
         "total": rep.unknown_total, "accuracy": rep.unknown_accuracy},
    ]
    for c, (k, n) in sorted(rep.per_category_counts.items()):
        rows.append({"scope": "category", "category": c, "correct": k, "total": n, "accuracy": _frac(k, n)})
    return rows


def sweep_rows(table: list[tuple[int, MetricsReport]]) -> list[dict]:
    return [
        {"unknown_count": u, "overall": r.overall_accuracy, "known": r.known_accuracy, "unknown": r.unknown_accuracy}
        for u, r in table
    ]


def _cell(v) -> str:
    return fmt_float(v) if isinstance(v, float) else str(v)


def emit_report(rows: list[dict], columns: Iterable[str], fmt: str, path: str | Path, config: dict | None = None) -> Path:
    """Write rows as CSV or JSON with a fixed column order.

    CSV floats use 17 significant digits; ``config`` is echoed as a leading
    ``# config`` comment line in CSV and as a ``config`` key in JSON.
    """
    columns = list(columns)
    path = Path(path)
    try:
        if fmt == "csv":
            with path.open("w", newline="") as fh:
                if config is not None:
                    fh.write("# config " + json.dumps(config, sort_keys=True) + "\n")
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(columns)
                for r in rows:
                    w.writerow([_cell(r[c]) for c in columns])
        elif fmt == "json":
            doc = {"columns": columns, "rows": [{c: r[c] for c in columns} for r in rows]}
            if config is not None:
                doc = {"config": config, **doc}
            path.write_text(json.dumps(doc, indent=1, sort_keys=False) + "\n")
        else:
            raise ConfigError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise EmitError(f"cannot write {path}: {exc}") from exc
    return path


class EmitError(ODNError, OSError):
    stage = "emit"


def read_report(path: str | Path) -> list[dict]:
    """Parse a CSV written by :func:`emit_report` back into string-valued rows."""
    with Path(path).open(newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))
