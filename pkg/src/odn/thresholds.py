"""Per-category triplet thresholds and the accept / reject / distance cascade."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classifier import ClassifierState, activations, softmax
from .dataset import Dataset
from .errors import ConfigError, LoadError, ShapeError

INF = float("inf")


class Rule(str, enum.Enum):
    ACCEPT_TOP = "AcceptTop"
    REJECT_ALL_BELOW_MU = "RejectAllBelowMu"
    DISTANCE_ACCEPT = "DistanceAccept"
    DISTANCE_REJECT = "DistanceReject"


@dataclass(frozen=True)
class DetectionOutcome:
    label: int | None  # None means Unknown
    rule: Rule

    @property
    def known(self) -> bool:
        return self.label is not None


@dataclass(frozen=True, eq=False)
class TripletThresholds:
    """Accept (eta), reject (mu) and distance (delta) thresholds per category.

    Uncalibrated categories hold ``inf`` in all three slots, which disables
    both accepting rules for them.
    """

    eta: np.ndarray
    mu: np.ndarray
    delta: np.ndarray
    epsilon: float
    rho: float
    counts: np.ndarray
    confidence: str = "logit"

    def __post_init__(self):
        n = len(self.eta)
        if not (len(self.mu) == len(self.delta) == len(self.counts) == n):
            raise ShapeError("threshold arrays differ in length")
        if self.confidence not in ("logit", "softmax"):
            raise ConfigError("confidence must be 'logit' or 'softmax'")

    def __len__(self) -> int:
        return len(self.eta)

    @property
    def calibrated(self) -> np.ndarray:
        return self.counts > 0

    def scores(self, state: ClassifierState, x: np.ndarray) -> np.ndarray:
        """Confidence vectors in the space the thresholds were fitted in."""
        v = activations(state, x)
        return softmax(v) if self.confidence == "softmax" else v

    def to_dict(self) -> dict:
        def num(x):
            return None if not np.isfinite(x) else float(x)

        return {
            "epsilon": self.epsilon,
            "rho": self.rho,
            "confidence": self.confidence,
            "categories": [
                {
                    "id": i + 1,
                    "eta": num(self.eta[i]),
                    "mu": num(self.mu[i]),
                    "delta": num(self.delta[i]),
                    "count": int(self.counts[i]),
                    "calibrated": bool(self.counts[i] > 0),
                }
                for i in range(len(self))
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TripletThresholds":
        cats = sorted(doc["categories"], key=lambda c: c["id"])
        if [c["id"] for c in cats] != list(range(1, len(cats) + 1)):
            raise LoadError("threshold category ids must be 1..K")

        def val(c, key):
            return INF if not c["calibrated"] or c[key] is None else float(c[key])

        return cls(
            eta=np.array([val(c, "eta") for c in cats]),
            mu=np.array([val(c, "mu") for c in cats]),
            delta=np.array([val(c, "delta") for c in cats]),
            epsilon=float(doc["epsilon"]),
            rho=float(doc["rho"]),
            counts=np.array([int(c["count"]) for c in cats], dtype=np.int64),
            confidence=doc.get("confidence", "logit"),
        )


def second_max(v) -> float:
    """Second-largest entry; a duplicated maximum counts twice."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape[0] < 2:
        raise ShapeError("second_max needs at least two entries")
    return float(np.partition(v, -2)[-2])


def calibrate(
    state: ClassifierState,
    train: Dataset,
    epsilon: float = 0.5,
    rho: float = 0.5,
    confidence: str = "logit",
) -> TripletThresholds:
    """Fit thresholds from the correctly classified training samples of each category.

    eta_i is the mean top confidence, mu_i = epsilon * eta_i, and delta_i is rho
    times the mean gap between the top two confidences. Means run over the
    category's own correct samples.
    """
    if not 0 < epsilon <= 1:
        raise ConfigError("epsilon must lie in (0, 1]")
    if not rho > 0:
        raise ConfigError("rho must be positive")
    K = state.n_categories
    if K < 2:
        raise ShapeError("calibration needs at least two categories")
    if len(train) and (train.labels.min() < 1 or train.labels.max() > K):
        raise ShapeError("training labels must lie in 1..n_categories")

    if len(train):
        v = activations(state, train.features)
        if confidence == "softmax":
            v = softmax(v)
        pred = np.argmax(v, axis=1) + 1
        top2 = np.sort(v, axis=1)[:, -2:]
        ok = pred == train.labels
    eta = np.full(K, INF)
    delta = np.full(K, INF)
    counts = np.zeros(K, dtype=np.int64)
    for i in range(1, K + 1):
        if not len(train):
            break
        sel = ok & (train.labels == i)
        n = int(sel.sum())
        if n == 0:
            continue
        counts[i - 1] = n
        eta[i - 1] = top2[sel, 1].mean()
        delta[i - 1] = rho * (top2[sel, 1] - top2[sel, 0]).mean()
    mu = np.where(counts > 0, epsilon * eta, INF)
    return TripletThresholds(eta, mu, delta, float(epsilon), float(rho), counts, confidence)


def detect(v, t: TripletThresholds) -> DetectionOutcome:
    """Run the four-rule cascade on one confidence vector."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape[0] != len(t):
        raise ShapeError(f"vector length {v.shape[0]} != {len(t)} thresholds")
    l = int(np.argmax(v))
    top = v[l]
    if top > t.eta[l]:
        return DetectionOutcome(l + 1, Rule.ACCEPT_TOP)
    if np.all(v < t.mu):
        return DetectionOutcome(None, Rule.REJECT_ALL_BELOW_MU)
    if t.mu[l] <= top <= t.eta[l] and top - second_max(v) > t.delta[l]:
        return DetectionOutcome(l + 1, Rule.DISTANCE_ACCEPT)
    return DetectionOutcome(None, Rule.DISTANCE_REJECT)


def detect_batch(state: ClassifierState, t: TripletThresholds, x: np.ndarray) -> list[DetectionOutcome]:
    scores = t.scores(state, np.asarray(x, dtype=np.float64).reshape(-1, state.dim))
    return [detect(row, t) for row in scores]


def save_thresholds(t: TripletThresholds, path: str | Path, config: dict | None = None) -> None:
    doc = t.to_dict()
    if config is not None:
        doc["config"] = config
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_thresholds(path: str | Path) -> TripletThresholds:
    try:
        return TripletThresholds.from_dict(json.loads(Path(path).read_text()))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise LoadError(f"bad thresholds file: {exc}") from None
