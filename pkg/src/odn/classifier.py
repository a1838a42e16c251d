"""Linear softmax classification layer that can grow new category columns.

Weights are stored as a ``(dim, K)`` matrix so column ``i - 1`` is the weight
vector of category ``i``. Every operation returns a new state.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, LoadError, NumericError, ShapeError, TrainingSetupError

CHECKPOINT_VERSION = 1


@dataclass(frozen=True, eq=False)
class ClassifierState:
    weights: np.ndarray  # (dim, K)
    biases: np.ndarray  # (K,)
    n_initial: int

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        b = np.array(self.biases, dtype=np.float64).reshape(-1)
        if w.ndim != 2 or w.shape[1] != b.shape[0]:
            raise ShapeError(f"weights {w.shape} do not match biases {b.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NumericError("classifier parameters must be finite")
        if not 0 <= self.n_initial <= w.shape[1]:
            raise ShapeError("n_initial must lie in [0, n_categories]")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def n_categories(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def zeros(cls, dim: int, n_categories: int) -> "ClassifierState":
        return cls(np.zeros((dim, n_categories)), np.zeros(n_categories), n_categories)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 30
    batch_size: int = 16
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.l2 < 0:
            raise ConfigError("l2 must be >= 0")


# ----------------------------------------------------------------------- inference


def activations(state: ClassifierState, x: np.ndarray) -> np.ndarray:
    """Pre-softmax scores ``x @ W + b``; accepts one vector or an (n, dim) batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != state.dim:
        raise ShapeError(f"feature length {x.shape[-1]} != classifier dim {state.dim}")
    return x @ state.weights + state.biases


def softmax(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NumericError("softmax input must be finite")
    z = np.exp(v - v.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def predict(state: ClassifierState, x: np.ndarray) -> int | np.ndarray:
    """1-based argmax; ``np.argmax`` already breaks ties toward the lowest index."""
    v = activations(state, x)
    return np.argmax(v, axis=-1) + 1 if v.ndim > 1 else int(np.argmax(v)) + 1


# ------------------------------------------------------------------------ training


def gradients(state: ClassifierState, x: np.ndarray, y: np.ndarray, l2: float = 0.0):
    """Batch-mean softmax cross-entropy gradient (plus ``l2/2 * ||W||^2``).

    ``y`` holds 1-based labels. Returns ``(grad_W, grad_b)``.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1, state.dim)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if len(x) != len(y) or len(y) == 0:
        raise ShapeError("batch features and labels must be non-empty and aligned")
    if y.min() < 1 or y.max() > state.n_categories:
        raise ShapeError("batch label outside 1..n_categories")
    p = softmax(x @ state.weights + state.biases)
    p[np.arange(len(y)), y - 1] -= 1.0
    n = len(y)
    grad_w = x.T @ p / n
    if l2:
        grad_w = grad_w + l2 * state.weights
    return grad_w, p.sum(axis=0) / n


def loss(state: ClassifierState, x: np.ndarray, y: np.ndarray, l2: float = 0.0) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1, state.dim)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    v = x @ state.weights + state.biases
    m = v.max(axis=1, keepdims=True)
    logz = (m + np.log(np.exp(v - m).sum(axis=1, keepdims=True))).ravel()
    ce = float(np.mean(logz - v[np.arange(len(y)), y - 1]))
    return ce + 0.5 * l2 * float(np.sum(state.weights**2))


def sgd_step(state: ClassifierState, x, y, cfg: TrainConfig) -> ClassifierState:
    gw, gb = gradients(state, x, y, cfg.l2)
    return ClassifierState(
        state.weights - cfg.learning_rate * gw,
        state.biases - cfg.learning_rate * gb,
        state.n_initial,
    )


def allometry_factors(n_initial: int, n_categories: int) -> np.ndarray:
    """Per-column learning-rate factors: 0.1 for old columns, 1.0 for new ones."""
    if not 0 <= n_initial <= n_categories:
        raise ValueError(f"n_initial ({n_initial}) must not exceed n_categories ({n_categories})")
    f = np.ones(n_categories)
    f[:n_initial] = 0.1
    return f


def sgd_step_allometric(state: ClassifierState, x, y, cfg: TrainConfig, factors) -> ClassifierState:
    """SGD step where column ``i`` moves by ``factors[i] * lr * grad_i``.

    The unscaled step is formed first and then multiplied by the factor, so
    all-ones factors reproduce :func:`sgd_step` bit for bit.
    """
    factors = np.asarray(factors, dtype=np.float64)
    if factors.shape != (state.n_categories,):
        raise ShapeError(f"expected {state.n_categories} factors, got {factors.shape}")
    gw, gb = gradients(state, x, y, cfg.l2)
    return ClassifierState(
        state.weights - (cfg.learning_rate * gw) * factors,
        state.biases - (cfg.learning_rate * gb) * factors,
        state.n_initial,
    )


def _run_epochs(state, ds: Dataset, cfg: TrainConfig, factors=None) -> ClassifierState:
    rng = np.random.default_rng(cfg.seed)
    n = len(ds)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = ds.features[idx], ds.labels[idx]
            if factors is None:
                state = sgd_step(state, xb, yb, cfg)
            else:
                state = sgd_step_allometric(state, xb, yb, cfg, factors)
    return state


def train_initial(ds: Dataset, cfg: TrainConfig) -> ClassifierState:
    """Zero-initialised mini-batch SGD on categories 1..N."""
    if len(ds) == 0:
        raise TrainingSetupError("cannot train on an empty dataset")
    labels = ds.label_set
    if labels != list(range(1, len(labels) + 1)):
        raise TrainingSetupError(f"labels must be exactly 1..N, got {labels}")
    return _run_epochs(ClassifierState.zeros(ds.dim, len(labels)), ds, cfg)


def finetune(state: ClassifierState, ds: Dataset, cfg: TrainConfig, factors=None) -> ClassifierState:
    if len(ds) == 0:
        raise TrainingSetupError("cannot fine-tune on an empty dataset")
    return _run_epochs(state, ds, cfg, factors)


# ----------------------------------------------------------------------- expansion


def emphasis_init(state: ClassifierState, mean_activation, M: int, alpha: float, beta: float):
    """Blend of the mean of all columns and the mean of the ``M`` most activated ones.

    Returns ``(column, bias)``; the bias is blended the same way.
    """
    a = np.asarray(mean_activation, dtype=np.float64).reshape(-1)
    K = state.n_categories
    if a.shape[0] != K:
        raise ShapeError(f"mean_activation has {a.shape[0]} entries, expected {K}")
    if not 1 <= M <= K:
        raise ConfigError(f"M must lie in 1..{K}, got {M}")
    top = np.sort(np.argsort(-a, kind="stable")[:M])
    w = alpha * state.weights.mean(axis=1) + beta * state.weights[:, top].mean(axis=1)
    b = alpha * state.biases.mean() + beta * state.biases[top].mean()
    return w, float(b)


def stochastic_column(state: ClassifierState, like: np.ndarray, seed: int) -> np.ndarray:
    """Random direction rescaled to the norm of ``like``."""
    g = np.random.default_rng(seed).normal(size=state.dim)
    return g * (np.linalg.norm(like) / np.linalg.norm(g))


def expand(state: ClassifierState, column, bias: float) -> ClassifierState:
    column = np.asarray(column, dtype=np.float64).reshape(-1)
    if column.shape[0] != state.dim:
        raise ShapeError(f"new column has length {column.shape[0]}, expected {state.dim}")
    return ClassifierState(
        np.column_stack([state.weights, column]),
        np.append(state.biases, float(bias)),
        state.n_categories,
    )


# ---------------------------------------------------------------------- checkpoint


def save_model(state: ClassifierState, path: str | Path, config: dict | None = None) -> None:
    """JSON checkpoint; weights column-major, floats in shortest round-trip form."""
    doc = {
        "format": "odn-classifier",
        "version": CHECKPOINT_VERSION,
        "dim": state.dim,
        "n_categories": state.n_categories,
        "n_initial": state.n_initial,
        "weights": state.weights.T.ravel().tolist(),
        "biases": state.biases.tolist(),
    }
    if config is not None:
        doc["config"] = config
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_model(path: str | Path) -> ClassifierState:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise LoadError(f"checkpoint is not valid JSON: {exc}") from None
    if doc.get("format") != "odn-classifier" or doc.get("version") != CHECKPOINT_VERSION:
        raise LoadError("unsupported checkpoint format or version")
    d, k = int(doc["dim"]), int(doc["n_categories"])
    w = np.asarray(doc["weights"], dtype=np.float64)
    if w.size != d * k or len(doc["biases"]) != k:
        raise LoadError("checkpoint sizes disagree with dim/n_categories")
    return ClassifierState(w.reshape(k, d).T, doc["biases"], int(doc["n_initial"]))
