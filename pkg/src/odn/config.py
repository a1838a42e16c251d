"""Session configuration: defaults, flat ``key = value`` files and validation."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .classifier import TrainConfig
from .errors import ConfigError


@dataclass(frozen=True)
class SessionConfig:
    # data source: csv path, or synthetic blobs when empty
    data: str = ""
    classes: int = 20
    per_class: int = 60
    dim: int = 32
    spread: float = 0.1
    separation: float = 10.0
    data_seed: int = 7

    n_known: int = 10
    train_frac: float = 0.8
    split_seed: int = 11

    epsilon: float = 0.5
    rho: float = 0.5
    confidence: str = "logit"

    alpha: float = 0.5
    beta: float = 0.5
    M: int = 5
    emphasis: bool = True
    allometry: bool = True
    init: str = "emphasis"

    budget: int = 8
    passes: int = 1
    max_iterations: int = 100
    patience: int = 3

    learning_rate: float = 0.1
    epochs: int = 30
    finetune_epochs: int = 30
    batch_size: int = 16
    l2: float = 1e-4
    train_seed: int = 13

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.classes >= 2, "classes must be >= 2"),
            (self.per_class >= 1, "per_class must be >= 1"),
            (self.dim >= 1, "dim must be >= 1"),
            (self.spread > 0 and self.separation > 0, "spread and separation must be positive"),
            (self.n_known >= 2, "n_known must be >= 2"),
            (0 < self.train_frac < 1, "train_frac must lie in (0, 1)"),
            (0 < self.epsilon <= 1, "epsilon must lie in (0, 1]"),
            (self.rho > 0, "rho must be positive"),
            (self.confidence in ("logit", "softmax"), "confidence must be logit or softmax"),
            (self.M >= 1, "M must be >= 1"),
            (self.init in ("emphasis", "stochastic"), "init must be emphasis or stochastic"),
            (self.budget >= 1, "budget must be >= 1"),
            (self.passes >= 1, "passes must be >= 1"),
            (self.max_iterations >= 0, "max_iterations must be >= 0"),
            (self.patience >= 1, "patience must be >= 1"),
            (self.learning_rate > 0, "learning_rate must be positive"),
            (self.epochs >= 1 and self.finetune_epochs >= 1, "epochs must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.l2 >= 0, "l2 must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def blend(self) -> tuple[float, float]:
        """(alpha, beta) actually used: emphasis off means the plain column mean."""
        return (self.alpha, self.beta) if self.emphasis else (1.0, 0.0)

    def train_config(self, seed_offset: int = 0, finetune: bool = False) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.finetune_epochs if finetune else self.epochs,
            batch_size=self.batch_size,
            l2=self.l2,
            seed=self.train_seed + seed_offset,
        )

    def with_seed(self, seed: int) -> "SessionConfig":
        """Derive every named seed from one base seed."""
        return dataclasses.replace(self, data_seed=seed, split_seed=seed + 1, train_seed=seed + 2)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def coerce(key: str, raw) -> object:
    types = {f.name: f.type for f in fields(SessionConfig)}
    if key not in types:
        raise ConfigError(f"unknown config key {key!r}")
    kind = types[key]
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if kind == "bool":
            if raw.lower() in _TRUE:
                return True
            if raw.lower() in _FALSE:
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def read_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = coerce(key, value)
    return out


def write_config_file(cfg: SessionConfig, path: str | Path) -> None:
    lines = []
    for k, v in cfg.to_dict().items():
        lines.append(f"{k} = {str(v).lower() if isinstance(v, bool) else v}")
    Path(path).write_text("\n".join(lines) + "\n")


def resolve(file_values: dict | None = None, overrides: dict | None = None) -> SessionConfig:
    """Defaults, then file values, then overrides (``None`` overrides are ignored)."""
    merged = dict(file_values or {})
    merged.update({k: coerce(k, v) for k, v in (overrides or {}).items() if v is not None})
    try:
        return SessionConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
