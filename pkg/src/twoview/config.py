"""Training configuration and its key=value file form."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, fields, replace

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for both training stages.

    ``lambda1``/``lambda2`` weight the within-view decorrelation terms of the
    common loss, ``nu1``/``nu2`` the common/individual cross-decorrelation of
    the individual loss, ``gamma`` the contractive penalty on input gradients
    of the common score (elastic-net mix ``alpha``).
    """

    k: int = 50
    q: int | None = None
    lambda1: float = 10.0
    lambda2: float = 10.0
    nu1: float = 10.0
    nu2: float = 10.0
    gamma: float = 0.0
    alpha: float = 0.5
    lr: float = 2e-4
    batch_size: int = 2048
    epochs: int = 300
    seed: int = 0
    hidden: tuple = (500, 300)
    whiten: bool = True
    momentum: float = 0.9

    def __post_init__(self):
        if self.q is None:
            object.__setattr__(self, "q", self.k)
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.k < 1 or self.q < 1:
            raise ConfigError("k and q must be positive")
        for name in ("lambda1", "lambda2", "nu1", "nu2", "gamma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.lr <= 0 or self.epochs < 0:
            raise ConfigError("lr must be > 0 and epochs >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden sizes must be positive")

    def with_(self, **kw):
        return replace(self, **kw)


# keys accepted in run-config files beyond the TrainConfig fields
DATA_KEYS = (
    "mnist_dir",
    "train_view1",
    "train_view2",
    "test_view1",
    "test_view2",
    "train_labels",
    "test_labels",
    "max_train",
    "folds",
    "classifier",
    "eval_every",
    "layout",
)


@dataclass
class RunConfig:
    train: TrainConfig
    data: dict = field(default_factory=dict)


def _parse_bool(v):
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def parse_run_config(text):
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys fail."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    train_kw, data = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in data or key in train_kw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key == "hidden":
                train_kw[key] = tuple(int(h) for h in value.split(",") if h.strip())
            elif key in ("whiten",):
                train_kw[key] = _parse_bool(value)
            elif key in types:
                t = types[key]
                train_kw[key] = int(value) if "int" in str(t) else float(value)
            elif key in DATA_KEYS:
                data[key] = value
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from None
    for f in fields(TrainConfig):
        if f.name not in train_kw:
            log.info("config: %s not set, using default %r", f.name, f.default)
    return RunConfig(TrainConfig(**train_kw), data)


PATH_KEYS = ("mnist_dir", "train_view1", "train_view2", "test_view1", "test_view2",
             "train_labels", "test_labels")


def load_run_config(path):
    """Read a config file; relative data paths resolve against its directory."""
    with open(path, encoding="utf-8") as fh:
        run = parse_run_config(fh.read())
    base = os.path.dirname(os.path.abspath(path))
    for key in PATH_KEYS:
        if run.data.get(key):
            run.data[key] = os.path.join(base, os.path.expanduser(run.data[key]))
    return run
