"""Run configuration files: one ``key = value`` per line, ``#`` starts a comment."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .data import FASHION_MNIST_CLASSES, ORACLE_MNIST_CLASSES, PreprocessSpec
from .errors import ConfigError
from .training import TrainConfig

DATASETS = ("fashionmnist", "oraclemnist", "imagefolder")
MODELS = ("resnet18", "vea_resnet18")

# key -> parser; order is the canonical serialization order
KEYS = {
    "dataset": str,
    "model": str,
    "train_images": str,
    "train_labels": str,
    "test_images": str,
    "test_labels": str,
    "train_dir": str,
    "test_dir": str,
    "class_names": str,
    "num_classes": int,
    "image_size": int,
    "train_limit": int,
    "test_limit": int,
    "initial_lr": float,
    "lr_halving_period_epochs": int,
    "lr_factor": float,
    "epochs": int,
    "batch_size": int,
    "momentum": float,
    "weight_decay": float,
    "seed": int,
    "output_dir": str,
}

DATASET_DEFAULTS = {
    "fashionmnist": {"image_size": 28, "initial_lr": 0.01, "num_classes": 10},
    "oraclemnist": {"image_size": 100, "initial_lr": 0.01, "num_classes": 10},
    "imagefolder": {"image_size": 100, "initial_lr": 0.1},
}
REQUIRED = {
    "fashionmnist": ("train_images", "train_labels", "test_images", "test_labels"),
    "oraclemnist": ("train_images", "train_labels", "test_images", "test_labels"),
    "imagefolder": ("train_dir", "test_dir"),
}
TRAIN_KEYS = ("initial_lr", "lr_halving_period_epochs", "lr_factor", "epochs", "batch_size",
              "momentum", "weight_decay", "seed")


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def set(self, key, raw):
        self.values[key] = _coerce(key, raw)

    # -- derived settings --------------------------------------------------------

    @property
    def dataset(self):
        return self.values["dataset"]

    @property
    def model(self):
        return self.values.get("model", "vea_resnet18")

    def resolved(self) -> dict:
        """Values with dataset defaults filled in."""
        out = dict(DATASET_DEFAULTS.get(self.dataset, {}))
        out["model"] = "vea_resnet18"
        out.update(self.values)
        return out

    def path(self, key) -> Path:
        p = Path(self.values[key])
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return self.path("output_dir")

    def train_config(self) -> TrainConfig:
        r = self.resolved()
        return TrainConfig(**{k: r[k] for k in TRAIN_KEYS if k in r})

    def preprocess(self) -> PreprocessSpec:
        size = self.resolved()["image_size"]
        return PreprocessSpec(target_size=(size, size))

    def class_names(self):
        if "class_names" in self.values:
            return tuple(s.strip() for s in self.values["class_names"].split(","))
        if self.dataset == "fashionmnist":
            return FASHION_MNIST_CLASSES
        if self.dataset == "oraclemnist":
            return ORACLE_MNIST_CLASSES
        return None

    def validate(self):
        if "dataset" not in self.values:
            raise ConfigError("missing required key 'dataset'")
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        for key in (*REQUIRED[self.dataset], "output_dir"):
            if key not in self.values:
                raise ConfigError(f"missing required key {key!r} for dataset {self.dataset}")
        try:
            self.train_config()
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        names = self.class_names()
        n = self.resolved().get("num_classes")
        if names is not None and n is not None and len(names) != n:
            raise ConfigError(f"num_classes {n} but {len(names)} class names")
        return self

    def serialize(self) -> str:
        return "".join(f"{k} = {_format(self.values[k])}\n" for k in KEYS if k in self.values)


def _format(v):
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(key, raw):
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    if not isinstance(raw, str):
        return KEYS[key](raw)
    try:
        return KEYS[key](raw.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str, base_dir=".") -> RunConfig:
    cfg = RunConfig(base_dir=Path(base_dir))
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key = key.strip()
        if key in cfg.values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            cfg.set(key, value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return parse_config(text, base_dir=path.parent)
