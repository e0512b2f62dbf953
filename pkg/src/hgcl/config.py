"""Run configuration: dataclasses plus the key=value config file format."""
from __future__ import annotations

import configparser
import io
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from .model import Ablations
from .objectives import LossConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Hyperparams:
    dim: int = 32
    layers: int = 2
    rank: int = 3
    alpha_user: float = 0.8
    alpha_item: float = 0.8
    batch_size: int = 2048
    learning_rate: float = 0.045
    epochs: int = 50
    seed: int = 0

    def validate(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if not self.layers <= 3:
            log.warning("layers=%d is outside the usual 1..3 range", self.layers)
        if not self.rank < self.dim:
            raise ValueError(f"rank must be < dim, got rank={self.rank}, dim={self.dim}")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        for name in ("alpha_user", "alpha_item"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    manifest: str = ""
    checkpoint: str = "out/model.ckpt"
    metrics_csv: str = "out/metrics.csv"
    epochs_jsonl: str = "out/epochs.jsonl"
    hyper: Hyperparams = field(default_factory=Hyperparams)
    loss: LossConfig = field(default_factory=LossConfig)
    ablations: Ablations = field(default_factory=Ablations)
    top_k: int = 10
    precision: str = "f64"
    eval_every: int = 5
    patience: int = 3          # 0 disables early stopping
    item_peer_cap: int = 10

    def validate(self) -> None:
        self.hyper.validate()
        self.loss.validate()
        if self.precision not in ("f64", "f32"):
            raise ValueError("precision must be f64 or f32")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.item_peer_cap < 1:
            raise ValueError("item_peer_cap must be >= 1")


_SCHEMA = {
    "data": {
        "manifest": ("manifest", str),
        "checkpoint": ("checkpoint", str),
        "metrics_csv": ("metrics_csv", str),
        "epochs_jsonl": ("epochs_jsonl", str),
    },
    "model": {
        "dim": ("hyper.dim", int),
        "layers": ("hyper.layers", int),
        "rank": ("hyper.rank", int),
        "alpha_user": ("hyper.alpha_user", float),
        "alpha_item": ("hyper.alpha_item", float),
        "precision": ("precision", str),
    },
    "loss": {
        "temperature": ("loss.temperature", float),
        "cl_user_weight": ("loss.cl_user_weight", float),
        "cl_item_weight": ("loss.cl_item_weight", float),
        "cl_weight": ("loss.cl_weight", float),
        "l2_weight": ("loss.l2_weight", float),
        "cl_negatives": ("loss.cl_negatives", str),
    },
    "train": {
        "batch_size": ("hyper.batch_size", int),
        "learning_rate": ("hyper.learning_rate", float),
        "epochs": ("hyper.epochs", int),
        "seed": ("hyper.seed", int),
        "top_k": ("top_k", int),
        "eval_every": ("eval_every", int),
        "patience": ("patience", int),
        "item_peer_cap": ("item_peer_cap", int),
        "ablate": ("ablate", str),
    },
}


def parse_config(path: str | Path) -> RunConfig:
    """Read a sectioned key=value config file; relative paths resolve next to it."""
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    with path.open("r", encoding="utf-8") as fh:
        parser.read_file(fh)
    base: dict = {}
    hyper: dict = {}
    loss: dict = {}
    ablate: list[str] = []
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ValueError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ValueError(f"{path}: unknown key {key!r} in [{section}]")
            target, conv = _SCHEMA[section][key]
            value = conv(raw)
            if target == "ablate":
                ablate = [v.strip() for v in raw.split(",") if v.strip()]
            elif target.startswith("hyper."):
                hyper[target[6:]] = value
            elif target.startswith("loss."):
                loss[target[5:]] = value
            else:
                base[target] = value
    for key in ("manifest", "checkpoint", "metrics_csv", "epochs_jsonl"):
        if key in base:
            base[key] = str((path.parent / base[key]).resolve())
    cfg = RunConfig(hyper=Hyperparams(**hyper), loss=LossConfig(**loss),
                    ablations=Ablations.from_names(ablate), **base)
    cfg.validate()
    return cfg


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form of a config (stable key order; round-trips exactly)."""
    parser = configparser.ConfigParser(interpolation=None)
    values = {
        "data": {
            "manifest": cfg.manifest,
            "checkpoint": cfg.checkpoint,
            "metrics_csv": cfg.metrics_csv,
            "epochs_jsonl": cfg.epochs_jsonl,
        },
        "model": {
            "dim": cfg.hyper.dim,
            "layers": cfg.hyper.layers,
            "rank": cfg.hyper.rank,
            "alpha_user": repr(cfg.hyper.alpha_user),
            "alpha_item": repr(cfg.hyper.alpha_item),
            "precision": cfg.precision,
        },
        "loss": {
            "temperature": repr(cfg.loss.temperature),
            "cl_user_weight": repr(cfg.loss.cl_user_weight),
            "cl_item_weight": repr(cfg.loss.cl_item_weight),
            "cl_weight": repr(cfg.loss.cl_weight),
            "l2_weight": repr(cfg.loss.l2_weight),
            "cl_negatives": cfg.loss.cl_negatives,
        },
        "train": {
            "batch_size": cfg.hyper.batch_size,
            "learning_rate": repr(cfg.hyper.learning_rate),
            "epochs": cfg.hyper.epochs,
            "seed": cfg.hyper.seed,
            "top_k": cfg.top_k,
            "eval_every": cfg.eval_every,
            "patience": cfg.patience,
            "item_peer_cap": cfg.item_peer_cap,
            "ablate": ",".join(cfg.ablations.names()),
        },
    }
    for section, keys in values.items():
        parser[section] = {k: str(v) for k, v in keys.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def config_from_text(text: str) -> RunConfig:
    """Parse a config snapshot (as stored in checkpoints); paths kept verbatim."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text)
    base: dict = {}
    hyper: dict = {}
    loss: dict = {}
    ablate: list[str] = []
    for section in parser.sections():
        for key, raw in parser.items(section):
            target, conv = _SCHEMA[section][key]
            if target == "ablate":
                ablate = [v.strip() for v in raw.split(",") if v.strip()]
            elif target.startswith("hyper."):
                hyper[target[6:]] = conv(raw)
            elif target.startswith("loss."):
                loss[target[5:]] = conv(raw)
            else:
                base[target] = conv(raw)
    return RunConfig(hyper=Hyperparams(**hyper), loss=LossConfig(**loss),
                     ablations=Ablations.from_names(ablate), **base)


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return replace(cfg, hyper=replace(cfg.hyper, seed=seed))


def with_ablations(cfg: RunConfig, names) -> RunConfig:
    return replace(cfg, ablations=Ablations.from_names(names))
