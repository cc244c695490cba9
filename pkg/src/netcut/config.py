"""Flat ``key = value`` run configuration files."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .architecture import ArchGraph, build_chain, load_graph
from .data import Dataset, load_idx, load_text, split, synth_blobs
from .errors import ConfigError
from .training import TrainConfig

DATASET_KEYS = {
    "blobs": {"blobs_n_per_class", "blobs_dim", "blobs_classes", "blobs_spread", "blobs_seed",
              "train_size"},
    "idx": {"idx_train_images", "idx_train_labels", "idx_test_images", "idx_test_labels",
            "train_limit", "test_limit"},
    "text": {"text_train", "text_test"},
}
ARCH_KEYS = {"chain": {"n_layers"}, "graph": {"graph_file"}}


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: str = "blobs"
    arch: str = "chain"
    out_dir: str = "out"
    seeds: tuple[int, ...] = ()
    input_scale: float = 1.0
    # blobs
    blobs_n_per_class: int = 250
    blobs_dim: int = 16
    blobs_classes: int = 4
    blobs_spread: float = 0.3
    blobs_seed: int = 0
    train_size: int = 800
    # idx
    idx_train_images: str = ""
    idx_train_labels: str = ""
    idx_test_images: str = ""
    idx_test_labels: str = ""
    train_limit: int = 0
    test_limit: int = 0
    # text
    text_train: str = ""
    text_test: str = ""
    # architecture
    n_layers: int = 12
    width: int = 32
    graph_file: str = ""
    base_dir: Path = Path(".")

    def path(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def load_data(self) -> tuple[Dataset, Optional[Dataset]]:
        if self.dataset == "blobs":
            ds = synth_blobs(self.blobs_n_per_class, self.blobs_dim, self.blobs_classes,
                             self.blobs_spread, self.blobs_seed)
            if not 0 < self.train_size <= len(ds):
                raise ConfigError(f"train_size must lie in (0, {len(ds)}]")
            tr, te = split(ds, self.train_size, self.blobs_seed)
            te = te if len(te) else None
        elif self.dataset == "idx":
            tr = load_idx(self.path(self.idx_train_images), self.path(self.idx_train_labels))
            te = None
            if self.idx_test_images:
                te = load_idx(self.path(self.idx_test_images), self.path(self.idx_test_labels))
            if self.train_limit:
                tr = tr.subset(np.arange(min(self.train_limit, len(tr))))
            if te is not None and self.test_limit:
                te = te.subset(np.arange(min(self.test_limit, len(te))))
        else:
            tr = load_text(self.path(self.text_train))
            te = load_text(self.path(self.text_test), tr.classes) if self.text_test else None
        if self.input_scale != 1.0:
            tr = tr.scaled(self.input_scale)
            te = te.scaled(self.input_scale) if te is not None else None
        return tr, te

    def build_arch(self, in_dim: int, classes: int) -> ArchGraph:
        if self.arch == "chain":
            return build_chain(self.n_layers, self.width, in_dim, classes)
        return load_graph(self.path(self.graph_file), in_dim, classes)


def _convert(raw: str, current, key: str):
    try:
        if isinstance(current, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(int(v) for v in raw.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from exc
    return raw


_TRAIN_TYPES = {"epochs": int, "batch_size": int, "learning_rate": float, "head_lr": float,
                "beta": float, "scheme": str, "init": str, "init_kappa": float,
                "init_scale": float, "seed": int, "single_head": int}


def parse_config(text: str, base_dir=".") -> RunConfig:
    cfg = RunConfig(base_dir=Path(base_dir))
    own = {f.name for f in dataclasses.fields(RunConfig)} - {"train", "base_dir"}
    train_kw = {}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or not key or not value:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        if key in _TRAIN_TYPES:
            try:
                train_kw[key] = _TRAIN_TYPES[key](value)
            except ValueError as exc:
                raise ConfigError(f"{key}: cannot parse {value!r}") from exc
        elif key in own:
            setattr(cfg, key, _convert(value, getattr(cfg, key), key))
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")

    if cfg.dataset not in DATASET_KEYS:
        raise ConfigError(f"unknown dataset source {cfg.dataset!r}")
    if cfg.arch not in ARCH_KEYS:
        raise ConfigError(f"unknown architecture source {cfg.arch!r}")
    for name, keys in DATASET_KEYS.items():
        if name != cfg.dataset and seen & keys:
            raise ConfigError(f"keys {sorted(seen & keys)} belong to dataset source {name!r}, "
                              f"but dataset = {cfg.dataset}")
    for name, keys in ARCH_KEYS.items():
        if name != cfg.arch and seen & keys:
            raise ConfigError(f"keys {sorted(seen & keys)} belong to architecture {name!r}, "
                              f"but arch = {cfg.arch}")
    if cfg.dataset == "idx" and not (cfg.idx_train_images and cfg.idx_train_labels):
        raise ConfigError("dataset = idx needs idx_train_images and idx_train_labels")
    if cfg.dataset == "text" and not cfg.text_train:
        raise ConfigError("dataset = text needs text_train")
    if cfg.arch == "graph" and not cfg.graph_file:
        raise ConfigError("arch = graph needs graph_file")
    if cfg.input_scale <= 0:
        raise ConfigError("input_scale must be positive")
    cfg.train = TrainConfig(**train_kw)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path.parent)
