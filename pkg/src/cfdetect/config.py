"""TOML run configuration, validated in full before any compute.

Example::

    seed = 13
    num_threads = 1

    [data.detect]
    train = "detect_train.csv"
    dev = "detect_dev.csv"      # optional; otherwise a seeded 90-10 split

    [data.spans]
    train = "spans_train.csv"

    [paths]
    checkpoint_dir = "runs/ckpt"
    report_dir = "runs/reports"

    [model]
    num_layers = 4

    [train]
    lr = 3e-4

    [train.spans]               # per-task overrides
    epochs = 100

Relative paths resolve against the config file's directory.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import tomli

from .encoder import ConfigError, ModelConfig
from .heads import DETECT, SPANS
from .training import TrainConfig

TASKS = (DETECT, SPANS)
_TOP_KEYS = {"seed", "num_threads", "split_ratio", "data", "paths", "model", "train"}


@dataclass(frozen=True)
class DataPaths:
    train: Optional[Path] = None
    dev: Optional[Path] = None
    test: Optional[Path] = None


@dataclass(frozen=True)
class RunConfig:
    seed: int
    model: ModelConfig
    train: dict  # task -> TrainConfig
    data: dict  # task -> DataPaths
    checkpoint_dir: Path
    report_dir: Path
    num_threads: int = 1
    split_ratio: float = 0.9
    source: Optional[Path] = None

    def with_seed(self, seed: int) -> "RunConfig":
        train = {t: replace(c, seed=seed) for t, c in self.train.items()}
        return replace(self, seed=seed, train=train)


def _table(raw: dict, key: str) -> dict:
    value = raw.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{key}] must be a table")
    return value


def _resolve(base: Path, value) -> Path:
    if not isinstance(value, str):
        raise ConfigError(f"path values must be strings, got {value!r}")
    p = Path(value)
    return p if p.is_absolute() else base / p


def parse_config(raw: dict, base: Path = Path(".")) -> RunConfig:
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if "seed" not in raw or not isinstance(raw["seed"], int):
        raise ConfigError("an integer 'seed' is required")
    seed = raw["seed"]
    num_threads = raw.get("num_threads", 1)
    if not isinstance(num_threads, int) or num_threads < 1:
        raise ConfigError("num_threads must be a positive integer")
    ratio = raw.get("split_ratio", 0.9)
    if not isinstance(ratio, (int, float)) or not 0 < ratio < 1:
        raise ConfigError("split_ratio must lie in (0, 1)")

    try:
        model = ModelConfig.from_dict(_table(raw, "model"))
    except TypeError as exc:
        raise ConfigError(f"[model]: {exc}") from None

    train_raw = dict(_table(raw, "train"))
    overrides = {t: train_raw.pop(t, {}) for t in TASKS}
    train = {}
    for task in TASKS:
        if not isinstance(overrides[task], dict):
            raise ConfigError(f"[train.{task}] must be a table")
        merged = {**train_raw, **overrides[task], "seed": seed}
        try:
            train[task] = TrainConfig.from_dict(merged)
        except TypeError as exc:
            raise ConfigError(f"[train.{task}]: {exc}") from None

    data_raw = _table(raw, "data")
    unknown = set(data_raw) - set(TASKS)
    if unknown:
        raise ConfigError(f"unknown [data] tasks: {sorted(unknown)}")
    data = {}
    for task in TASKS:
        entry = data_raw.get(task, {})
        if not isinstance(entry, dict) or set(entry) - {"train", "dev", "test"}:
            raise ConfigError(f"[data.{task}] accepts only train, dev, test")
        paths = {k: _resolve(base, v) for k, v in entry.items()}
        for k, p in paths.items():
            if not p.is_file():
                raise ConfigError(f"[data.{task}] {k}: file not found: {p}")
        data[task] = DataPaths(**paths)

    paths = _table(raw, "paths")
    if set(paths) - {"checkpoint_dir", "report_dir"}:
        raise ConfigError("[paths] accepts only checkpoint_dir and report_dir")
    return RunConfig(
        seed=seed,
        model=model,
        train=train,
        data=data,
        checkpoint_dir=_resolve(base, paths.get("checkpoint_dir", "checkpoints")),
        report_dir=_resolve(base, paths.get("report_dir", "reports")),
        num_threads=num_threads,
        split_ratio=float(ratio),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = tomli.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = parse_config(raw, path.parent)
    return replace(cfg, source=path)
