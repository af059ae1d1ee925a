"""Run configuration: one JSON document merging model, train and scene settings.

Schema::

    {"model": {...ModelConfig}, "train": {...TrainConfig}, "scene": {...SyntheticSceneConfig},
     "split": "path/to/split.json" | null, "paths": {name: path}}

Environment variables named ``KI2HOI__<SECTION>__<FIELD>`` override single
fields after the file is read; values are parsed as JSON when possible,
e.g. ``KI2HOI__TRAIN__LR=0.001``.  Nested loss weights use a third level:
``KI2HOI__TRAIN__LOSS__BOX=5``.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .model import ModelConfig
from .synthetic import SyntheticSceneConfig
from .training import TrainConfig

ENV_PREFIX = "KI2HOI__"
SECTIONS = ("model", "train", "scene", "split", "paths")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    scene: SyntheticSceneConfig = field(default_factory=SyntheticSceneConfig)
    split: str | None = None
    paths: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "scene": self.scene.to_dict(),
            "split": self.split,
            "paths": dict(self.paths),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "RunConfig":
        if not isinstance(doc, Mapping):
            raise ConfigError("run config must be a JSON object")
        unknown = set(doc) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        try:
            model = ModelConfig.from_dict(dict(doc.get("model", {})))
            train = TrainConfig.from_dict(dict(doc.get("train", {})))
            scene = SyntheticSceneConfig.from_dict(dict(doc.get("scene", {})))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        split = doc.get("split")
        if split is not None and not isinstance(split, str):
            raise ConfigError("split must be a path string or null")
        paths = doc.get("paths", {})
        if not isinstance(paths, Mapping) or not all(isinstance(v, str) for v in paths.values()):
            raise ConfigError("paths must map names to path strings")
        return cls(model, train, scene, split, dict(paths))


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_env_overrides(doc: dict, environ: Mapping[str, str] | None = None) -> dict:
    environ = os.environ if environ is None else environ
    doc = json.loads(json.dumps(doc))
    for key in sorted(environ):
        if not key.startswith(ENV_PREFIX):
            continue
        parts = [p.lower() for p in key[len(ENV_PREFIX):].split("__")]
        if not parts or parts[0] not in SECTIONS:
            raise ConfigError(f"environment override {key} names no config section")
        value = _parse_value(environ[key])
        if len(parts) == 1:
            doc[parts[0]] = value
            continue
        node = doc.setdefault(parts[0], {})
        for p in parts[1:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return doc


def load_run_config(path: str | Path | None = None, environ: Mapping[str, str] | None = None) -> RunConfig:
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
    return RunConfig.from_dict(apply_env_overrides(doc, environ))
