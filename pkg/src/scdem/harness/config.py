"""JSON experiment configuration.

Schema (every section and key optional; defaults shown by ``default_config()``)::

    {
      "seed": 0,
      "data": {"n_classes": 10, "d_x": 32, "per_class": 100, "separation": 10.0,
               "noise": 1.0, "n_steps": 5, "csv_train": null, "csv_test": null},
      "backbones": {"count": 2, "trunk_widths": [64, 64], "d_z": 32, "tail_layers": 3,
                    "trunk_act": "tanh", "tail_act": "tanh", "source_classes": 32,
                    "source_per_class": 100, "source_separation": 4.0,
                    "pretrain_epochs": 30, "pretrain_lr": 0.003, "path": null},
      "train": {TrainConfig fields except "ot"},
      "ot": {"epsilon": 0.05, "max_iters": 200, "tol": 1e-6, "gradient": "implicit"},
      "routing": {"gamma": 1.0, "temperature": 1.0},
      "eval_modes": ["task_il", "class_il"]
    }
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields

from ..backbones import BackboneSpec
from ..engine import TrainConfig
from ..errors import ConfigurationError
from ..inference import RoutingConfig
from ..regularizers import OTConfig


@dataclass
class DataConfig:
    n_classes: int = 10
    d_x: int = 32
    per_class: int = 100
    separation: float = 10.0
    noise: float = 1.0
    n_steps: int = 5
    csv_train: str = None
    csv_test: str = None


@dataclass
class BackboneConfig:
    count: int = 2
    trunk_widths: list = field(default_factory=lambda: [64, 64])
    d_z: int = 32
    tail_layers: int = 3
    trunk_act: str = "tanh"
    tail_act: str = "tanh"
    source_classes: int = 32
    source_per_class: int = 100
    source_separation: float = 4.0
    pretrain_epochs: int = 30
    pretrain_lr: float = 3e-3
    path: str = None

    def spec(self, d_x):
        return BackboneSpec(d_x=d_x, trunk_widths=tuple(self.trunk_widths), d_z=self.d_z,
                            tail_layers=self.tail_layers, trunk_act=self.trunk_act, tail_act=self.tail_act)


@dataclass
class ExperimentConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    backbones: BackboneConfig = field(default_factory=BackboneConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    routing: RoutingConfig = field(default_factory=RoutingConfig)
    eval_modes: list = field(default_factory=lambda: ["task_il", "class_il"])

    def to_dict(self):
        d = asdict(self)
        d["ot"] = d["train"].pop("ot")
        return d

    def with_seed(self, seed):
        cfg = copy.deepcopy(self)
        cfg.seed = cfg.train.seed = int(seed)
        return cfg


def _build(cls, section, name):
    if section is None:
        return cls()
    if not isinstance(section, dict):
        raise ConfigurationError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigurationError(f"unknown keys in {name!r}: {sorted(unknown)}")
    try:
        return cls(**section)
    except TypeError as exc:
        raise ConfigurationError(f"bad {name!r} section: {exc}") from None


def config_from_dict(d):
    allowed = {"seed", "data", "backbones", "train", "ot", "routing", "eval_modes"}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigurationError(f"unknown top-level config keys: {sorted(unknown)}")
    train = dict(d.get("train") or {})
    if "ot" in train:
        raise ConfigurationError("put OT settings in the top-level 'ot' section")
    seed = int(d.get("seed", 0))
    train.setdefault("seed", seed)
    train["ot"] = _build(OTConfig, d.get("ot"), "ot")
    cfg = ExperimentConfig(
        seed=seed,
        data=_build(DataConfig, d.get("data"), "data"),
        backbones=_build(BackboneConfig, d.get("backbones"), "backbones"),
        train=_build(TrainConfig, train, "train"),
        routing=_build(RoutingConfig, d.get("routing"), "routing"),
        eval_modes=list(d.get("eval_modes", ["task_il", "class_il"])),
    )
    for m in cfg.eval_modes:
        if m not in ("task_il", "class_il"):
            raise ConfigurationError(f"unknown evaluation mode {m!r}")
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(raw)


def default_config():
    return ExperimentConfig()
