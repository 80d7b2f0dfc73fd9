"""Experiment configuration: strict pydantic models, YAML files and ``--set`` overrides."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from hpqs.shots import NoisePreset, resolve_preset

TASKS = ("qml", "qt", "qpa-gen")
HASH_EXCLUDED = ("output_dir",)
VARIANTS = ("pqc_exact", "pqc_finite", "nqs", "hpqs_exact", "hpqs_finite")

# published hyperparameters per task: lambda, epochs, learning rate, optimizer
TASK_DEFAULTS = {
    "qml": {"lam": 0.1, "epochs": 5, "lr": 5e-3, "optimizer": "adam"},
    "qt": {"lam": 0.5, "epochs": 50, "lr": 1e-4, "optimizer": "adam"},
    "qpa-gen": {"lam": 0.5, "epochs": 3, "lr": 1e-5, "optimizer": "adamw"},
}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class QmlArch(_Strict):
    n_layers: int = Field(5, ge=1)
    hidden: int = Field(1, ge=1)
    affine_g: bool = True
    batch_size: int = Field(32, ge=1)
    classes: tuple[int, int] = (3, 6)
    train_limit: Optional[int] = Field(None, ge=1)
    test_limit: Optional[int] = Field(None, ge=1)


class QtArch(_Strict):
    target: str = "qt_cnn_6690"
    layers: int = Field(1, ge=1)
    nqs_hidden: int = Field(32, ge=1)
    bond_g: int = Field(2, ge=1)
    bond_h: int = Field(1, ge=1)
    mps_init: Literal["identity", "random"] = "random"
    mps_noise: float = Field(1e-2, ge=0)
    mps_scale: float = 0.2
    batch_size: int = Field(32, ge=1)
    train_limit: Optional[int] = Field(None, ge=1)
    test_limit: Optional[int] = Field(None, ge=1)


class QpaArch(_Strict):
    d: int = Field(64, ge=1)
    k: int = Field(64, ge=1)
    rank: int = Field(4, ge=1)
    alpha: float = 8.0
    n_mlp: int = Field(64, ge=1)
    layers: int = Field(8, ge=1)
    nqs_hidden: int = Field(32, ge=1)
    bond_g: int = Field(4, ge=1)
    bond_h: int = Field(2, ge=1)
    mps_init: Literal["identity", "random"] = "random"
    mps_noise: float = Field(1e-2, ge=0)
    mps_scale: float = 0.05
    samples: int = Field(256, ge=1)
    batch_size: int = Field(1, ge=1)


class ExperimentConfig(_Strict):
    task: Literal["qml", "qt", "qpa-gen"]
    variant: Literal["pqc_exact", "pqc_finite", "nqs", "hpqs_exact", "hpqs_finite"]
    lam: Optional[float] = Field(None, ge=0.0, le=1.0)
    shots: float = Field(20.0, gt=0)  # multiple of the Hilbert-space size
    noise: str = "ideal"
    noise_presets: dict[str, dict[str, float]] = Field(default_factory=dict)
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2], min_length=1)
    epochs: Optional[int] = Field(None, ge=1)
    lr: Optional[float] = Field(None, gt=0)
    optimizer: Optional[Literal["sgd", "adam", "adamw"]] = None
    weight_decay: float = Field(0.0, ge=0)
    data_dir: Optional[str] = None
    output_dir: str = "runs"
    qml: QmlArch = Field(default_factory=QmlArch)
    qt: QtArch = Field(default_factory=QtArch)
    qpa: QpaArch = Field(default_factory=QpaArch)

    @model_validator(mode="before")
    @classmethod
    def _task_defaults(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("task") in TASK_DEFAULTS:
            data = dict(data)
            for key, value in TASK_DEFAULTS[data["task"]].items():
                if data.get(key) is None:
                    data[key] = value
        return data

    @model_validator(mode="after")
    def _check(self) -> "ExperimentConfig":
        if any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be nonnegative")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError(f"duplicate seeds in {self.seeds}")
        self.noise_preset()  # raises KeyError naming an unknown preset
        return self

    @property
    def finite(self) -> bool:
        return self.variant.endswith("_finite")

    @property
    def effective_lam(self) -> float:
        """Variant wiring overrides the configured lambda for the single-branch baselines."""
        if self.variant.startswith("pqc"):
            return 1.0
        if self.variant == "nqs":
            return 0.0
        return float(self.lam)

    def noise_preset(self) -> NoisePreset:
        return resolve_preset(self.noise, self.noise_presets)

    def canonical(self) -> dict:
        return self.model_dump(mode="json")

    def config_hash(self) -> str:
        """Identity of the experiment; where results are written is not part of it."""
        body = {k: v for k, v in self.canonical().items() if k not in HASH_EXCLUDED}
        blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.canonical(), sort_keys=True)


def parse_override(text: str) -> tuple[list[str], Any]:
    """``a.b=value`` with the value parsed as YAML (numbers, lists, booleans)."""
    if "=" not in text:
        raise ValueError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    if not key:
        raise ValueError(f"override {text!r} has an empty key")
    return key.split("."), yaml.safe_load(raw)


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    data = json.loads(json.dumps(data))  # deep copy of plain data
    for text in overrides:
        path, value = parse_override(text)
        node = data
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValueError(f"override {text!r}: {part!r} is not a section")
        node[path[-1]] = value
    return data


def load_config(path=None, overrides: list[str] | None = None) -> ExperimentConfig:
    data = {}
    if path is not None:
        data = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(data, dict):
            raise ValueError(f"{path}: top level must be a mapping")
    return ExperimentConfig.model_validate(apply_overrides(data, overrides or []))
