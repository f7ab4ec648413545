"""One JSON run configuration covering every stage of the pipeline.

Sections map one-to-one onto the typed configs of the modules. Missing keys
take the module defaults; unknown keys are rejected with the offending key
named in the error.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .caf import CafConfig
from .data import PlantedShiftSpec
from .errors import ConfigError
from .model import ArchitectureSpec, TrainConfig
from .utr import PerturbationConfig, RiskThreshold

SEED_ENV = "UTRCAF_SEED"


@dataclass(frozen=True)
class EvalConfig:
    split_m: int | None = None  # None: half the bottleneck width
    angle_k: int = 10
    logme_max_iter: int = 1000
    logme_tol: float = 1e-6
    num_thresholds: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.split_m is not None and self.split_m < 1:
            raise ConfigError(f"eval.split_m must be positive, got {self.split_m}")
        if self.angle_k < 1:
            raise ConfigError(f"eval.angle_k must be positive, got {self.angle_k}")
        if self.logme_max_iter < 1:
            raise ConfigError(f"eval.logme_max_iter must be positive, got {self.logme_max_iter}")
        if not self.logme_tol > 0:
            raise ConfigError(f"eval.logme_tol must be positive, got {self.logme_tol}")
        if self.num_thresholds < 1:
            raise ConfigError(f"eval.num_thresholds must be positive, got {self.num_thresholds}")
        if self.seed < 0:
            raise ConfigError(f"eval.seed must be unsigned, got {self.seed}")


@dataclass(frozen=True)
class PathsConfig:
    source_data: str = "out/source.csv"
    target_data: str = "out/target.csv"
    manifest: str = "out/manifest.json"
    source_model: str = "out/source_model.json"
    utr_dir: str = "out/utr"
    adapt_dir: str = "out/adapt"
    eval_dir: str = "out/eval"


@dataclass(frozen=True)
class RunConfig:
    arch: ArchitectureSpec
    train: TrainConfig = field(default_factory=TrainConfig)
    perturb: PerturbationConfig = field(default_factory=PerturbationConfig)
    caf: CafConfig = field(default_factory=CafConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    data: PlantedShiftSpec = field(default_factory=PlantedShiftSpec)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, section: str, doc: Any, nested: dict[str, Any] | None = None):
    """Instantiate ``cls`` from a dict, rejecting keys it does not declare."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"section {section!r} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in doc:
        if key not in names:
            raise ConfigError(f"unknown key {section}.{key}")
    kwargs = dict(doc)
    for key, builder in (nested or {}).items():
        if key in kwargs:
            kwargs[key] = builder(kwargs[key])
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith(section) else f"{section}: {msg}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def _arch(doc: dict) -> ArchitectureSpec:
    doc = dict(doc or {})
    if "hidden_dims" in doc:
        doc["hidden_dims"] = tuple(doc["hidden_dims"])
    return _build(ArchitectureSpec, "arch", doc)


SECTIONS = ("arch", "train", "perturb", "caf", "eval", "data", "paths")


def _with_seed(doc: dict, seed: int) -> dict:
    doc = {k: (dict(v) if isinstance(v, dict) else v) for k, v in doc.items()}
    for section in ("train", "perturb", "eval", "data"):
        doc.setdefault(section, {})["seed"] = seed
    caf = doc.setdefault("caf", {})
    caf["train"] = dict(caf.get("train") or {}, seed=seed)
    caf["perturb"] = dict(caf.get("perturb") or doc["perturb"], seed=seed)
    return doc


def config_from_dict(doc: dict, seed_override: int | None = None) -> RunConfig:
    """Validate a parsed document; ``seed_override`` replaces every seed."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    for key in doc:
        if key not in SECTIONS:
            raise ConfigError(f"unknown key {key}")
    if seed_override is not None:
        if seed_override < 0:
            raise ConfigError(f"seed must be unsigned, got {seed_override}")
        doc = _with_seed(doc, seed_override)
    data = _build(PlantedShiftSpec, "data", doc.get("data"))
    arch_doc = dict(doc.get("arch") or {})
    arch_doc.setdefault("input_dim", data.input_dim)
    arch_doc.setdefault("num_classes", data.num_classes)
    arch = _arch(arch_doc)
    perturb = _build(PerturbationConfig, "perturb", doc.get("perturb"))
    caf_doc = dict(doc.get("caf") or {})
    # the calibration spectrum follows the top-level perturbation unless overridden
    caf_doc.setdefault("perturb", dataclasses.asdict(perturb))
    caf = _build(
        CafConfig,
        "caf",
        caf_doc,
        {
            "perturb": lambda d: _build(PerturbationConfig, "caf.perturb", d),
            "thr": lambda d: _build(RiskThreshold, "caf.thr", d),
            "train": lambda d: _build(TrainConfig, "caf.train", dict({"learning_rate": 0.001}, **(d or {}))),
        },
    )
    return RunConfig(
        arch=arch,
        train=_build(TrainConfig, "train", doc.get("train")),
        perturb=perturb,
        caf=caf,
        eval=_build(EvalConfig, "eval", doc.get("eval")),
        data=data,
        paths=_build(PathsConfig, "paths", doc.get("paths")),
    )


def env_seed() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def load_config(path: str | os.PathLike, seed_override: int | None = None) -> RunConfig:
    """Read and validate a config file.

    The seed precedence is: explicit ``seed_override``, then the
    ``UTRCAF_SEED`` environment variable, then the file.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    seed = seed_override if seed_override is not None else env_seed()
    return config_from_dict(doc, seed)

