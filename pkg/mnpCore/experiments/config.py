"""
Experiment configuration.

``ExperimentConfig`` holds every hyperparameter of a run. Values are resolved
in order: field defaults, a named dataset preset, a JSON config file, then
explicit command-line overrides. The resolved config is hashed so that runs
can be compared field by field.
"""
import argparse
import hashlib
import json
import logging
import typing
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from neural_processes.attention import AttentionConfig
from neural_processes.exceptions import ConfigError
from neural_processes.memory import UpdateStrategy

logger = logging.getLogger("experiments.config")

# Per-dataset MNP hyperparameters: context memory size N^m, alpha, beta, tau.
PRESETS = {
    "handwritten": {"memory_size": 100, "alpha": 1.0, "beta": 1.0, "tau": 0.25},
    "cub": {"memory_size": 200, "alpha": 0.03, "beta": 1.0, "tau": 0.01},
    "pie": {"memory_size": 300, "alpha": 1.0, "beta": 1.0, "tau": 0.1},
    "caltech101": {"memory_size": 700, "alpha": 1.0, "beta": 1.0, "tau": 0.01},
    "scene15": {"memory_size": 300, "alpha": 0.0001, "beta": 1.0, "tau": 0.5},
    "hmdb": {"memory_size": 400, "alpha": 1.0, "beta": 1.0, "tau": 0.01},
    "cifar10c": {"memory_size": 200, "alpha": 1.0, "beta": 1.0, "tau": 0.01},
}

SYNTHETIC_CLASSES = 2


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    # data
    dataset: Literal["moons", "views", "files"] = "moons"
    n_train: int = Field(1000, ge=2)
    n_test: int = Field(200, ge=2)
    moons_noise: float = Field(0.15, ge=0.0)
    n_views: int = Field(2, ge=2)
    view_noise: float = Field(0.05, ge=0.0)
    feature_paths: list[str] = Field(default_factory=list)
    labels_path: Optional[str] = None
    n_classes: Optional[int] = Field(None, ge=2)
    split_ratio: float = Field(0.8, gt=0.0, lt=1.0)

    # model
    memory_size: int = Field(100, ge=1)
    latent_dim: int = Field(128, ge=1)
    n_samples: int = Field(5, ge=1)
    alpha: float = Field(1.0, ge=0.0)
    beta: float = Field(1.0, ge=0.0)
    tau: float = Field(0.1, gt=0.0)
    similarity: Literal["rbf", "dot"] = "rbf"
    normalisation: Literal["sparsemax", "softmax"] = "sparsemax"
    kernel_form: Literal["literal", "standard"] = "literal"
    memory_strategy: Literal["mse", "ce", "fifo", "random", "frozen"] = "mse"
    memory_scope: Literal["class_consistent", "literal"] = "class_consistent"
    aggregation: Literal["mba", "mean", "concat"] = "mba"
    rbf_loss: bool = True
    learn_lengthscale: bool = True
    lengthscale_init: float = Field(10.0, gt=0.0)
    # None: on for the synthetic 2-D datasets, identity for feature files
    feature_extractor: Optional[bool] = None
    extractor_width: int = Field(128, ge=1)

    # optimisation and evaluation
    epochs: int = Field(500, ge=1)
    batch_size: int = Field(200, ge=1)
    learning_rate: float = Field(1e-3, gt=0.0)
    eval_batch_size: int = Field(1000, ge=1)
    eval_every: int = Field(50, ge=1)
    ece_bins: int = Field(15, ge=1)
    uncertainty: Literal["entropy", "mc_variance"] = "entropy"
    seed: int = 0
    preset: Optional[str] = None

    @model_validator(mode="after")
    def check_consistency(self):
        if self.preset is not None and self.preset not in PRESETS:
            raise ValueError(f"unknown preset '{self.preset}', choose from {sorted(PRESETS)}")
        if self.dataset == "files":
            if not self.feature_paths or not self.labels_path:
                raise ValueError("dataset 'files' needs feature_paths and labels_path")
        elif self.memory_size % SYNTHETIC_CLASSES:
            raise ValueError(f"memory_size {self.memory_size} is not divisible by K={SYNTHETIC_CLASSES}")
        if self.n_classes is not None and self.memory_size % self.n_classes:
            raise ValueError(f"memory_size {self.memory_size} is not divisible by K={self.n_classes}")
        if self.uncertainty == "mc_variance" and self.n_samples < 2:
            raise ValueError("uncertainty 'mc_variance' needs n_samples >= 2")
        return self

    @property
    def use_feature_extractor(self):
        if self.feature_extractor is None:
            return self.dataset != "files"
        return self.feature_extractor

    @property
    def attention(self):
        return AttentionConfig(self.similarity, self.normalisation, self.kernel_form)

    @property
    def strategy(self):
        return UpdateStrategy(self.memory_strategy, self.memory_scope)

    def replace(self, **changes):
        """Validated copy with ``changes`` applied."""
        return build_config(self.model_dump(), changes)

    def to_json(self):
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    @property
    def hash(self):
        return config_hash(self)


def config_hash(config, exclude=()):
    """SHA-256 of the canonical JSON form, ignoring the fields in ``exclude``."""
    data = {k: v for k, v in config.model_dump(mode="json").items() if k not in exclude}
    return hashlib.sha256(json.dumps(data, sort_keys=True, separators=(",", ":")).encode("utf-8")).hexdigest()


def format_validation_error(error):
    parts = []
    for item in error.errors():
        field = ".".join(str(p) for p in item["loc"]) or "config"
        parts.append(f"{field}: {item['msg']}")
    return "; ".join(parts)


def load_config_file(path):
    try:
        with open(path, "r", encoding="utf-8") as file:
            data = json.load(file)
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def build_config(base=None, overrides=None, preset=None):
    """
    Resolve an ExperimentConfig.

    Args:
        base (dict, optional): values from a config file.
        overrides (dict, optional): explicit command-line values; None entries are ignored.
        preset (str, optional): named dataset preset applied below ``base`` and ``overrides``.

    Raises:
        ConfigError: unknown preset or any field-level validation failure.
    """
    base = dict(base or {})
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    preset = overrides.get("preset", base.get("preset", preset))
    values = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset '{preset}', choose from {sorted(PRESETS)}")
        values.update(PRESETS[preset])
        values["preset"] = preset
    values.update(base)
    values.update(overrides)
    try:
        config = ExperimentConfig(**values)
    except ValidationError as e:
        raise ConfigError(format_validation_error(e)) from e
    logger.debug(f"resolved config {config_hash(config)[:12]}")
    return config


def _unwrap_optional(annotation):
    args = [a for a in typing.get_args(annotation) if a is not type(None)]
    if typing.get_origin(annotation) is typing.Union and len(args) == 1:
        return args[0]
    return annotation


def cli_options(fields=None):
    """
    argparse specs mirroring ExperimentConfig fields.

    Yields (flag, kwargs) pairs; every default is None so that only flags given
    on the command line override the config file. Booleans get a ``--no-`` form.
    """
    for name, info in ExperimentConfig.model_fields.items():
        if fields is not None and name not in fields:
            continue
        annotation = _unwrap_optional(info.annotation)
        flag = f"--{name.replace('_', '-')}"
        kwargs = {"dest": name, "default": None, "help": f"(default: {info.get_default(call_default_factory=True)})"}
        if annotation is bool:
            kwargs["action"] = argparse.BooleanOptionalAction
        elif typing.get_origin(annotation) is Literal:
            kwargs["choices"] = list(typing.get_args(annotation))
        elif typing.get_origin(annotation) is list:
            kwargs["nargs"] = "+"
        else:
            kwargs["type"] = annotation
        yield flag, kwargs
