"""
Run directories, checkpoints and JSON reports.

Layout of a run directory::

    config.json          resolved config + its hash
    checkpoint.bin       parameters, lengthscales, context memory, config
    metrics.csv          per-epoch losses and test metrics (train)
    evaluation.csv       accuracy / ECE / NLL per split (eval)
    reliability.csv      confidence bins (eval)
    noise_sweep.csv      accuracy per noise level
    grid.csv             predictive probabilities over a mesh grid
    attention_probe.csv  attention weights of probe points
    report.json          OOD report, validated by report.schema.json
    ablation.csv         one row per ablation variant
"""
import json
import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from django.conf import settings
from pydantic import BaseModel, ConfigDict, Field

from experiments.config import build_config
from neural_processes.data_processing import save_to_json
from neural_processes.exceptions import IngestionError
from neural_processes.memory import ContextMemory

logger = logging.getLogger("experiments.artifacts")

CHECKPOINT_FORMAT = 1
CHECKPOINT_NAME = "checkpoint.bin"
CONFIG_NAME = "config.json"
REPORT_NAME = "report.json"
REPORT_SCHEMA_NAME = "report.schema.json"
RUN_INDEX_NAME = "runs_historical.json"


class OODReport(BaseModel):
    """Separation of ID and OOD inputs by predictive uncertainty (OOD is the positive class)."""

    model_config = ConfigDict(extra="forbid")

    auroc_entropy: float = Field(ge=0.0, le=1.0)
    auroc_mc_variance: Optional[float] = Field(None, ge=0.0, le=1.0)
    n_id: int = Field(ge=1)
    n_ood: int = Field(ge=1)
    ood_source: str
    score: str
    config_hash: str


def artifact_root():
    return settings.MNP_ARTIFACT_ROOT


def run_directory(command, config, run_dir=None):
    """Directory for a command's outputs; defaults to <root>/<command>-<config hash prefix>."""
    path = run_dir or os.path.join(artifact_root(), f"{command}-{config.hash[:12]}")
    os.makedirs(path, exist_ok=True)
    return path


def write_config(config, path):
    data = {"config": config.model_dump(mode="json"), "config_hash": config.hash}
    save_to_json(data, CONFIG_NAME, path, overwrite=True)
    return os.path.join(path, CONFIG_NAME)


def record_run(command, config, path, summary):
    """Append one entry to the artifact root's run history."""
    entry = {"command": command, "config_hash": config.hash, "run_dir": os.path.abspath(path)}
    entry.update(summary)
    save_to_json([entry], RUN_INDEX_NAME, artifact_root())


@dataclass
class Checkpoint:
    config: object
    dims: list
    n_classes: int
    parameters: dict
    memory: ContextMemory
    config_hash: str


def save_checkpoint(path, model, config):
    """Write every parameter, lengthscale and the context memory into one ``.npz`` container."""
    arrays = {f"param.{name}": value for name, value in model.state_dict().items()}
    arrays.update(model.memory.to_state())
    arrays["meta.format"] = np.array(CHECKPOINT_FORMAT)
    arrays["meta.config"] = np.array(config.to_json())
    arrays["meta.config_hash"] = np.array(config.hash)
    arrays["meta.dims"] = np.array(model.dims, dtype=np.intp)
    arrays["meta.n_classes"] = np.array(model.n_classes)
    with open(path, "wb") as file:
        np.savez(file, **arrays)
    logger.info(f"checkpoint written to {path} ({len(arrays)} arrays)")
    return path


def load_checkpoint(path):
    if not os.path.exists(path):
        raise IngestionError(f"checkpoint {path} does not exist")
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {key: data[key] for key in data.files}
    except (OSError, ValueError) as e:
        raise IngestionError(f"{path} is not a readable checkpoint: {e}") from e
    if int(arrays.get("meta.format", -1)) != CHECKPOINT_FORMAT:
        raise IngestionError(f"{path} has an unsupported checkpoint format")
    try:
        config = build_config(json.loads(str(arrays["meta.config"])))
        checkpoint = Checkpoint(
            config=config,
            dims=[int(d) for d in arrays["meta.dims"]],
            n_classes=int(arrays["meta.n_classes"]),
            parameters={key[len("param."):]: value for key, value in arrays.items() if key.startswith("param.")},
            memory=ContextMemory.from_state({k: v for k, v in arrays.items() if k.startswith("memory.")}),
            config_hash=str(arrays["meta.config_hash"]),
        )
    except (KeyError, ValueError) as e:
        raise IngestionError(f"{path} is not a valid checkpoint: {e}") from e
    if checkpoint.config_hash != config.hash:
        raise IngestionError(f"{path}: stored config hash does not match its config")
    return checkpoint


def write_report(report, path):
    save_to_json(report.model_dump(mode="json"), REPORT_NAME, path, overwrite=True)
    save_to_json(OODReport.model_json_schema(), REPORT_SCHEMA_NAME, path, overwrite=True)
    return os.path.join(path, REPORT_NAME)
