"""
Experiment drivers behind the management commands.

Everything here is a function of the resolved config (and a checkpoint for
the evaluation drivers). Random streams are derived from ``config.seed`` with
a fixed key per purpose, so evaluation never shifts the training stream.
"""
import logging
import multiprocessing
from dataclasses import dataclass

import numpy as np

from experiments.artifacts import OODReport
from experiments.config import build_config, config_hash
from neural_processes.attention import AttentionConfig
from neural_processes.datasets import (
    NOISE_LEVELS,
    NoiseSpec,
    inject_noise,
    load_feature_dataset,
    load_feature_matrices,
    make_moons,
    make_multimodal_views,
    mesh_grid,
    noise_subsets,
    padded_bounds,
    shift_features,
    view_maps,
)
from neural_processes.exceptions import ConfigError, ContractError, IngestionError, ProtocolError
from neural_processes.memory import ContextMemory
from neural_processes.metrics import accuracy, auroc, ece, nll, reliability_bins, uncertainty
from neural_processes.model import MNP, train_step
from neural_processes.optim import Adam

logger = logging.getLogger("experiments.runner")

# keys of the per-purpose random streams
BATCH_STREAM, EVAL_STREAM, MEMORY_STREAM, NOISE_STREAM = 2, 3, 4, 5

FAR_FIELD_OFFSET = 5.0
OOD_SHIFT = 10.0
CONTEXT_SIZES = (20, 50, 100, 200)

ABLATION_AXES = {
    "memory": [("random", {"memory_strategy": "random"}), ("fifo", {"memory_strategy": "fifo"}),
               ("ce", {"memory_strategy": "ce"}), ("mse", {"memory_strategy": "mse"})],
    "aggregation": [("mba", {"aggregation": "mba"}), ("mean", {"aggregation": "mean"}),
                    ("concat", {"aggregation": "concat"})],
    "attention": [(AttentionConfig(s, n).label, {"similarity": s, "normalisation": n})
                  for s in ("rbf", "dot") for n in ("softmax", "sparsemax")],
    "rbf-loss": [("with_rbf_loss", {"rbf_loss": True}), ("without_rbf_loss", {"rbf_loss": False})],
    "context-size": None,
}


def stream(config, key):
    return np.random.default_rng([config.seed, key])


def load_data(config):
    """(train, test) batches for the configured dataset."""
    if config.dataset == "moons":
        train = make_moons(config.n_train, config.moons_noise, config.seed)
        test = make_moons(config.n_test, config.moons_noise, config.seed + 1)
    elif config.dataset == "views":
        maps = view_maps(config.n_views, 2, config.seed)
        train = make_multimodal_views(make_moons(config.n_train, config.moons_noise, config.seed),
                                      config.n_views, config.seed, config.view_noise, maps)
        test = make_multimodal_views(make_moons(config.n_test, config.moons_noise, config.seed + 1),
                                     config.n_views, config.seed + 1, config.view_noise, maps)
    else:
        train, test = load_feature_dataset(config.feature_paths, config.labels_path, config.split_ratio,
                                           config.seed, config.n_classes)
    if config.memory_size % train.n_classes:
        raise ConfigError(f"memory_size: {config.memory_size} is not divisible by K={train.n_classes}")
    return train, test


def build_model(config, dims, n_classes):
    return MNP(
        dims, n_classes, latent_dim=config.latent_dim, attention=config.attention,
        aggregation=config.aggregation, memory_strategy=config.strategy, n_samples=config.n_samples,
        alpha=config.alpha, beta=config.beta, tau=config.tau, rbf_loss_enabled=config.rbf_loss,
        learn_lengthscale=config.learn_lengthscale, lengthscale_init=config.lengthscale_init,
        feature_extractor=config.use_feature_extractor, extractor_width=config.extractor_width, seed=config.seed,
    )


def restore_model(checkpoint, config=None):
    """
    Rebuild the checkpointed model.

    Raises:
        IngestionError: the stored parameters or memory do not fit the model the config describes.
    """
    config = config or checkpoint.config
    model = build_model(config, checkpoint.dims, checkpoint.n_classes)
    try:
        model.load_state_dict(checkpoint.parameters)
    except ContractError as e:
        raise IngestionError(f"checkpoint parameters do not match the configured model: {e}") from e
    memory = checkpoint.memory
    memory_dims = [block.shape[2] for block in memory.blocks]
    if memory_dims != model.dims or memory.n_classes != model.n_classes:
        raise IngestionError(f"checkpoint memory has dims {memory_dims} and {memory.n_classes} classes, "
                             f"model expects {model.dims} and {model.n_classes}")
    model.memory = memory
    return model


def _check_compatible(model, batch, what):
    if batch.dims != model.dims:
        raise IngestionError(f"{what} has modality dimensions {batch.dims}, model expects {model.dims}")


def predict(model, config, features, train=None, key=EVAL_STREAM):
    """
    Averaged probabilities [N, K] and per-sample draws [S, N, K].

    Under the random memory strategy every inference batch sees a fresh
    class-balanced draw from ``train``.
    """
    rng = stream(config, key)
    if config.memory_strategy != "random":
        return model.predict(features, batch_size=config.eval_batch_size, rng=rng)
    if train is None:
        raise ProtocolError("random memory strategy needs the training set at inference")
    probs, draws = [], []
    n = features[0].shape[0]
    for start in range(0, n, config.eval_batch_size):
        chunk = [x[start:start + config.eval_batch_size] for x in features]
        memory = model.memory.resample(train, rng)
        p, d = model.predict(chunk, memory=memory, rng=rng)
        probs.append(p)
        draws.append(d)
    return np.concatenate(probs, axis=0), np.concatenate(draws, axis=1)


@dataclass
class Evaluation:
    probs: np.ndarray
    draws: np.ndarray
    accuracy: float
    ece: float
    nll: float
    bins: list

    def as_row(self, prefix=""):
        return {f"{prefix}accuracy": self.accuracy, f"{prefix}ece": self.ece, f"{prefix}nll": self.nll}


def evaluate(model, config, batch, train=None):
    _check_compatible(model, batch, "evaluation set")
    probs, draws = predict(model, config, batch.features, train)
    return Evaluation(
        probs=probs, draws=draws, accuracy=accuracy(probs, batch.labels),
        ece=ece(probs, batch.labels, config.ece_bins), nll=nll(probs, batch.labels),
        bins=reliability_bins(probs, batch.labels, config.ece_bins),
    )


@dataclass
class TrainResult:
    model: MNP
    rows: list
    evaluation: Evaluation = None


def _mean_rows(rows):
    return {key: float(np.mean([row[key] for row in rows])) for key in rows[0]}


def train_model(config, train, test=None):
    """
    Train an MNP from scratch.

    Returns one metrics row per epoch with the mean loss components; test
    accuracy, ECE and NLL are added every ``eval_every`` epochs and after the
    last one.
    """
    model = build_model(config, train.dims, train.n_classes)
    model.memory = ContextMemory.init_random(train, config.memory_size // train.n_classes, seed=config.seed)
    optimiser = Adam(model.trainable_parameters(), lr=config.learning_rate)
    batch_rng, memory_rng = stream(config, BATCH_STREAM), stream(config, MEMORY_STREAM)
    logger.info(f"training {config.aggregation} MNP ({config.attention.label}) on {config.dataset}: "
                f"{train.n_samples} samples, M={train.n_modalities}, K={train.n_classes}, "
                f"N^m={config.memory_size}, {config.epochs} epochs")
    rows, evaluation = [], None
    for epoch in range(1, config.epochs + 1):
        reports = []
        for batch in train.batches(config.batch_size, batch_rng):
            if config.memory_strategy == "random":
                model.memory = model.memory.resample(train, memory_rng)
            reports.append(train_step(model, batch, optimiser).as_row())
        row = {"epoch": epoch, "steps": len(reports)}
        row.update(_mean_rows(reports))
        if test is not None and (epoch % config.eval_every == 0 or epoch == config.epochs):
            evaluation = evaluate(model, config, test, train)
            row.update(evaluation.as_row("test_"))
            logger.info(f"epoch {epoch}: loss={row['loss_total']:.4f} test_accuracy={evaluation.accuracy:.4f}")
        rows.append(row)
    return TrainResult(model, rows, evaluation)


def noise_sweep(model, config, test, train=None):
    """Accuracy per noise level, averaged over every ceil(M/2)-modality subset."""
    if test.n_modalities < 2:
        raise ProtocolError(f"the noise sweep needs M >= 2 modalities, got {test.n_modalities}")
    _check_compatible(model, test, "test set")
    subsets = noise_subsets(test.n_modalities)
    rows = []
    for level, std in enumerate(NOISE_LEVELS):
        scores = []
        for c, subset in enumerate(subsets):
            noisy = inject_noise(test, NoiseSpec(level, subset), seed=[config.seed, NOISE_STREAM, level, c])
            probs, _ = predict(model, config, noisy.features, train)
            scores.append(accuracy(probs, noisy.labels))
        rows.append({
            "level": level, "std": float(std), "n_combinations": len(subsets),
            "accuracy": float(np.mean(scores)), "accuracy_min": float(np.min(scores)),
            "accuracy_max": float(np.max(scores)),
        })
        logger.debug(f"noise level {level} (std={std:.4g}): accuracy {rows[-1]['accuracy']:.4f}")
    return rows


def default_probes(train):
    """A training point and a far-field point beyond the padded data bounds."""
    x = train.features[0]
    far = x.max(axis=0) + FAR_FIELD_OFFSET
    return [("train_point", x[0]), ("far_field", far)]


@dataclass
class GridResult:
    mesh: object
    probs: np.ndarray
    scores: np.ndarray
    grid_rows: list
    probe_rows: list


def grid(model, config, train, nx, ny, probes=None):
    """Predictive probabilities over a mesh grid plus attention rows of probe points."""
    if train.n_modalities != 1 or train.dims != [2]:
        raise ProtocolError(f"grid needs a single 2-D modality, got dims {train.dims}")
    mesh = mesh_grid(nx, ny, padded_bounds(train))
    probs, draws = predict(model, config, mesh.features, train)
    scores = uncertainty(probs, draws, config.uncertainty)
    grid_rows = []
    for point, p, score in zip(mesh.features[0], probs, scores):
        row = {"x": float(point[0]), "y": float(point[1])}
        row.update({f"p_class{k + 1}": float(p[k]) for k in range(model.n_classes)})
        row["uncertainty"] = float(score)
        grid_rows.append(row)

    probes = probes if probes is not None else default_probes(train)
    probe_rows = []
    if probes:
        points = np.array([p for _, p in probes], dtype=np.float64).reshape(len(probes), 2)
        weights = model.attention_matrix([points], 0)
        context_classes = model.memory.labels().argmax(axis=1)
        for (name, point), row in zip(probes, weights):
            for j, weight in enumerate(row):
                probe_rows.append({
                    "probe": name, "x": float(point[0]), "y": float(point[1]), "context_index": j,
                    "context_class": int(context_classes[j]) + 1, "weight": float(weight),
                })
    return GridResult(mesh, probs, scores, grid_rows, probe_rows)


def ood_batch(config, test, source, offset=OOD_SHIFT, paths=None):
    if source == "shifted":
        return shift_features(test, offset)
    if source == "copy":
        return test.with_features([x.copy() for x in test.features])
    if source == "files":
        if not paths:
            raise ConfigError("ood source 'files' needs --ood-paths")
        return load_feature_matrices(paths)
    raise ConfigError(f"unknown ood source '{source}'")


def ood_report(model, config, test, ood, source, train=None):
    """AUROC of ID (test) versus OOD inputs under both uncertainty scores."""
    _check_compatible(model, ood, "OOD set")
    probs_id, draws_id = predict(model, config, test.features, train)
    probs_ood, draws_ood = predict(model, config, ood.features, train)
    by_variance = None
    if config.n_samples >= 2 and config.aggregation == "mba":
        by_variance = auroc(uncertainty(probs_id, draws_id, "mc_variance"),
                            uncertainty(probs_ood, draws_ood, "mc_variance"))
    return OODReport(
        auroc_entropy=auroc(uncertainty(probs_id, kind="entropy"), uncertainty(probs_ood, kind="entropy")),
        auroc_mc_variance=by_variance, n_id=test.n_samples, n_ood=ood.n_samples, ood_source=source,
        score=config.uncertainty, config_hash=config.hash,
    )


def ablation_variants(axis, sizes=None):
    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis '{axis}', choose from {sorted(ABLATION_AXES)}")
    if axis == "context-size":
        return [(f"n{size}", {"memory_size": int(size)}) for size in (sizes or CONTEXT_SIZES)]
    return ABLATION_AXES[axis]


def run_variant(payload):
    """Train and score one ablation variant; runs in a worker process when --jobs > 1."""
    config_json, axis, label, ablated = payload
    config = build_config(config_json)
    train, test = load_data(config)
    result = train_model(config, train, test)
    model = result.model
    evaluation = result.evaluation or evaluate(model, config, test, train)
    report = ood_report(model, config, test, shift_features(test, OOD_SHIFT), "shifted", train)
    row = {
        "axis": axis, "variant": label, "config_hash": config.hash,
        "base_config_hash": config_hash(config, exclude=ablated),
        "accuracy": evaluation.accuracy, "ece": evaluation.ece, "nll": evaluation.nll,
        "auroc": report.auroc_entropy, "final_loss": result.rows[-1]["loss_total"],
    }
    if test.n_modalities >= 2:
        sweep = noise_sweep(model, config, test, train)
        row["noise_avg_accuracy"] = float(np.mean([r["accuracy"] for r in sweep]))
    return row


def ablate(config, axis, jobs=1, sizes=None):
    """One shared-seed run per variant of ``axis``; rows come back in variant order."""
    variants = ablation_variants(axis, sizes)
    ablated = sorted({field for _, changes in variants for field in changes})
    payloads = [(config.replace(**changes).model_dump(mode="json"), axis, label, ablated)
                for label, changes in variants]
    logger.info(f"ablation over '{axis}': {len(payloads)} variants, {jobs} worker(s)")
    if jobs > 1:
        with multiprocessing.Pool(processes=min(jobs, len(payloads))) as pool:
            return pool.map(run_variant, payloads)
    return [run_variant(payload) for payload in payloads]
