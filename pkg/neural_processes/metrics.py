"""Accuracy, calibracion, separacion OOD y puntajes de incertidumbre predictiva."""
from dataclasses import dataclass

import numpy as np
from sklearn.metrics import roc_auc_score

from neural_processes.exceptions import ContractError

ECE_BINS = 15
PROB_FLOOR = 1e-12
UNCERTAINTY_KINDS = ("entropy", "mc_variance")


def _check_pair(probs, targets):
    probs, targets = np.asarray(probs, dtype=np.float64), np.asarray(targets, dtype=np.float64)
    if probs.shape[0] == 0:
        raise ContractError("metrics need at least one sample")
    if probs.shape != targets.shape:
        raise ContractError(f"prediction shape {probs.shape} does not match label shape {targets.shape}")
    return probs, targets


def accuracy(probs, targets):
    probs, targets = _check_pair(probs, targets)
    return float(np.mean(probs.argmax(axis=1) == targets.argmax(axis=1)))


@dataclass
class ReliabilityBin:
    lower: float
    upper: float
    count: int
    accuracy: float
    confidence: float


def reliability_bins(probs, targets, n_bins=ECE_BINS):
    """
    Bins de confianza de igual ancho sobre [0, 1].

    El bin i cubre (i/b, (i+1)/b]; el primero tambien incluye la confianza 0.
    Los bins vacios reportan accuracy y confianza cero.
    """
    if n_bins < 1:
        raise ContractError(f"ECE needs at least one bin, got {n_bins}")
    probs, targets = _check_pair(probs, targets)
    confidence = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == targets.argmax(axis=1)).astype(np.float64)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    index = np.digitize(confidence, edges[1:-1], right=True)
    bins = []
    for i in range(n_bins):
        members = index == i
        count = int(members.sum())
        bins.append(ReliabilityBin(
            lower=float(edges[i]), upper=float(edges[i + 1]), count=count,
            accuracy=float(correct[members].mean()) if count else 0.0,
            confidence=float(confidence[members].mean()) if count else 0.0,
        ))
    return bins


def ece(probs, targets, n_bins=ECE_BINS):
    """Error de calibracion esperado: (1/n) * sum_i |B_i| * |acc(B_i) - conf(B_i)|."""
    bins = reliability_bins(probs, targets, n_bins)
    n = sum(b.count for b in bins)
    return float(sum(b.count * abs(b.accuracy - b.confidence) for b in bins) / n)


def nll(probs, targets):
    """Log-probabilidad negativa media de la clase correcta."""
    probs, targets = _check_pair(probs, targets)
    return float(-np.mean(np.log(np.maximum((probs * targets).sum(axis=1), PROB_FLOOR))))


def auroc(scores_id, scores_ood):
    """
    Probabilidad de que un puntaje OOD supere a uno ID; los empates cuentan un medio.

    OOD es la clase positiva.
    """
    scores_id, scores_ood = np.ravel(scores_id), np.ravel(scores_ood)
    if scores_id.size == 0 or scores_ood.size == 0:
        raise ContractError(f"AUROC needs ID and OOD scores, got {scores_id.size} and {scores_ood.size}")
    labels = np.r_[np.zeros(scores_id.size), np.ones(scores_ood.size)]
    return float(roc_auc_score(labels, np.r_[scores_id, scores_ood]))


def mc_variance(draws):
    """
    Varianza entre muestras Monte Carlo, promediada sobre las clases.

    Las desviaciones se toman respecto de la primera muestra, asi muestras
    identicas dan exactamente 0.
    """
    draws = np.asarray(draws, dtype=np.float64)
    if draws.ndim != 3 or draws.shape[0] < 2:
        raise ContractError("mc_variance needs at least two Monte Carlo draws")
    deviation = draws - draws[:1]
    variance = (deviation * deviation).mean(axis=0) - deviation.mean(axis=0) ** 2
    return np.maximum(variance, 0.0).mean(axis=1)


def uncertainty(probs, draws=None, kind="entropy"):
    """
    Incertidumbre por muestra; mayor es mas incierto.

    Args:
        probs (np.ndarray): probabilidades predictivas promediadas [N, K].
        draws (np.ndarray, opcional): salidas softmax por muestra [S, N, K], necesarias para ``mc_variance``.
        kind (str): "entropy" o "mc_variance".

    Returns:
        np.ndarray: un puntaje por fila de ``probs``.

    Raises:
        ContractError: tipo desconocido, o ``mc_variance`` con menos de dos muestras.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if kind == "entropy":
        return np.maximum(-(probs * np.log(np.maximum(probs, PROB_FLOOR))).sum(axis=1), 0.0)
    if kind == "mc_variance":
        if draws is None:
            raise ContractError("mc_variance needs at least two Monte Carlo draws")
        return mc_variance(draws)
    raise ContractError(f"uncertainty kind must be one of {UNCERTAINTY_KINDS}, got '{kind}'")
