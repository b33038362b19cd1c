"""
Encoders de contexto por modalidad y agregacion bayesiana multimodal.

Para la modalidad m las filas de contexto cat[C_X; C_Y] se codifican de cuatro
formas: (r, s) alimentan los terminos de verosimilitud especificos de cada
objetivo, ponderados por la atencion, y (u, q) los terminos previos con peso
uniforme. Las varianzas pasan por h+ = 0.01 + 0.99 * softplus(h). ``mba_fuse``
combina todos los terminos en una gaussiana diagonal por objetivo sumando
precisiones.
"""
from dataclasses import dataclass

import numpy as np

from neural_processes.exceptions import ContractError
from neural_processes.nn import FeedForward, Module
from neural_processes.tensor import LEAKY_RELU_SLOPE, Tensor, concat, matmul, softplus

VARIANCE_FLOOR = 0.01
AGGREGATIONS = ("mba", "mean", "concat")


def positive(h):
    return VARIANCE_FLOOR + (1.0 - VARIANCE_FLOOR) * softplus(h)


@dataclass
class LatentGaussian:
    """Gaussiana diagonal por fila objetivo: media y varianza, ambas [N_T, d_e]."""

    mean: Tensor
    variance: Tensor

    def sample(self, noise):
        """Muestra reparametrizada media + sqrt(varianza) * ruido."""
        return self.mean + self.variance.sqrt() * noise


class ModalityEncoders(Module):
    def __init__(self, in_features, n_classes, latent_dim, rng, slope=LEAKY_RELU_SLOPE):
        width = in_features + n_classes
        self.phi = FeedForward(width, latent_dim, latent_dim, rng, normalise=True, slope=slope)
        self.psi = FeedForward(width, latent_dim, latent_dim, rng, normalise=True, slope=slope)
        self.theta = FeedForward(width, latent_dim, latent_dim, rng, normalise=True, slope=slope)
        self.omega = FeedForward(width, latent_dim, latent_dim, rng, normalise=True, slope=slope)

    @staticmethod
    def _rows(context_x, context_y):
        return concat([context_x, Tensor(context_y)], axis=1)

    def encode_context(self, context_x, context_y):
        """(r, s): representaciones de contexto por fila, cada una [N, d_e]; s >= 0.01."""
        rows = self._rows(context_x, context_y)
        return self.phi(rows), positive(self.psi(rows))

    def mean_context(self, context_x, context_y):
        """(u, q): promedios uniformes sobre las filas de contexto, cada uno [1, d_e]; q >= 0.01."""
        rows = self._rows(context_x, context_y)
        return self.theta(rows).mean(axis=0, keepdims=True), positive(self.omega(rows)).mean(axis=0, keepdims=True)


def target_specific(attention, r, s):
    """Representaciones de contexto ponderadas por la atencion (r*, s*), cada una [N_T, d_e]."""
    return matmul(attention, r), matmul(attention, s)


def mba_fuse(terms):
    """
    Fusiona los terminos gaussianos de cada modalidad en una posterior por objetivo.

    Args:
        terms (list[tuple]): una tupla (r*, s*, u, q) por modalidad; r*, s* son
            [N_T, d_e], u, q son [1, d_e] o [N_T, d_e].

    Returns:
        LatentGaussian: varianza [sum_m (1/s* + 1/q)]^-1 y
        media varianza * sum_m (r*/s* + u/q), todo elemento a elemento.

    Raises:
        ContractError: sin terminos, o una varianza que no es estrictamente positiva.
    """
    if not terms:
        raise ContractError("mba_fuse needs at least one modality")
    precision, weighted = None, None
    for r_star, s_star, u, q in terms:
        for name, var in (("s*", s_star), ("q", q)):
            data = var.data if isinstance(var, Tensor) else np.asarray(var)
            if not np.all(data > 0):
                raise ContractError(f"variance {name} must be strictly positive")
        term_precision = 1.0 / s_star + 1.0 / q
        term_weighted = r_star / s_star + u / q
        precision = term_precision if precision is None else precision + term_precision
        weighted = term_weighted if weighted is None else weighted + term_weighted
    variance = 1.0 / precision
    return LatentGaussian(mean=variance * weighted, variance=variance)


def aggregate_baseline(kind, r_stars, concat_mlp=None):
    """
    Latente determinista para las ablaciones Mean y Concat.

    Mean promedia las representaciones especificas de cada objetivo; Concat pasa
    su concatenacion por features a traves de ``concat_mlp``. Ambas dan [N_T, d_e].
    """
    if kind == "mean":
        total = r_stars[0]
        for r_star in r_stars[1:]:
            total = total + r_star
        return total * (1.0 / len(r_stars))
    if kind == "concat":
        if concat_mlp is None:
            raise ContractError("concat aggregation needs its MLP")
        return concat_mlp(concat(list(r_stars), axis=1))
    raise ContractError(f"baseline aggregation must be 'mean' or 'concat', got '{kind}'")
