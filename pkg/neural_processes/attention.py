"""
Atencion entre filas objetivo y filas de la memoria de contexto.

La similitud es un kernel RBF-ARD con un lengthscale por modalidad o el
producto punto escalado; las filas se normalizan con Softmax o Sparsemax. La
combinacion por defecto es RBF + Sparsemax: un objetivo lejano reparte su peso
de forma uniforme en vez de concentrarlo en un solo punto de contexto.
"""
from dataclasses import dataclass

import numpy as np

from neural_processes.exceptions import ConfigError, ContractError, DimensionError
from neural_processes.tensor import Function, Parameter, Tensor, matmul, softmax_rows

SIMILARITIES = ("rbf", "dot")
NORMALISATIONS = ("sparsemax", "softmax")
KERNEL_FORMS = {"literal": 4.0, "standard": 2.0}
LENGTHSCALE_INIT = 10.0
LENGTHSCALE_FLOOR = 1e-6


@dataclass(frozen=True)
class AttentionConfig:
    similarity: str = "rbf"
    normalisation: str = "sparsemax"
    kernel_form: str = "literal"

    def __post_init__(self):
        if self.similarity not in SIMILARITIES:
            raise ConfigError(f"similarity must be one of {SIMILARITIES}, got '{self.similarity}'")
        if self.normalisation not in NORMALISATIONS:
            raise ConfigError(f"normalisation must be one of {NORMALISATIONS}, got '{self.normalisation}'")
        if self.kernel_form not in KERNEL_FORMS:
            raise ConfigError(f"kernel_form must be one of {tuple(KERNEL_FORMS)}, got '{self.kernel_form}'")

    @property
    def label(self):
        return f"{'RBF' if self.similarity == 'rbf' else 'Dot'}+{self.normalisation.capitalize()}"


class Lengthscale(Parameter):
    """Lengthscale ARD de una modalidad, guardado como fila (1, d)."""

    def __init__(self, features, init=LENGTHSCALE_INIT):
        super().__init__(np.full((1, features), float(init)))

    def clamp_(self, floor=LENGTHSCALE_FLOOR):
        self.data = np.maximum(self.data, floor)


class RBFKernel(Function):
    """exp(-1/2 * sum_j (x_j - x'_j)^2 / l_j^power); power 4 divide la diferencia por l^2."""

    def forward(self, x, y, lengthscale, power):
        if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
            raise DimensionError(f"rbf inputs disagree: {x.shape} vs {y.shape}")
        scale = lengthscale.reshape(-1)
        if scale.size != x.shape[1]:
            raise DimensionError(f"lengthscale has {scale.size} entries for {x.shape[1]} features")
        if np.any(scale <= 0):
            raise ContractError("lengthscale must be strictly positive")
        self.power, self.scale_shape, self.scale = power, lengthscale.shape, scale
        self.weight = scale ** (-power)
        self.diff = x[:, None, :] - y[None, :, :]
        self.out = np.exp(-0.5 * (self.diff * self.diff * self.weight).sum(axis=-1))
        return self.out

    def backward(self, grad):
        gk = (grad * self.out)[:, :, None]
        weighted = gk * self.diff * self.weight
        dx = -weighted.sum(axis=1)
        dy = weighted.sum(axis=0)
        dl = 0.5 * self.power * (gk * self.diff * self.diff).sum(axis=(0, 1)) * self.scale ** (-self.power - 1.0)
        return dx, dy, dl.reshape(self.scale_shape)


def rbf_matrix(queries, keys, lengthscale, kernel_form="literal"):
    """
    Matriz de kernel entre filas de consulta y filas clave.

    Args:
        queries (Tensor): [N_T, d].
        keys (Tensor): [N, d].
        lengthscale (Tensor): [1, d] o [d], estrictamente positivo.
        kernel_form (str): "literal" divide las diferencias por l^2, "standard" por l.

    Returns:
        Tensor: [N_T, N] con valores en (0, 1].
    """
    return RBFKernel.apply(queries, keys, lengthscale, power=KERNEL_FORMS[kernel_form])


def project_simplex_rows(z):
    """Proyeccion euclidiana de cada fila de ``z`` sobre el simplex de probabilidad (umbral por ordenamiento)."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    ordered = -np.sort(-z, axis=1)
    cumulative = np.cumsum(ordered, axis=1)
    k = np.arange(1, z.shape[1] + 1)
    support = 1.0 + k * ordered > cumulative
    size = support.sum(axis=1)
    tau = (cumulative[np.arange(z.shape[0]), size - 1] - 1.0) / size
    return np.maximum(z - tau[:, None], 0.0)


class SparsemaxRows(Function):
    def forward(self, z):
        self.out = project_simplex_rows(z)
        return self.out

    def backward(self, grad):
        support = self.out > 0
        masked = grad * support
        mean_on_support = masked.sum(axis=1, keepdims=True) / support.sum(axis=1, keepdims=True)
        return (support * (grad - mean_on_support),)


def sparsemax_rows(z):
    return SparsemaxRows.apply(z)


def dot_similarity(queries, keys):
    """Producto punto escalado q k^T / sqrt(d)."""
    if queries.shape[1] != keys.shape[1]:
        raise DimensionError(f"dot attention inputs disagree: {queries.shape} vs {keys.shape}")
    return matmul(queries, keys.T) * (1.0 / np.sqrt(queries.shape[1]))


def dot_attention(queries, keys, values):
    """Softmax(q k^T / sqrt(d)) v."""
    weights = softmax_rows(dot_similarity(queries, keys))
    if weights.shape[1] != values.shape[0]:
        raise DimensionError(f"{weights.shape[1]} keys but {values.shape[0]} value rows")
    return matmul(weights, values)


def attention_weights(cfg, queries, keys, lengthscale=None):
    """
    Atencion estocastica por filas de los objetivos sobre las filas de contexto.

    Args:
        cfg (AttentionConfig): par similitud / normalizacion.
        queries (Tensor): filas objetivo [N_T, d].
        keys (Tensor): filas de contexto [N, d].
        lengthscale (Tensor, opcional): requerido para la similitud RBF.

    Returns:
        Tensor: [N_T, N], cada fila suma uno.
    """
    queries = queries if isinstance(queries, Tensor) else Tensor(queries)
    keys = keys if isinstance(keys, Tensor) else Tensor(keys)
    if cfg.similarity == "rbf":
        if lengthscale is None:
            raise ConfigError("RBF attention needs a lengthscale")
        scores = rbf_matrix(queries, keys, lengthscale, cfg.kernel_form)
    else:
        scores = dot_similarity(queries, keys)
    if cfg.normalisation == "sparsemax":
        return sparsemax_rows(scores)
    return softmax_rows(scores)
