"""
Datasets para clasificacion multimodal.

Generadores sinteticos (dos lunas, grillas, vistas multimodales), el protocolo
de robustez con ruido gaussiano y el lector de archivos CSV de features. Cada
generador es una funcion pura de sus argumentos y su semilla.
"""
import itertools
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
from sklearn.datasets import make_moons as sklearn_make_moons
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import StandardScaler

from neural_processes.exceptions import ContractError, IngestionError

logger = logging.getLogger(__name__)

NOISE_LEVELS = np.logspace(-2, 1, 10)
VIEW_NOISE_STD = 0.05
# indice de clase de cada media luna
UPPER_MOON, LOWER_MOON = 0, 1


def one_hot(labels, n_classes):
    labels = np.asarray(labels, dtype=np.intp)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


@dataclass
class MultimodalBatch:
    """
    Matrices de features por modalidad, alineadas por fila, mas labels one-hot.

    ``labels`` es None para entradas sin etiqueta, como las grillas.
    """

    features: list
    labels: np.ndarray = None

    def __post_init__(self):
        self.features = [np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in self.features]
        if not self.features:
            raise ContractError("a batch needs at least one modality")
        n = self.features[0].shape[0]
        if any(x.shape[0] != n for x in self.features):
            raise ContractError(f"modalities disagree on row count: {[x.shape[0] for x in self.features]}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.float64)
            if self.labels.shape[0] != n:
                raise ContractError(f"{self.labels.shape[0]} label rows for {n} samples")
            if n and not (np.all(self.labels.sum(axis=1) == 1) and np.all((self.labels == 0) | (self.labels == 1))):
                raise ContractError("label rows must be one-hot")

    @property
    def n_samples(self):
        return self.features[0].shape[0]

    @property
    def n_modalities(self):
        return len(self.features)

    @property
    def n_classes(self):
        return None if self.labels is None else self.labels.shape[1]

    @property
    def dims(self):
        return [x.shape[1] for x in self.features]

    @property
    def classes(self):
        """Indice entero de clase por fila."""
        return None if self.labels is None else self.labels.argmax(axis=1)

    def subset(self, index):
        index = np.asarray(index, dtype=np.intp)
        labels = None if self.labels is None else self.labels[index]
        return MultimodalBatch([x[index] for x in self.features], labels)

    def with_features(self, features):
        return MultimodalBatch(features, None if self.labels is None else self.labels.copy())

    def batches(self, batch_size, rng=None):
        """Entrega mini-batches consecutivos; mezclados si se pasa ``rng``."""
        order = rng.permutation(self.n_samples) if rng is not None else np.arange(self.n_samples)
        for start in range(0, self.n_samples, batch_size):
            yield self.subset(order[start:start + batch_size])


@dataclass(frozen=True)
class NoiseSpec:
    level: int
    modalities: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not 0 <= self.level < len(NOISE_LEVELS):
            raise ContractError(f"noise level must be in [0, {len(NOISE_LEVELS) - 1}], got {self.level}")

    @property
    def std(self):
        return float(NOISE_LEVELS[self.level])


def noise_subsets(n_modalities):
    """Todas las combinaciones de ceil(M/2) modalidades, en orden lexicografico."""
    return list(itertools.combinations(range(n_modalities), math.ceil(n_modalities / 2)))


def make_moons(n, noise_std=0.15, seed=0):
    """
    Dos medias circunferencias unitarias entrelazadas (una modalidad, dos features, dos clases).

    Args:
        n (int): cantidad de muestras, al menos 2.
        noise_std (float): desviacion del ruido gaussiano; 0 deja los puntos sobre los arcos.
        seed (int): semilla del generador.

    Returns:
        MultimodalBatch: la clase ``UPPER_MOON`` es la media luna superior y ``LOWER_MOON`` la inferior.
    """
    if n < 2:
        raise ContractError(f"make_moons needs n >= 2, got {n}")
    x, y = sklearn_make_moons(n_samples=n, noise=noise_std if noise_std > 0 else None, random_state=seed)
    return MultimodalBatch([x], one_hot(y, 2))


def padded_bounds(batch, pad=1.0, modality=0):
    x = batch.features[modality]
    return tuple((float(x[:, j].min() - pad), float(x[:, j].max() + pad)) for j in range(2))


def mesh_grid(nx, ny, bounds):
    """Grilla en orden de filas (x varia mas rapido) sobre ``bounds = ((x_min, x_max), (y_min, y_max))``."""
    if nx < 2 or ny < 2:
        raise ContractError(f"mesh grid needs at least 2 points per axis, got {nx}x{ny}")
    (x_min, x_max), (y_min, y_max) = bounds
    xx, yy = np.meshgrid(np.linspace(x_min, x_max, nx), np.linspace(y_min, y_max, ny))
    return MultimodalBatch([np.c_[xx.ravel(), yy.ravel()]])


def random_rotation(dim, rng):
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def view_maps(n_views, dim, seed=0):
    """Mapas lineales aleatorios fijos, una rotacion escalada por vista; train y test comparten los mismos."""
    rng = np.random.default_rng(seed)
    return [random_rotation(dim, rng) * rng.uniform(0.5, 2.0) for _ in range(n_views)]


def make_multimodal_views(base, n_views, seed=0, noise_std=VIEW_NOISE_STD, maps=None):
    """
    Deriva ``n_views`` modalidades a partir de la primera modalidad de ``base``.

    Cada vista es un mapa lineal aleatorio fijo (una rotacion escalada, que
    conserva la geometria euclidiana de las clases) de las features base mas
    ruido gaussiano. ``maps`` reemplaza los mapas generados con ``seed``.
    """
    if n_views < 2:
        raise ContractError(f"multimodal views need M >= 2, got {n_views}")
    x = base.features[0]
    if maps is None:
        maps = view_maps(n_views, x.shape[1], seed)
    if len(maps) != n_views:
        raise ContractError(f"{len(maps)} maps for {n_views} views")
    rng = np.random.default_rng([seed, n_views])
    views = []
    for m in range(n_views):
        view = x @ np.asarray(maps[m], dtype=np.float64)
        if noise_std > 0:
            view = view + rng.normal(0.0, noise_std, size=view.shape)
        views.append(view)
    return base.with_features(views)


def inject_noise(batch, spec, seed=0):
    """Suma ruido N(0, std^2) a las modalidades que nombra ``spec``; devuelve un batch nuevo."""
    bad = [m for m in spec.modalities if not 0 <= m < batch.n_modalities]
    if bad:
        raise ContractError(f"noise spec names unknown modalities {bad}")
    rng = np.random.default_rng(seed)
    features = [x.copy() for x in batch.features]
    for m in sorted(spec.modalities):
        features[m] = features[m] + rng.normal(0.0, spec.std, size=features[m].shape)
    return batch.with_features(features)


def shift_features(batch, offset, axis=0):
    """Traslada cada modalidad en ``offset`` sobre la feature ``axis`` (conjuntos OOD desplazados)."""
    features = [x.copy() for x in batch.features]
    for x in features:
        x[:, axis] += offset
    return batch.with_features(features)


def _read_matrix(path):
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as e:
        raise IngestionError(f"cannot read {path}: {e}") from e
    except ValueError as e:
        raise IngestionError(f"{path} is not a numeric CSV: {e}") from e


def load_feature_dataset(paths, labels_path, split_ratio=0.8, seed=0, n_classes=None):
    """
    Carga archivos CSV de features por modalidad, alineados por fila, y un archivo de labels enteros.

    Args:
        paths (list[str]): un CSV sin encabezado por modalidad.
        labels_path (str): CSV con un label entero por fila.
        split_ratio (float): fraccion de entrenamiento de la division estratificada.
        seed (int): semilla de la division.
        n_classes (int, opcional): K; si se omite se infiere como max(label) + 1.

    Returns:
        tuple[MultimodalBatch, MultimodalBatch]: (train, test) estandarizados con los datos de train.

    Raises:
        IngestionError: archivos ilegibles, cantidad de filas distinta o labels invalidos.
    """
    matrices = [_read_matrix(p) for p in paths]
    raw_labels = _read_matrix(labels_path).reshape(-1)
    counts = {os.path.basename(p): m.shape[0] for p, m in zip(paths, matrices)}
    counts[os.path.basename(labels_path)] = raw_labels.size
    if len(set(counts.values())) != 1:
        raise IngestionError(f"row counts differ across files: {counts}")
    if np.any(raw_labels != np.round(raw_labels)) or np.any(raw_labels < 0):
        raise IngestionError(f"{labels_path} holds non-integral or negative labels")
    labels = raw_labels.astype(np.intp)
    k = int(labels.max()) + 1 if n_classes is None else n_classes
    if np.any(labels >= k):
        raise IngestionError(f"{labels_path} holds label {int(labels.max())} outside [0, {k})")

    index = np.arange(labels.size)
    train_idx, test_idx = train_test_split(
        index, train_size=split_ratio, stratify=labels, random_state=seed
    )
    train_idx, test_idx = np.sort(train_idx), np.sort(test_idx)
    train_features, test_features = [], []
    for matrix in matrices:
        scaler = StandardScaler().fit(matrix[train_idx])
        train_features.append(scaler.transform(matrix[train_idx]))
        test_features.append(scaler.transform(matrix[test_idx]))
    encoded = one_hot(labels, k)
    logger.info(f"loaded {labels.size} rows, {len(paths)} modalities, {k} classes "
                f"({train_idx.size} train / {test_idx.size} test)")
    return (MultimodalBatch(train_features, encoded[train_idx]),
            MultimodalBatch(test_features, encoded[test_idx]))


def save_feature_dataset(batch, directory, prefix=""):
    """Escribe ``batch`` en el formato CSV del lector; devuelve (rutas por modalidad, ruta de labels)."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for m, x in enumerate(batch.features):
        path = os.path.join(directory, f"{prefix}modality_{m}.csv")
        np.savetxt(path, x, delimiter=",", fmt="%.17g")
        paths.append(path)
    labels_path = os.path.join(directory, f"{prefix}labels.csv")
    np.savetxt(labels_path, batch.classes.reshape(-1, 1), delimiter=",", fmt="%d")
    return paths, labels_path


def load_feature_matrices(paths):
    """Archivos CSV por modalidad sin labels, usados tal cual (sin estandarizar)."""
    matrices = [_read_matrix(p) for p in paths]
    counts = {os.path.basename(p): m.shape[0] for p, m in zip(paths, matrices)}
    if len(set(counts.values())) != 1:
        raise IngestionError(f"row counts differ across files: {counts}")
    return MultimodalBatch(matrices)
