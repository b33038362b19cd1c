"""
Memoria de contexto dinamica.

Cada modalidad guarda K particiones por clase de N_K filas copiadas de muestras
de entrenamiento; la particion k siempre tiene la clase k. Despues de cada paso
del optimizador, el slot menos atendido de una particion se reemplaza por el
objetivo mas dificil del mini-batch (error MSE o de entropia cruzada). Las
estrategias FIFO, Random y Frozen quedan para las ablaciones.
"""
import logging
from dataclasses import dataclass

import numpy as np

from neural_processes.datasets import one_hot
from neural_processes.exceptions import ConfigError, ContractError

logger = logging.getLogger(__name__)

UPDATE_KINDS = ("mse", "ce", "fifo", "random", "frozen")
UPDATE_SCOPES = ("class_consistent", "literal")
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class UpdateStrategy:
    kind: str = "mse"
    scope: str = "class_consistent"

    def __post_init__(self):
        if self.kind not in UPDATE_KINDS:
            raise ConfigError(f"memory strategy must be one of {UPDATE_KINDS}, got '{self.kind}'")
        if self.scope not in UPDATE_SCOPES:
            raise ConfigError(f"memory scope must be one of {UPDATE_SCOPES}, got '{self.scope}'")


def target_errors(targets, predictions, kind):
    """Error de clasificacion por objetivo: error cuadratico medio o entropia cruzada media sobre las clases."""
    if kind == "mse":
        return ((targets - predictions) ** 2).mean(axis=1)
    if kind == "ce":
        return (-targets * np.log(np.maximum(predictions, PROB_FLOOR))).mean(axis=1)
    raise ContractError(f"error kind must be 'mse' or 'ce', got '{kind}'")


def select_replacement(attention, targets, predictions, kind="mse", candidates=None):
    """
    Elige el slot a desalojar y el objetivo a insertar.

    Args:
        attention (np.ndarray): atencion [N_T, N_K] del batch sobre una particion de clase.
        targets (np.ndarray): labels one-hot [N_T, K].
        predictions (np.ndarray): probabilidades predichas [N_T, K].
        kind (str): "mse" o "ce".
        candidates (np.ndarray, opcional): filas del batch elegibles como j*; todas si se omite.

    Returns:
        tuple[int, int]: (i*, j*). Los empates van al indice menor.
    """
    attention = np.asarray(attention)
    if attention.shape[0] == 0:
        raise ContractError("cannot select a replacement from an empty target batch")
    slot = int(np.argmin(attention.mean(axis=0)))
    errors = target_errors(np.asarray(targets), np.asarray(predictions), kind)
    if candidates is None:
        return slot, int(np.argmax(errors))
    candidates = np.asarray(candidates, dtype=np.intp)
    if candidates.size == 0:
        raise ContractError("no candidate targets to insert")
    return slot, int(candidates[np.argmax(errors[candidates])])


class ContextMemory:
    """
    Filas de contexto particionadas por clase para cada modalidad.

    ``blocks[m]`` tiene forma [K, N_K, d_m]; ``fifo_heads[m, k]`` es el slot mas
    antiguo de la particion k y solo lo usa la estrategia FIFO.
    """

    def __init__(self, blocks, fifo_heads=None):
        self.blocks = [np.array(b, dtype=np.float64) for b in blocks]
        k, per_class = self.blocks[0].shape[:2]
        if any(b.shape[:2] != (k, per_class) for b in self.blocks):
            raise ContractError("all modalities must share the partition layout")
        self.fifo_heads = (np.zeros((len(self.blocks), k), dtype=np.intp)
                           if fifo_heads is None else np.array(fifo_heads, dtype=np.intp))

    @property
    def n_modalities(self):
        return len(self.blocks)

    @property
    def n_classes(self):
        return self.blocks[0].shape[0]

    @property
    def per_class(self):
        return self.blocks[0].shape[1]

    @property
    def size(self):
        return self.n_classes * self.per_class

    def features(self, m):
        """Filas de contexto de la modalidad ``m`` como [N, d_m], particiones en orden de clase."""
        block = self.blocks[m]
        return block.reshape(self.size, block.shape[2])

    def labels(self):
        return one_hot(np.repeat(np.arange(self.n_classes), self.per_class), self.n_classes)

    def class_columns(self, k):
        return slice(k * self.per_class, (k + 1) * self.per_class)

    def copy(self):
        return ContextMemory(self.blocks, self.fifo_heads)

    @classmethod
    def init_random(cls, train, per_class, seed=0):
        """
        Llena cada particion con ``per_class`` muestras de entrenamiento aleatorias de esa clase.

        Todas las modalidades usan las mismas filas.
        """
        if per_class < 1:
            raise ContractError(f"per-class memory size must be >= 1, got {per_class}")
        rng = np.random.default_rng(seed)
        return cls._sample(train, per_class, rng)

    @classmethod
    def _sample(cls, train, per_class, rng):
        classes = train.classes
        chosen = []
        for k in range(train.n_classes):
            pool = np.flatnonzero(classes == k)
            if pool.size < per_class:
                raise ContractError(
                    f"class {k} has {pool.size} training samples, memory needs {per_class} per class")
            chosen.append(rng.choice(pool, size=per_class, replace=False))
        blocks = [np.stack([x[idx] for idx in chosen]) for x in train.features]
        return cls(blocks)

    def resample(self, train, rng):
        """Nuevo muestreo balanceado por clase con la misma forma (estrategia Random en inferencia)."""
        return self._sample(train, self.per_class, rng)

    def update(self, batch, attention, predictions, strategy):
        """
        Devuelve la memoria despues de un mini-batch.

        Args:
            batch (MultimodalBatch): el conjunto objetivo con el que se entreno el paso.
            attention (list[np.ndarray]): atencion [N_T, N] por modalidad sobre esta memoria.
            predictions (list[np.ndarray]): probabilidades unimodales [N_T, K] por modalidad.
            strategy (UpdateStrategy): regla a aplicar.

        Returns:
            ContextMemory: una memoria nueva; ``self`` no se modifica.
        """
        updated = self.copy()
        if strategy.kind in ("frozen", "random") or batch.n_samples == 0:
            return updated
        classes = batch.classes
        if strategy.kind == "fifo":
            updated._fifo(batch, classes)
        elif strategy.scope == "literal":
            updated._replace_literal(batch, attention, predictions, strategy.kind)
        else:
            updated._replace_by_class(batch, classes, attention, predictions, strategy.kind)
        return updated

    def _fifo(self, batch, classes):
        for m, x in enumerate(batch.features):
            for k in range(self.n_classes):
                rows = np.flatnonzero(classes == k)
                if rows.size == 0:
                    continue
                slot = self.fifo_heads[m, k]
                self.blocks[m][k, slot] = x[rows[-1]]
                self.fifo_heads[m, k] = (slot + 1) % self.per_class

    def _replace_by_class(self, batch, classes, attention, predictions, kind):
        for m, x in enumerate(batch.features):
            for k in range(self.n_classes):
                rows = np.flatnonzero(classes == k)
                if rows.size == 0:
                    continue
                slot, target = select_replacement(
                    attention[m][:, self.class_columns(k)], batch.labels, predictions[m], kind, rows)
                self.blocks[m][k, slot] = x[target]

    def _replace_literal(self, batch, attention, predictions, kind):
        for m, x in enumerate(batch.features):
            for k in range(self.n_classes):
                slot, target = select_replacement(
                    attention[m][:, self.class_columns(k)], batch.labels, predictions[m], kind)
                self.blocks[m][k, slot] = x[target]

    def to_state(self):
        state = {f"memory.block.{m}": block for m, block in enumerate(self.blocks)}
        state["memory.fifo_heads"] = self.fifo_heads
        return state

    @classmethod
    def from_state(cls, state):
        n = len([key for key in state if key.startswith("memory.block.")])
        if n == 0:
            raise ContractError("state holds no context memory")
        return cls([state[f"memory.block.{m}"] for m in range(n)], state.get("memory.fifo_heads"))
