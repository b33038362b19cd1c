"""Contenedores de parametros y los bloques totalmente conectados que usan los MNPs."""
import numpy as np

from neural_processes.exceptions import ContractError
from neural_processes.tensor import Parameter, Tensor, layer_norm, leaky_relu, relu, LEAKY_RELU_SLOPE


class Module:
    """
    Clase base de todo lo que tiene parametros.

    Los parametros se descubren recorriendo los atributos de la instancia en
    orden de asignacion, asi ``parameters()`` y ``state_dict()`` son deterministas.
    """

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Parameter):
                        yield f"{path}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{path}.{i}.")

    def parameters(self):
        return [param for _, param in self.named_parameters()]

    def zero_grad(self):
        for param in self.parameters():
            param.zero_grad()

    def state_dict(self):
        return {name: param.data.copy() for name, param in self.named_parameters()}

    def load_state_dict(self, state):
        """
        Copia los valores de ``state`` en los parametros del modulo.

        Args:
            state (dict): nombre del parametro -> arreglo, como lo entrega ``state_dict``.

        Raises:
            ContractError: faltan parametros, sobran parametros o alguna forma no coincide.
                El modulo queda sin cambios.
        """
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        if missing:
            raise ContractError(f"missing parameters in state: {missing[:5]}")
        unexpected = sorted(set(state) - set(own))
        if unexpected:
            raise ContractError(f"unexpected parameters in state: {unexpected[:5]}")
        values = {}
        for name, param in own.items():
            value = np.asarray(state[name], dtype=param.data.dtype)
            if value.shape != param.shape:
                raise ContractError(f"shape mismatch for {name}: {value.shape} != {param.shape}")
            values[name] = value
        for name, param in own.items():
            param.data = values[name].copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, in_features, out_features, rng):
        limit = np.sqrt(6.0 / (in_features + out_features))
        self.weight = Parameter(rng.uniform(-limit, limit, size=(in_features, out_features)))
        self.bias = Parameter(np.zeros((1, out_features)))

    def forward(self, x):
        return x @ self.weight + self.bias


class LayerNorm(Module):
    def __init__(self, features):
        self.gain = Parameter(np.ones((1, features)))
        self.shift = Parameter(np.zeros((1, features)))

    def forward(self, x):
        return layer_norm(x) * self.gain + self.shift


class FeedForward(Module):
    """FC -> LeakyReLU -> FC, opcionalmente seguido de una capa de normalizacion."""

    def __init__(self, in_features, hidden, out_features, rng, normalise=False, slope=LEAKY_RELU_SLOPE):
        self.slope = slope
        self.fc1 = Linear(in_features, hidden, rng)
        self.fc2 = Linear(hidden, out_features, rng)
        self.norm = LayerNorm(out_features) if normalise else None

    def forward(self, x):
        h = self.fc2(leaky_relu(self.fc1(x), self.slope))
        return self.norm(h) if self.norm is not None else h


class FeatureExtractor(Module):
    """Proyeccion de entrada seguida de bloques residuales totalmente conectados con ReLU."""

    def __init__(self, in_features, width=128, blocks=6, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.out_features = width
        self.projection = Linear(in_features, width, rng)
        self.blocks = [Linear(width, width, rng) for _ in range(blocks)]

    def forward(self, x):
        h = self.projection(x)
        for block in self.blocks:
            h = h + relu(block(h))
        return h


class Identity(Module):
    def __init__(self, features):
        self.out_features = features

    def forward(self, x):
        return x if isinstance(x, Tensor) else Tensor(x)
