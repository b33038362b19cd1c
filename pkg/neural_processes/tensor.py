"""
Tensores densos float64 con diferenciacion automatica en modo reverso.

Cada primitiva diferenciable es una subclase de ``Function``: ``forward`` trabaja
sobre arreglos numpy y ``backward`` transforma el adjunto de la salida en un
adjunto por padre. ``Tensor.backward`` recorre el grafo registrado en orden
topologico inverso y visita cada nodo una sola vez.

El broadcasting se limita a formas iguales, escalares y operandos cuya primera
dimension es 1 (un vector fila repetido sobre las filas de una matriz).

Ejemplo de uso:
    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> (x * x).sum().backward()
    >>> x.grad
    array([2., 4.])
"""
import contextlib
import logging

import numpy as np

from neural_processes.exceptions import ContractError, DimensionError, DomainError, GraphError

logger = logging.getLogger(__name__)

DTYPE = np.float64
LEAKY_RELU_SLOPE = 0.01
LAYER_NORM_EPS = 1e-9

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Desactiva el registro del grafo dentro del bloque (pasadas de evaluacion)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    def __init__(self, data, requires_grad=False, _ctx=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = None
        self._ctx = _ctx
        self._consumed = False

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return Transpose.apply(self)

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    # aritmetica
    def __add__(self, other):
        return Add.apply(self, other)

    def __radd__(self, other):
        return Add.apply(other, self)

    def __sub__(self, other):
        return Sub.apply(self, other)

    def __rsub__(self, other):
        return Sub.apply(other, self)

    def __mul__(self, other):
        return Mul.apply(self, other)

    def __rmul__(self, other):
        return Mul.apply(other, self)

    def __truediv__(self, other):
        return Div.apply(self, other)

    def __rtruediv__(self, other):
        return Div.apply(other, self)

    def __neg__(self):
        return Neg.apply(self)

    def __matmul__(self, other):
        return MatMul.apply(self, other)

    def exp(self):
        return Exp.apply(self)

    def log(self):
        return Log.apply(self)

    def sqrt(self):
        return Sqrt.apply(self)

    def square(self):
        return Square.apply(self)

    def sum(self, axis=None, keepdims=False):
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def rows(self, index):
        return GatherRows.apply(self, index=np.asarray(index, dtype=np.intp))

    def backward(self):
        """
        Llena ``grad`` en cada tensor del grafo que requiere gradientes.

        Raises:
            ContractError: el tensor no es un escalar.
            GraphError: backward ya se ejecuto desde este tensor.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise GraphError("backward() already ran on this graph; rebuild the forward pass")
        if not self.requires_grad:
            raise GraphError("loss does not depend on any tensor that requires gradients")

        adjoints = {id(self): np.ones_like(self.data)}
        for node in reversed(_topological_order(self)):
            grad = adjoints.pop(id(node), None)
            if grad is None:
                continue
            if node._ctx is None:
                node.grad = grad if node.grad is None else node.grad + grad
                continue
            node.grad = grad
            parent_grads = node._ctx.backward(grad)
            for parent, parent_grad in zip(node._ctx.parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                parent_grad = _unbroadcast(parent_grad, parent.shape)
                key = id(parent)
                adjoints[key] = parent_grad if key not in adjoints else adjoints[key] + parent_grad
        self._consumed = True


class Parameter(Tensor):
    """Tensor hoja que actualiza un optimizador."""

    def __init__(self, data):
        super().__init__(np.array(data, dtype=DTYPE), requires_grad=True)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _topological_order(root):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node._ctx is not None:
            for parent in node._ctx.parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def _broadcast_shape(a_shape, b_shape):
    if a_shape == b_shape:
        return a_shape
    a_size, b_size = int(np.prod(a_shape)), int(np.prod(b_shape))
    if b_size == 1 and len(b_shape) <= len(a_shape):
        return a_shape
    if a_size == 1 and len(a_shape) <= len(b_shape):
        return b_shape
    if len(a_shape) == len(b_shape) and a_shape[1:] == b_shape[1:]:
        if b_shape[0] == 1:
            return a_shape
        if a_shape[0] == 1:
            return b_shape
    raise DimensionError(f"cannot broadcast shapes {a_shape} and {b_shape}")


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Function:
    def __init__(self, *parents):
        self.parents = parents

    def forward(self, *arrays, **kwargs):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs):
        tensors = [as_tensor(value) for value in inputs]
        ctx = cls(*tensors)
        out = ctx.forward(*[t.data for t in tensors], **kwargs)
        requires_grad = _grad_enabled and any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=requires_grad, _ctx=ctx if requires_grad else None)


# elemento a elemento
class Add(Function):
    def forward(self, a, b):
        _broadcast_shape(a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return grad, grad


class Sub(Function):
    def forward(self, a, b):
        _broadcast_shape(a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return grad, -grad


class Mul(Function):
    def forward(self, a, b):
        _broadcast_shape(a.shape, b.shape)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, grad * self.a


class Div(Function):
    def forward(self, a, b):
        _broadcast_shape(a.shape, b.shape)
        self.a, self.b = a, b
        with np.errstate(divide="ignore", invalid="ignore"):
            return a / b

    def backward(self, grad):
        with np.errstate(divide="ignore", invalid="ignore"):
            return grad / self.b, -grad * self.a / (self.b * self.b)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Exp(Function):
    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    def forward(self, a):
        if np.any(a <= 0):
            raise DomainError(f"log of non-positive value (min={a.min():.3g})")
        self.a = a
        return np.log(a)

    def backward(self, grad):
        return (grad / self.a,)


class Sqrt(Function):
    def forward(self, a):
        if np.any(a < 0):
            raise DomainError(f"sqrt of negative value (min={a.min():.3g})")
        self.out = np.sqrt(a)
        return self.out

    def backward(self, grad):
        with np.errstate(divide="ignore"):
            return (grad * 0.5 / self.out,)


class Square(Function):
    def forward(self, a):
        self.a = a
        return a * a

    def backward(self, grad):
        return (2.0 * grad * self.a,)


class ClampMin(Function):
    def forward(self, a, floor):
        self.mask = a > floor
        return np.maximum(a, floor)

    def backward(self, grad):
        return (grad * self.mask,)


def elementwise(op, a, b=None):
    """
    Aplica una operacion elemento a elemento por nombre.

    Args:
        op (str): una de add, sub, mul, div, exp, log, neg, square, sqrt.
        a (Tensor): primer operando.
        b (Tensor, opcional): segundo operando de las operaciones binarias.

    Returns:
        Tensor: el resultado elemento a elemento.
    """
    binary = {"add": Add, "sub": Sub, "mul": Mul, "div": Div}
    unary = {"exp": Exp, "log": Log, "neg": Neg, "square": Square, "sqrt": Sqrt}
    if op in binary:
        if b is None:
            raise ContractError(f"elementwise '{op}' needs two operands")
        return binary[op].apply(a, b)
    if op in unary:
        return unary[op].apply(a)
    raise ContractError(f"unknown elementwise op '{op}'")


def clamp_min(a, floor):
    return ClampMin.apply(a, floor=float(floor))


# activaciones
class Softplus(Function):
    def forward(self, a):
        self.a = a
        return np.log1p(np.exp(-np.abs(a))) + np.maximum(a, 0.0)

    def backward(self, grad):
        return (grad / (1.0 + np.exp(-self.a)),)


class LeakyReLU(Function):
    def forward(self, a, slope):
        self.scale = np.where(a > 0, 1.0, slope)
        return a * self.scale

    def backward(self, grad):
        return (grad * self.scale,)


class ReLU(Function):
    def forward(self, a):
        self.mask = a > 0
        return a * self.mask

    def backward(self, grad):
        return (grad * self.mask,)


class SoftmaxRows(Function):
    def forward(self, a):
        shifted = np.exp(a - a.max(axis=-1, keepdims=True))
        self.out = shifted / shifted.sum(axis=-1, keepdims=True)
        return self.out

    def backward(self, grad):
        s = self.out
        return (s * (grad - (grad * s).sum(axis=-1, keepdims=True)),)


class LayerNormRows(Function):
    """Normaliza cada fila a media cero y varianza uno; la parte afin vive en ``nn.LayerNorm``."""

    def forward(self, a, eps):
        centred = a - a.mean(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
        self.normed = centred * self.inv_std
        return self.normed

    def backward(self, grad):
        n = self.normed
        g_mean = grad.mean(axis=-1, keepdims=True)
        gn_mean = (grad * n).mean(axis=-1, keepdims=True)
        return (self.inv_std * (grad - g_mean - n * gn_mean),)


def softplus(x):
    return Softplus.apply(x)


def leaky_relu(x, slope=LEAKY_RELU_SLOPE):
    return LeakyReLU.apply(x, slope=float(slope))


def relu(x):
    return ReLU.apply(x)


def softmax_rows(x):
    return SoftmaxRows.apply(x)


def layer_norm(x, eps=LAYER_NORM_EPS):
    return LayerNormRows.apply(x, eps=float(eps))


def activations(kind, x, **kwargs):
    table = {
        "softplus": softplus,
        "leaky_relu": leaky_relu,
        "relu": relu,
        "softmax_rows": softmax_rows,
        "layer_norm": layer_norm,
    }
    if kind not in table:
        raise ContractError(f"unknown activation '{kind}'")
    return table[kind](x, **kwargs)


# algebra lineal y estructura
class MatMul(Function):
    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


def matmul(a, b):
    return MatMul.apply(a, b)


class Transpose(Function):
    def forward(self, a):
        return a.T

    def backward(self, grad):
        return (grad.T,)


class Sum(Function):
    def forward(self, a, axis, keepdims):
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return a.sum(axis=axis, keepdims=keepdims)

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Mean(Sum):
    def forward(self, a, axis, keepdims):
        out = super().forward(a, axis, keepdims)
        self.count = a.size // max(out.size, 1)
        return out / self.count

    def backward(self, grad):
        (expanded,) = super().backward(grad)
        return (expanded / self.count,)


class Reshape(Function):
    def forward(self, a, shape):
        self.shape = a.shape
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class GatherRows(Function):
    def forward(self, a, index):
        self.shape, self.index = a.shape, index
        return a[index]

    def backward(self, grad):
        out = np.zeros(self.shape, dtype=DTYPE)
        np.add.at(out, self.index, grad)
        return (out,)


class Concat(Function):
    def forward(self, *arrays, axis):
        self.axis = axis
        self.splits = np.cumsum([arr.shape[axis] for arr in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


def concat(tensors, axis=0):
    return Concat.apply(*tensors, axis=axis)


def numerical_gradient(fn, tensor, eps=1e-5):
    """
    Gradiente por diferencias finitas centrales de una funcion escalar respecto de ``tensor``.

    ``fn`` se llama sin argumentos y debe reconstruir su pasada hacia adelante
    con el contenido actual de ``tensor.data``, que se perturba en el lugar y
    luego se restaura.
    """
    tensor.data = np.ascontiguousarray(tensor.data)
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    grad_flat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            plus = _scalar(fn())
            flat[i] = original - eps
            minus = _scalar(fn())
            flat[i] = original
            grad_flat[i] = (plus - minus) / (2.0 * eps)
    return grad


def _scalar(value):
    return value.item() if isinstance(value, Tensor) else float(value)
