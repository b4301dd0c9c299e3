"""Tableau dense N-D avec différentiation automatique en mode inverse.

Chaque opération enregistre ses parents et une fermeture ``backward`` qui
reçoit le gradient de sortie et rend un gradient par parent. Le ruban
(``GradTape``) numérote les noeuds à leur création : trier par identifiant
décroissant donne donc un ordre topologique inverse.

Règle de broadcast : alignement à droite (axes de queue), celle de numpy.
Politique NaN : toute valeur non finie produite par une opération lève
``NumericError`` immédiatement.
"""

import contextlib
import itertools
import logging
import threading

import numpy as np
from scipy import special

from voxmamba.errors import ContractError, DimensionError, NumericError

logger = logging.getLogger(__name__)

_default_dtype = np.float32


def set_default_dtype(dtype):
    """Change le type flottant par défaut (float32 en usage, float64 en test)"""
    global _default_dtype
    _default_dtype = np.dtype(dtype).type


def get_default_dtype():
    return _default_dtype


class GradTape:
    """Ruban d'opérations : identifiants topologiques et activation par thread"""

    def __init__(self):
        self._ids = itertools.count()
        self._state = threading.local()

    def next_id(self) -> int:
        return next(self._ids)

    @property
    def enabled(self) -> bool:
        return getattr(self._state, "enabled", True)

    @contextlib.contextmanager
    def paused(self):
        """Désactive l'enregistrement (inférence)"""
        previous = self.enabled
        self._state.enabled = False
        try:
            yield
        finally:
            self._state.enabled = previous

    def backward(self, loss: "Tensor"):
        if loss.data.ndim != 0:
            raise ContractError(
                f"backward attend une perte scalaire, forme reçue {loss.shape}"
            )

        # Collecte des noeuds atteignables
        nodes = {}
        stack = [loss]
        while stack:
            node = stack.pop()
            if node._id in nodes:
                continue
            nodes[node._id] = node
            stack.extend(node._parents)

        grads = {loss._id: np.ones_like(loss.data)}
        for node_id in sorted(nodes, reverse=True):
            node = nodes[node_id]
            g = grads.pop(node_id, None)
            if g is None or not node.requires_grad:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._id in grads:
                    grads[parent._id] = grads[parent._id] + pg
                else:
                    grads[parent._id] = pg


TAPE = GradTape()
no_grad = TAPE.paused

_macs = threading.local()


@contextlib.contextmanager
def count_macs():
    """Compte les multiplications-additions des produits, convolutions et balayages"""
    counter = {"macs": 0}
    previous = getattr(_macs, "counter", None)
    _macs.counter = counter
    try:
        yield counter
    finally:
        _macs.counter = previous


def record_macs(count: int):
    counter = getattr(_macs, "counter", None)
    if counter is not None:
        counter["macs"] += int(count)


class Tensor:
    """Tableau dense immuable après construction (sauf accumulation de grad)"""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype.kind == "f":
                dtype = data.dtype
            else:
                dtype = _default_dtype
        data = np.asarray(data, dtype=dtype)
        # les scalaires restent 0-d
        self.data = data if data.flags.c_contiguous else np.ascontiguousarray(data)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self._id = TAPE.next_id()

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        TAPE.backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # Opérateurs
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value, like: Tensor = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value), dtype=dtype)


def make_op(name: str, data, parents, backward) -> Tensor:
    """Crée le noeud de sortie d'une opération et vérifie la finitude"""
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{name}: valeur non finie dans le résultat")
    out = Tensor(data, dtype=data.dtype)
    if TAPE.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Ramène un gradient broadcasté à la forme de l'opérande"""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(
            f"formes non broadcastables: {a.shape} et {b.shape}"
        ) from None


def _binary(a, b):
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _broadcast_shape(a, b)
    return a, b


# Opérations élémentaires

def add(a, b) -> Tensor:
    a, b = _binary(a, b)
    return make_op(
        "add", a.data + b.data, (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _binary(a, b)
    return make_op(
        "sub", a.data - b.data, (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _binary(a, b)
    return make_op(
        "mul", a.data * b.data, (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _binary(a, b)
    return mul(a, reciprocal(b))


def neg(x: Tensor) -> Tensor:
    return make_op("neg", -x.data, (x,), lambda g: (-g,))


def reciprocal(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore"):
        out = 1.0 / x.data
    return make_op("reciprocal", out, (x,), lambda g: (-g * out * out,))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return make_op("exp", out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return make_op("log", out, (x,), lambda g: (g / x.data,))


def square(x: Tensor) -> Tensor:
    return make_op("square", x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(0.0, x.data).astype(x.dtype)
    return make_op("softplus", out, (x,), lambda g: (g * special.expit(x.data),))


def sigmoid(x: Tensor) -> Tensor:
    out = special.expit(x.data)
    return make_op("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def silu(x: Tensor) -> Tensor:
    s = special.expit(x.data)
    return make_op(
        "silu", x.data * s, (x,),
        lambda g: (g * (s + x.data * s * (1.0 - s)),),
    )


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    factor = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return make_op("leaky_relu", x.data * factor, (x,), lambda g: (g * factor,))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "exp": exp,
    "log": log,
    "softplus": softplus,
    "silu": silu,
    "sigmoid": sigmoid,
    "reciprocal": reciprocal,
    "neg": neg,
    "square": square,
}


def elementwise(op: str, *operands) -> Tensor:
    """Point d'entrée unique des opérations élément par élément"""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(
            f"opération inconnue '{op}', attendues: {sorted(_ELEMENTWISE)}"
        ) from None
    return fn(*operands)


# Réductions

def _expand_reduced(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        axes = sorted(a % len(shape) for a in axes)
        for a in axes:
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))
    return make_op(
        "sum", out, (x,),
        lambda g: (_expand_reduced(g, x.shape, axis, keepdims).astype(x.dtype, copy=True),),
    )


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# Formes

def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape impossible de {x.shape} vers {tuple(shape)}") from None
    return make_op("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def invert_permutation(perm):
    return tuple(int(i) for i in np.argsort(perm))


def permute_axes(x: Tensor, perm) -> Tensor:
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(x.ndim)):
        raise ContractError(
            f"permutation {perm} invalide pour un tenseur de rang {x.ndim}"
        )
    inverse = invert_permutation(perm)
    return make_op(
        "permute", np.transpose(x.data, perm), (x,),
        lambda g: (np.transpose(g, inverse),),
    )


def flip(x: Tensor, axis: int) -> Tensor:
    """Inverse l'ordre le long d'un axe (involution exacte)"""
    return make_op("flip", np.flip(x.data, axis=axis), (x,), lambda g: (np.flip(g, axis=axis),))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(
            f"concaténation impossible: {[t.shape for t in tensors]} sur l'axe {axis}"
        ) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_op("concat", out, tensors, backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"empilement impossible: {[t.shape for t in tensors]}") from None

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_op("stack", out, tensors, backward)


def slice_axis(x: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return make_op("slice", x.data[index], (x,), backward)


# Algèbre linéaire

def _swap_last(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul attend des opérandes de rang ≥ 2: {a.shape} et {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"dimensions internes incompatibles pour matmul: {a.shape} et {b.shape}"
        )
    out = np.matmul(a.data, b.data)
    record_macs(out.size * a.shape[-1])

    def backward(g):
        ga = unbroadcast(np.matmul(g, _swap_last(b.data)), a.shape)
        gb = unbroadcast(np.matmul(_swap_last(a.data), g), b.shape)
        return ga, gb

    return make_op("matmul", out, (a, b), backward)


# Normalisation et softmax

def normalize(x: Tensor, axes=(-1,), eps: float = 1e-5) -> Tensor:
    """Centre-réduit ``x`` sur ``axes`` (sans affine)"""
    axes = tuple(a % x.ndim for a in axes)
    mu = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    def backward(g):
        g_mean = g.mean(axis=axes, keepdims=True)
        gx_mean = (g * xhat).mean(axis=axes, keepdims=True)
        return (inv_std * (g - g_mean - xhat * gx_mean),)

    return make_op("normalize", xhat.astype(x.dtype), (x,), backward)


def layer_norm(x: Tensor, gain: Tensor = None, bias: Tensor = None, eps: float = 1e-5) -> Tensor:
    """LayerNorm sur le dernier axe, affine optionnelle"""
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError(f"layer_norm: dernier axe vide pour la forme {x.shape}")
    out = normalize(x, axes=(-1,), eps=eps)
    if gain is not None:
        out = mul(out, gain)
    if bias is not None:
        out = add(out, bias)
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    out = special.log_softmax(x.data, axis=axis).astype(x.dtype)

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_op("log_softmax", out, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return exp(log_softmax(x, axis=axis))


def backward(loss: Tensor):
    """Propage le gradient d'une perte scalaire vers toutes les feuilles"""
    TAPE.backward(loss)
