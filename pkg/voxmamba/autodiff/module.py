"""Paramètres et modules.

Un ``Parameter`` porte sa règle d'initialisation ; ``initialize(model, seed)``
remplit chaque paramètre depuis un générateur dérivé de (graine, chemin du
paramètre). Ajouter un module ne change donc jamais les poids des autres.
"""

import hashlib
import logging
import math

import numpy as np

from voxmamba.autodiff import tensor as T
from voxmamba.autodiff.tensor import Tensor
from voxmamba.errors import ConfigurationError, DimensionError

logger = logging.getLogger(__name__)


# Règles d'initialisation : (rng, forme) -> tableau

def zeros_init(rng, shape):
    return np.zeros(shape)


def ones_init(rng, shape):
    return np.ones(shape)


def uniform_init(bound: float):
    def init(rng, shape):
        return rng.uniform(-bound, bound, size=shape)
    return init


def normal_init(std: float):
    def init(rng, shape):
        return rng.normal(0.0, std, size=shape)
    return init


def fan_in_uniform(fan_in: int):
    return uniform_init(1.0 / math.sqrt(max(fan_in, 1)))


class Parameter(Tensor):
    """Feuille entraînable avec sa règle d'initialisation"""

    __slots__ = ("init", "residual")

    def __init__(self, shape, init=zeros_init, residual: bool = False):
        super().__init__(np.zeros(shape), requires_grad=True)
        self.init = init
        # Sortie d'une branche résiduelle : remise à l'échelle 1/√N à l'init
        self.residual = residual


def parameter_rng(seed: int, path: str) -> np.random.Generator:
    digest = hashlib.sha256(path.encode("utf-8")).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])


class Module:
    """Conteneur de paramètres et de sous-modules, parcouru dans l'ordre d'insertion"""

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = ""):
        for name, value in self._children():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            else:
                yield from value.named_parameters(prefix=f"{path}.")

    def named_modules(self, prefix: str = ""):
        yield prefix.rstrip("."), self
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_modules(prefix=f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(np.sum([p.data.size for p in self.parameters()], dtype=np.int64))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict):
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise ConfigurationError(
                f"paramètres manquants {missing[:5]} / inattendus {unexpected[:5]}"
            )
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ConfigurationError(
                    f"forme incompatible pour {name}: checkpoint {value.shape}, modèle {p.shape}"
                )
            p.data = value.astype(p.dtype).copy()


def initialize(model: Module, seed: int, residual_scale: float = 1.0, dtype=None) -> Module:
    """Remplit tous les paramètres de ``model`` de façon déterministe"""
    dtype = dtype or T.get_default_dtype()
    count = 0
    for path, p in model.named_parameters():
        values = np.asarray(p.init(parameter_rng(seed, path), p.shape), dtype=np.float64)
        if p.residual:
            values = values * residual_scale
        p.data = values.astype(dtype)
        p.grad = None
        count += values.size
    logger.debug("Initialisation: %d valeurs (graine %d, échelle résiduelle %.4f)", count, seed, residual_scale)
    return model


def residual_scaling(n_residual: int) -> float:
    """Facteur 1/√N appliqué aux sorties des branches résiduelles"""
    if n_residual < 1:
        return 1.0
    return 1.0 / math.sqrt(n_residual)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True, residual: bool = False):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter((in_features, out_features), fan_in_uniform(in_features), residual=residual)
        self.bias = Parameter((out_features,), zeros_init) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise DimensionError(
                f"Linear({self.in_features}→{self.out_features}) reçoit la forme {x.shape}"
            )
        out = T.matmul(x, self.weight)
        if self.bias is not None:
            out = T.add(out, self.bias)
        return out


class LayerNorm(Module):
    def __init__(self, features: int, eps: float = 1e-5):
        self.eps = eps
        self.gain = Parameter((features,), ones_init)
        self.bias = Parameter((features,), zeros_init)

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, eps=self.eps)
