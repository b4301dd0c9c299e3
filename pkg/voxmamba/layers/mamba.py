"""Bloc Mamba et couche Mamba (enveloppe pré-norme + tête MLP)"""

import logging

import numpy as np

from voxmamba.autodiff import tensor as T
from voxmamba.autodiff.conv import conv1d_depthwise_causal
from voxmamba.autodiff.module import (
    LayerNorm,
    Linear,
    Module,
    Parameter,
    fan_in_uniform,
    zeros_init,
)
from voxmamba.autodiff.tensor import Tensor
from voxmamba.errors import ConfigurationError, DimensionError
from voxmamba.ssm.discretize import default_state_size
from voxmamba.ssm.s6 import S6

logger = logging.getLogger(__name__)


class MambaBlock(Module):
    """Expansion → conv causale → S6, porte SiLU, projection de sortie.

    ``mixer(x)`` est la branche seule ; ``MambaBlock(x) = x + mixer(x)``.
    """

    residual_branches = 1

    def __init__(self, d_model: int, expand: int = 2, conv_width: int = 4, d_state: int = None, chunk: int = None, workers: int = 1):
        if expand < 1:
            raise ConfigurationError(f"facteur d'expansion {expand} < 1")
        self.d_model = d_model
        self.d_inner = expand * d_model
        self.in_proj = Linear(d_model, 2 * self.d_inner, bias=False)
        self.conv_weight = Parameter((conv_width, self.d_inner), fan_in_uniform(conv_width))
        self.conv_bias = Parameter((self.d_inner,), zeros_init)
        self.s6 = S6(self.d_inner, d_state or default_state_size(d_model), chunk=chunk, workers=workers)
        self.out_proj = Linear(self.d_inner, d_model, bias=False, residual=True)

    def mixer(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[1] < 1:
            raise DimensionError(f"séquence (B, L≥1, C) attendue, reçu {x.shape}")
        xz = self.in_proj(x)
        xs = T.slice_axis(xz, 0, self.d_inner, axis=-1)
        gate = T.slice_axis(xz, self.d_inner, 2 * self.d_inner, axis=-1)
        xs = T.silu(conv1d_depthwise_causal(xs, self.conv_weight, self.conv_bias))
        y = self.s6(xs)
        return self.out_proj(T.mul(y, T.silu(gate)))

    def forward(self, x: Tensor) -> Tensor:
        return T.add(x, self.mixer(x))

    def zero_residual(self):
        self.out_proj.weight.data = np.zeros_like(self.out_proj.weight.data)


class Mlp(Module):
    def __init__(self, d_model: int, ratio: int = 4):
        hidden = ratio * d_model
        self.fc1 = Linear(d_model, hidden)
        self.fc2 = Linear(hidden, d_model, residual=True)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.silu(self.fc1(x)))

    def zero_residual(self):
        self.fc2.weight.data = np.zeros_like(self.fc2.weight.data)
        self.fc2.bias.data = np.zeros_like(self.fc2.bias.data)


class MambaLayer(Module):
    """u = x + mixer(LN(x)) ; sortie = u + MLP(LN(u))"""

    residual_branches = 2

    def __init__(self, d_model: int, expand: int = 2, conv_width: int = 4, mlp_ratio: int = 4, d_state: int = None, chunk: int = None, workers: int = 1):
        self.norm1 = LayerNorm(d_model)
        self.block = MambaBlock(d_model, expand, conv_width, d_state, chunk, workers)
        self.norm2 = LayerNorm(d_model)
        self.mlp = Mlp(d_model, mlp_ratio)

    def forward(self, x: Tensor) -> Tensor:
        u = T.add(x, self.block.mixer(self.norm1(x)))
        return T.add(u, self.mlp(self.norm2(u)))

    def zero_residual(self):
        self.block.zero_residual()
        self.mlp.zero_residual()


def mamba_block(x: Tensor, weights: MambaBlock) -> Tensor:
    return weights(x)


def mamba_layer(x: Tensor, weights: MambaLayer) -> Tensor:
    return weights(x)
