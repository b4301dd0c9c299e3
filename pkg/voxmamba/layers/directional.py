"""Couches Mamba 3D : unidirectionnelle, bidirectionnelle et multi-directionnelle"""

import logging

from voxmamba.autodiff import tensor as T
from voxmamba.autodiff.module import LayerNorm, Module
from voxmamba.autodiff.tensor import Tensor
from voxmamba.errors import ConfigurationError
from voxmamba.layers.layout import (
    DEFAULT_DIRECTIONS,
    DirectionalLayout,
    flatten_volume,
    reverse_sequence,
    unflatten_volume,
    validate_direction_set,
)
from voxmamba.layers.mamba import MambaLayer

logger = logging.getLogger(__name__)


def _spatial(v: Tensor):
    return v.shape[1:4]


class Mamba3D(Module):
    """Une couche Mamba sur l'aplatissement d'un volume (sens direct uniquement)"""

    def __init__(self, d_model: int, layout: DirectionalLayout = DirectionalLayout(), **layer_kwargs):
        self.layout = layout
        self.layer = MambaLayer(d_model, **layer_kwargs)

    @property
    def residual_branches(self) -> int:
        return MambaLayer.residual_branches

    def forward(self, v: Tensor) -> Tensor:
        seq = flatten_volume(v, self.layout)
        return unflatten_volume(self.layer(seq), self.layout, _spatial(v))

    def zero_residual(self):
        self.layer.zero_residual()


class BidirectionalMamba3D(Module):
    """Deux couches Mamba indépendantes, l'une sur la séquence inversée,
    sommées token par token puis normalisées (LayerNorm sur les canaux)"""

    def __init__(self, d_model: int, layout: DirectionalLayout = DirectionalLayout(), **layer_kwargs):
        self.layout = layout
        self.forward_layer = MambaLayer(d_model, **layer_kwargs)
        self.backward_layer = MambaLayer(d_model, **layer_kwargs)
        self.norm = LayerNorm(d_model)

    @property
    def residual_branches(self) -> int:
        return 2 * MambaLayer.residual_branches

    def pre_norm_sum(self, seq: Tensor) -> Tensor:
        out_f = self.forward_layer(seq)
        out_b = reverse_sequence(self.backward_layer(reverse_sequence(seq)))
        return T.add(out_f, out_b)

    def forward(self, v: Tensor) -> Tensor:
        seq = flatten_volume(v, self.layout)
        return unflatten_volume(self.norm(self.pre_norm_sum(seq)), self.layout, _spatial(v))

    def zero_residual(self):
        self.forward_layer.zero_residual()
        self.backward_layer.zero_residual()


class MultiDirectionalMamba3D(Module):
    """Une couche bidirectionnelle par permutation ; sorties empilées puis moyennées"""

    def __init__(self, d_model: int, direction_set=DEFAULT_DIRECTIONS, branches=None, **layer_kwargs):
        self.direction_set = validate_direction_set(direction_set)
        if branches is None:
            branches = [BidirectionalMamba3D(d_model, layout, **layer_kwargs) for layout in self.direction_set]
        self.branches = list(branches)

    @property
    def residual_branches(self) -> int:
        return sum(getattr(b, "residual_branches", 0) for b in self.branches)

    def forward(self, v: Tensor) -> Tensor:
        outputs = [branch(v) for branch in self.branches]
        return T.mean(T.stack(outputs, axis=0), axis=0)

    def zero_residual(self):
        for branch in self.branches:
            branch.zero_residual()


def bidir_mamba_3d(v: Tensor, w_fwd: MambaLayer, w_bwd: MambaLayer, norm: LayerNorm = None, layout: DirectionalLayout = DirectionalLayout()) -> Tensor:
    """Forme fonctionnelle : branches et normalisation passées explicitement"""
    seq = flatten_volume(v, layout)
    out_f = w_fwd(seq)
    out_b = reverse_sequence(w_bwd(reverse_sequence(seq)))
    summed = T.add(out_f, out_b)
    normed = norm(summed) if norm is not None else T.layer_norm(summed)
    return unflatten_volume(normed, layout, _spatial(v))


def multidir_mamba_3d(v: Tensor, branches, direction_set=None) -> Tensor:
    """Forme fonctionnelle : une branche par direction, sorties moyennées.

    Sans ``direction_set`` explicite, les dispositions sont lues sur les branches
    qui en portent une.
    """
    branches = list(branches)
    if not branches:
        raise ConfigurationError("aucune branche directionnelle")
    if direction_set is None:
        direction_set = [b.layout for b in branches if hasattr(b, "layout")] or None
    if direction_set is not None:
        if len(direction_set) != len(branches):
            raise ConfigurationError(
                f"{len(branches)} branches pour {len(direction_set)} directions"
            )
        validate_direction_set(direction_set)
    return T.mean(T.stack([branch(v) for branch in branches], axis=0), axis=0)
