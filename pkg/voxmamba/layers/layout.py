"""Ordonnancements voxel → séquence.

Un ``DirectionalLayout`` permute les axes spatiaux (H, W, D) puis aplatit en
ordre ligne : le dernier axe de la permutation est le plus rapide (contigu).
Avec (H, W, D), les voxels (0,0,0) et (0,0,1) sont voisins dans la séquence ;
(0,0,0) et (1,0,0) sont à distance W·D.
"""

import itertools
from dataclasses import dataclass

from voxmamba.autodiff import tensor as T
from voxmamba.autodiff.tensor import Tensor
from voxmamba.errors import ConfigurationError, ContractError, DimensionError

AXIS_NAMES = ("H", "W", "D")


@dataclass(frozen=True)
class DirectionalLayout:
    perm: tuple = (0, 1, 2)
    reversed: bool = False

    def __post_init__(self):
        perm = tuple(int(p) for p in self.perm)
        if sorted(perm) != [0, 1, 2]:
            raise ContractError(f"permutation spatiale invalide: {self.perm}")
        object.__setattr__(self, "perm", perm)

    @classmethod
    def parse(cls, text: str) -> "DirectionalLayout":
        """'HWD', 'DWH-' (suffixe '-' : sens inverse)"""
        reverse = text.endswith("-")
        letters = text.rstrip("-+").upper()
        try:
            perm = tuple(AXIS_NAMES.index(c) for c in letters)
        except ValueError:
            raise ConfigurationError(f"disposition illisible: '{text}'") from None
        return cls(perm=perm, reversed=reverse)

    @property
    def name(self) -> str:
        return "".join(AXIS_NAMES[p] for p in self.perm) + ("-" if self.reversed else "")

    def mirrored(self) -> "DirectionalLayout":
        return DirectionalLayout(self.perm, not self.reversed)

    def relabel(self, axis_map) -> "DirectionalLayout":
        """Applique un renommage des axes spatiaux (axe i → axis_map[i])"""
        return DirectionalLayout(tuple(axis_map[p] for p in self.perm), self.reversed)


ALL_LAYOUTS = tuple(
    DirectionalLayout(perm, rev)
    for perm in itertools.permutations(range(3))
    for rev in (False, True)
)

# (H, W, D), (H, D, W), (W, H, D), (D, W, H)
DEFAULT_DIRECTIONS = tuple(
    DirectionalLayout.parse(name) for name in ("HWD", "HDW", "WHD", "DWH")
)


def validate_direction_set(layouts, bidirectional: bool = True) -> tuple:
    """Rejette un ensemble vide ou dupliqué.

    Une branche bidirectionnelle parcourt déjà sa disposition et son miroir :
    « HWD » et « HWD- » y désignent alors la même direction.
    """
    layouts = tuple(layouts)
    if not layouts:
        raise ConfigurationError("l'ensemble de directions est vide")
    seen = set()
    for layout in layouts:
        key = layout.perm if bidirectional else (layout.perm, layout.reversed)
        if key in seen:
            raise ConfigurationError(f"disposition dupliquée dans l'ensemble de directions: {layout.name}")
        seen.add(key)
    return layouts


def flatten_volume(v: Tensor, layout: DirectionalLayout) -> Tensor:
    """(B, H, W, D, C) → (B, L, C)"""
    if v.ndim != 5:
        raise DimensionError(f"volume (B,H,W,D,C) attendu, reçu {v.shape}")
    perm = (0,) + tuple(p + 1 for p in layout.perm) + (4,)
    permuted = T.permute_axes(v, perm)
    seq = T.reshape(permuted, (v.shape[0], -1, v.shape[-1]))
    if layout.reversed:
        seq = T.flip(seq, axis=1)
    return seq


def unflatten_volume(seq: Tensor, layout: DirectionalLayout, spatial) -> Tensor:
    """Inverse exact de ``flatten_volume`` pour la forme spatiale (H, W, D)"""
    spatial = tuple(int(s) for s in spatial)
    if seq.ndim != 3 or seq.shape[1] != spatial[0] * spatial[1] * spatial[2]:
        raise DimensionError(
            f"séquence {seq.shape} incompatible avec le volume {spatial}"
        )
    if layout.reversed:
        seq = T.flip(seq, axis=1)
    permuted_shape = tuple(spatial[p] for p in layout.perm)
    permuted = T.reshape(seq, (seq.shape[0],) + permuted_shape + (seq.shape[-1],))
    inverse = T.invert_permutation((0,) + tuple(p + 1 for p in layout.perm) + (4,))
    return T.permute_axes(permuted, inverse)


def reverse_sequence(seq: Tensor) -> Tensor:
    return T.flip(seq, axis=1)
