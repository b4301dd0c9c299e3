"""U-Net 3D compact et placement des couches Mamba selon la variante.

Encodeur : niveau 0 = ConvBlock(C_in → w0) ; niveau s ≥ 1 = ConvBlock dont la
première convolution est à pas 2 (la « convolution de pooling »).
Décodeur : convolution transposée (noyau = pas = 2), concaténation [skip, up],
ConvBlock(2·w → w). Tête : convolution 1³ vers les classes.
"""

import logging

import numpy as np

from voxmamba.autodiff import tensor as T
from voxmamba.autodiff.conv import conv3d, conv_transpose3d
from voxmamba.autodiff.module import (
    Module,
    Parameter,
    fan_in_uniform,
    initialize,
    ones_init,
    residual_scaling,
    zeros_init,
)
from voxmamba.autodiff.tensor import Tensor, as_tensor
from voxmamba.errors import DimensionError
from voxmamba.layers.directional import BidirectionalMamba3D, Mamba3D, MultiDirectionalMamba3D
from voxmamba.layers.layout import DirectionalLayout
from voxmamba.unet.config import Variant, VariantConfig

logger = logging.getLogger(__name__)


class Conv3d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3, stride: int = 1, padding: int = 1):
        self.stride = stride
        self.padding = padding
        fan_in = kernel ** 3 * in_channels
        self.weight = Parameter((kernel, kernel, kernel, in_channels, out_channels), fan_in_uniform(fan_in))
        self.bias = Parameter((out_channels,), zeros_init)

    def forward(self, x: Tensor) -> Tensor:
        return conv3d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose3d(Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int = 2):
        self.stride = stride
        self.weight = Parameter(
            (stride, stride, stride, in_channels, out_channels), fan_in_uniform(in_channels)
        )
        self.bias = Parameter((out_channels,), zeros_init)

    def forward(self, x: Tensor) -> Tensor:
        return conv_transpose3d(x, self.weight, self.bias, stride=self.stride)


class InstanceNorm(Module):
    """Normalisation par échantillon et par canal sur les axes spatiaux"""

    def __init__(self, channels: int, eps: float = 1e-5):
        self.eps = eps
        self.gain = Parameter((channels,), ones_init)
        self.bias = Parameter((channels,), zeros_init)

    def forward(self, x: Tensor) -> Tensor:
        return T.add(T.mul(T.normalize(x, axes=(1, 2, 3), eps=self.eps), self.gain), self.bias)


class ConvBlock(Module):
    """2 × (conv 3³ → InstanceNorm → LeakyReLU 0.01)"""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        self.conv1 = Conv3d(in_channels, out_channels, 3, stride=stride, padding=1)
        self.norm1 = InstanceNorm(out_channels)
        self.conv2 = Conv3d(out_channels, out_channels, 3, stride=1, padding=1)
        self.norm2 = InstanceNorm(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        x = T.leaky_relu(self.norm1(self.conv1(x)), 0.01)
        return T.leaky_relu(self.norm2(self.conv2(x)), 0.01)


def _mamba_module(cfg: VariantConfig, width: int, bidirectional: bool = False) -> Module:
    kwargs = dict(
        expand=cfg.expand,
        conv_width=cfg.conv_width,
        mlp_ratio=cfg.mlp_ratio,
        chunk=cfg.chunk,
        workers=cfg.workers,
    )
    if cfg.variant is Variant.MULTISEGMAMBA:
        return MultiDirectionalMamba3D(width, cfg.layouts, **kwargs)
    if bidirectional or cfg.variant is Variant.PANSEGMAMBA:
        return BidirectionalMamba3D(width, DirectionalLayout(), **kwargs)
    return Mamba3D(width, DirectionalLayout(), **kwargs)


class UNet(Module):
    def __init__(self, cfg: VariantConfig):
        self.cfg = cfg
        widths = cfg.widths
        stages = cfg.stages

        self.encoder = [ConvBlock(cfg.in_channels, widths[0])]
        for s in range(1, stages):
            self.encoder.append(ConvBlock(widths[s - 1], widths[s], stride=2))

        # Avant chaque convolution de pooling et au goulot
        self.encoder_mamba = []
        if cfg.variant in (Variant.SEGMAMBA, Variant.PANSEGMAMBA, Variant.MULTISEGMAMBA):
            self.encoder_mamba = [_mamba_module(cfg, widths[s]) for s in range(stages)]

        # Une couche bidirectionnelle par connexion de saut
        self.skip_mamba = []
        if cfg.variant is Variant.SEGMAMBA_SKIP:
            self.skip_mamba = [_mamba_module(cfg, widths[s], bidirectional=True) for s in range(stages - 1)]

        self.upsample = [ConvTranspose3d(widths[s + 1], widths[s]) for s in range(stages - 1)]
        self.decoder = [ConvBlock(2 * widths[s], widths[s]) for s in range(stages - 1)]
        self.head = Conv3d(widths[0], cfg.classes, kernel=1, padding=0)

    @property
    def mamba_modules(self) -> list:
        return list(self.encoder_mamba) + list(self.skip_mamba)

    @property
    def residual_branches(self) -> int:
        return sum(m.residual_branches for m in self.mamba_modules)

    def forward(self, x: Tensor) -> Tensor:
        skips = []
        h = x
        for s, block in enumerate(self.encoder):
            h = block(h)
            if self.encoder_mamba:
                h = self.encoder_mamba[s](h)
            skips.append(h)

        for s, layer in enumerate(self.skip_mamba):
            skips[s] = layer(skips[s])

        for s in reversed(range(self.cfg.stages - 1)):
            up = self.upsample[s](h)
            h = self.decoder[s](T.concat([skips[s], up], axis=-1))
        return self.head(h)

    def zero_residual(self):
        for module in self.mamba_modules:
            module.zero_residual()


def build_variant(cfg: VariantConfig, seed: int = 0, dtype=None) -> UNet:
    cfg.validate()
    model = UNet(cfg)
    n_res = model.residual_branches
    initialize(model, seed, residual_scale=residual_scaling(n_res), dtype=dtype)
    logger.info(
        "Variante %s: %d modules Mamba, %d branches résiduelles, %d paramètres",
        cfg.variant.value, len(model.mamba_modules), n_res, model.num_parameters(),
    )
    return model


def forward(model: UNet, volume) -> Tensor:
    """(H, W, D, C_in) ou (B, H, W, D, C_in) → logits de même forme spatiale"""
    volume = as_tensor(volume)
    cfg = model.cfg
    batched = volume.ndim == 5
    if volume.ndim not in (4, 5):
        raise DimensionError(f"volume (H,W,D,C) ou (B,H,W,D,C) attendu, reçu {volume.shape}")
    if not batched:
        volume = T.reshape(volume, (1,) + volume.shape)
    expected = tuple(cfg.crop) + (cfg.in_channels,)
    if volume.shape[1:] != expected:
        raise DimensionError(f"le modèle attend {expected}, reçu {volume.shape[1:]}")
    logits = model(volume)
    if not batched:
        logits = T.reshape(logits, logits.shape[1:])
    return logits


def count_parameters(model: UNet) -> dict:
    mamba = sum(m.num_parameters() for m in model.mamba_modules)
    total = model.num_parameters()
    return {"total": total, "mamba": mamba, "conv": total - mamba}


def mamba_modules(model: UNet) -> list:
    return model.mamba_modules


def count_flops(model: UNet) -> int:
    """FLOPs d'une passe avant sur un crop, à raison de 2 par multiplication-addition.

    Seuls les produits matriciels, convolutions et balayages sont comptés ; les
    normalisations et activations sont négligées.
    """
    cfg = model.cfg
    x = Tensor(np.zeros((1,) + tuple(cfg.crop) + (cfg.in_channels,), dtype=T.get_default_dtype()))
    with T.no_grad(), T.count_macs() as counter:
        model(x)
    return 2 * counter["macs"]


def parameter_table(configs) -> list:
    """Lignes (variante, total, mamba, GFLOPs) pour une liste de configurations"""
    rows = []
    for cfg in configs:
        model = build_variant(cfg)
        counts = count_parameters(model)
        rows.append((cfg.variant.value, counts["total"], counts["mamba"], count_flops(model) / 1e9))
    return rows

