"""Convolutions différentiables (disposition canaux en dernier).

Volumes : (B, H, W, D, C). Noyaux 3-D : (kh, kw, kd, C_in, C_out).
Séquences : (B, L, C). Noyau 1-D en profondeur : (largeur, C).

Sémantique de corrélation croisée ; taille de sortie par axe :
``out = floor((in + 2·pad − k) / stride) + 1``.
"""

import itertools

import numpy as np

from voxmamba.autodiff.tensor import Tensor, make_op, record_macs
from voxmamba.errors import ContractError, DimensionError


def _triple(value):
    if isinstance(value, int):
        return (value, value, value)
    value = tuple(int(v) for v in value)
    if len(value) != 3:
        raise ContractError(f"triplet attendu, reçu {value}")
    return value


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv3d(x: Tensor, weight: Tensor, bias: Tensor = None, stride=1, padding=0) -> Tensor:
    if x.ndim != 5 or weight.ndim != 5:
        raise DimensionError(
            f"conv3d attend (B,H,W,D,C) et (k,k,k,Cin,Cout), reçu {x.shape} et {weight.shape}"
        )
    if x.shape[-1] != weight.shape[3]:
        raise DimensionError(
            f"conv3d: canaux d'entrée {x.shape[-1]} incompatibles avec le noyau {weight.shape}"
        )
    stride = _triple(stride)
    padding = _triple(padding)
    kernel = weight.shape[:3]
    spatial = x.shape[1:4]
    for size, k, p in zip(spatial, kernel, padding):
        if k > size + 2 * p:
            raise DimensionError(
                f"conv3d: noyau {kernel} plus grand que l'entrée rembourrée {spatial} (pad {padding})"
            )
    out_size = tuple(conv_output_size(n, k, s, p) for n, k, s, p in zip(spatial, kernel, stride, padding))

    pad_width = ((0, 0),) + tuple((p, p) for p in padding) + ((0, 0),)
    xp = np.pad(x.data, pad_width)
    w = weight.data

    def window(i, j, l):
        return (
            slice(None),
            slice(i, i + stride[0] * (out_size[0] - 1) + 1, stride[0]),
            slice(j, j + stride[1] * (out_size[1] - 1) + 1, stride[1]),
            slice(l, l + stride[2] * (out_size[2] - 1) + 1, stride[2]),
            slice(None),
        )

    offsets = list(itertools.product(*(range(k) for k in kernel)))
    out = np.zeros((x.shape[0],) + out_size + (w.shape[-1],), dtype=x.dtype)
    for i, j, l in offsets:
        out += xp[window(i, j, l)] @ w[i, j, l]
    record_macs(out.size * (w.size // w.shape[-1]))
    parents = (x, weight)
    if bias is not None:
        out += bias.data
        parents = parents + (bias,)

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        for i, j, l in offsets:
            sl = window(i, j, l)
            gxp[sl] += g @ w[i, j, l].T
            gw[i, j, l] = np.tensordot(xp[sl], g, axes=([0, 1, 2, 3], [0, 1, 2, 3]))
        gx = gxp[
            :,
            padding[0]:padding[0] + spatial[0],
            padding[1]:padding[1] + spatial[1],
            padding[2]:padding[2] + spatial[2],
        ]
        grads = (gx, gw)
        if bias is not None:
            grads = grads + (g.sum(axis=(0, 1, 2, 3)),)
        return grads

    return make_op("conv3d", out, parents, backward)


def conv_transpose3d(x: Tensor, weight: Tensor, bias: Tensor = None, stride=2) -> Tensor:
    """Convolution transposée sans recouvrement (noyau == pas)"""
    stride = _triple(stride)
    kernel = weight.shape[:3]
    if tuple(kernel) != stride:
        raise ContractError(
            f"conv_transpose3d ne gère que noyau == pas, reçu noyau {kernel} et pas {stride}"
        )
    if x.shape[-1] != weight.shape[3]:
        raise DimensionError(
            f"conv_transpose3d: canaux {x.shape[-1]} incompatibles avec le noyau {weight.shape}"
        )
    b, h, wd, d, _ = x.shape
    w = weight.data
    out = np.zeros((b, h * stride[0], wd * stride[1], d * stride[2], w.shape[-1]), dtype=x.dtype)
    offsets = list(itertools.product(*(range(k) for k in kernel)))

    def window(i, j, l):
        return (slice(None), slice(i, None, stride[0]), slice(j, None, stride[1]), slice(l, None, stride[2]))

    for i, j, l in offsets:
        out[window(i, j, l)] = x.data @ w[i, j, l]
    record_macs(x.data.size // x.shape[-1] * w.size)
    parents = (x, weight)
    if bias is not None:
        out += bias.data
        parents = parents + (bias,)

    def backward(g):
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(w)
        for i, j, l in offsets:
            gi = g[window(i, j, l)]
            gx += gi @ w[i, j, l].T
            gw[i, j, l] = np.tensordot(x.data, gi, axes=([0, 1, 2, 3], [0, 1, 2, 3]))
        grads = (gx, gw)
        if bias is not None:
            grads = grads + (g.sum(axis=(0, 1, 2, 3)),)
        return grads

    return make_op("conv_transpose3d", out, parents, backward)


def conv1d_depthwise_causal(x: Tensor, weight: Tensor, bias: Tensor = None) -> Tensor:
    """Convolution 1-D par canal, causale : rembourrage à gauche de largeur − 1.

    La sortie au temps t ne dépend que des entrées ≤ t. ``weight[k]`` multiplie
    l'entrée au temps t − (largeur − 1) + k, donc le dernier coefficient est la
    prise « identité ».
    """
    if x.ndim != 3 or weight.ndim != 2 or weight.shape[1] != x.shape[-1]:
        raise DimensionError(
            f"conv1d causale attend (B,L,C) et (largeur,C), reçu {x.shape} et {weight.shape}"
        )
    width = weight.shape[0]
    length = x.shape[1]
    xp = np.pad(x.data, ((0, 0), (width - 1, 0), (0, 0)))
    w = weight.data
    out = np.zeros_like(x.data)
    for k in range(width):
        out += xp[:, k:k + length] * w[k]
    record_macs(out.size * width)
    parents = (x, weight)
    if bias is not None:
        out += bias.data
        parents = parents + (bias,)

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        for k in range(width):
            gxp[:, k:k + length] += g * w[k]
            gw[k] = (xp[:, k:k + length] * g).sum(axis=(0, 1))
        grads = (gxp[:, width - 1:], gw)
        if bias is not None:
            grads = grads + (g.sum(axis=(0, 1)),)
        return grads

    return make_op("conv1d_causal", out, parents, backward)
