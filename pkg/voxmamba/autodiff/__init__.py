from voxmamba.autodiff.tensor import (
    TAPE,
    GradTape,
    Tensor,
    backward,
    count_macs,
    elementwise,
    get_default_dtype,
    layer_norm,
    matmul,
    no_grad,
    permute_axes,
    set_default_dtype,
)
from voxmamba.autodiff.conv import conv1d_depthwise_causal, conv3d, conv_transpose3d
from voxmamba.autodiff.module import Linear, LayerNorm, Module, Parameter, initialize

__all__ = [
    "TAPE",
    "GradTape",
    "Tensor",
    "backward",
    "count_macs",
    "elementwise",
    "get_default_dtype",
    "layer_norm",
    "matmul",
    "no_grad",
    "permute_axes",
    "set_default_dtype",
    "conv1d_depthwise_causal",
    "conv3d",
    "conv_transpose3d",
    "Linear",
    "LayerNorm",
    "Module",
    "Parameter",
    "initialize",
]
