import logging
import math

import numpy as np

from voxmamba.autodiff.module import Linear, Module, Parameter
from voxmamba.autodiff.tensor import Tensor
from voxmamba.errors import NumericError
from voxmamba.ssm.discretize import default_state_size, select_params
from voxmamba.ssm.scan import selective_scan

logger = logging.getLogger(__name__)


def a_log_init(rng, shape):
    """Initialisation réelle de type S4D : a_n = −(n + 1), stockée en log(−A)"""
    d_inner, n_state = shape
    return np.log(np.tile(np.arange(1, n_state + 1, dtype=np.float64), (d_inner, 1)))


def dt_bias_init(dt_min: float = 1e-3, dt_max: float = 1e-1):
    """Biais de Δ tel que softplus(biais) suive une loi log-uniforme sur [dt_min, dt_max]"""
    def init(rng, shape):
        dt = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), size=shape))
        return dt + np.log(-np.expm1(-dt))
    return init


class S6(Module):
    """Poids du modèle S6 : projections de sélection, biais de Δ et log(−A)"""

    def __init__(self, d_inner: int, d_state: int = None, chunk: int = None, workers: int = 1):
        self.d_inner = d_inner
        self.d_state = d_state or default_state_size(d_inner)
        self.chunk = chunk
        self.workers = workers
        self.b_proj = Linear(d_inner, self.d_state, bias=False)
        self.c_proj = Linear(d_inner, self.d_state, bias=False)
        self.dt_proj = Linear(d_inner, 1, bias=False)
        self.dt_bias = Parameter((d_inner,), dt_bias_init())
        self.a_log = Parameter((d_inner, self.d_state), a_log_init)

    def forward(self, x: Tensor) -> Tensor:
        return s6_forward(x, self, chunk=self.chunk, workers=self.workers)


def s6_forward(x: Tensor, weights: S6, chunk: int = None, workers: int = 1) -> Tensor:
    """select_params → discrétisation ZOH par token → balayage. x : (B, L, D)"""
    if not np.all(np.isfinite(x.data)):
        raise NumericError("s6_forward: entrée non finie")
    params = select_params(x, weights)
    return selective_scan(x, params.delta, params.A, params.B, params.C, chunk=chunk, workers=workers)
