"""Paramètres SSM, projections de sélection et discrétisation ZOH"""

import logging
from dataclasses import dataclass

import numpy as np

from voxmamba.autodiff import tensor as T
from voxmamba.autodiff.tensor import Tensor, make_op
from voxmamba.errors import ContractError, NumericError, SingularDiscretizationError

logger = logging.getLogger(__name__)

MAX_STATE_SIZE = 256


def default_state_size(d_model: int) -> int:
    """Taille d'état N = min(C, 256)"""
    return min(int(d_model), MAX_STATE_SIZE)


@dataclass(frozen=True)
class SsmParams:
    """A (diagonale par canal, D×N), B et C sélectionnés (…×L×N), Δ (…×L×D)"""

    A: Tensor
    B: Tensor
    C: Tensor
    delta: Tensor

    @property
    def n_state(self) -> int:
        return self.A.shape[-1]

    @property
    def d_model(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class DiscretizedParams:
    """Ā et B̄ par token et par canal : …×L×D×N"""

    A_bar: Tensor
    B_bar: Tensor


def check_ssm_inputs(A: np.ndarray, delta: np.ndarray):
    if np.any(A == 0):
        raise SingularDiscretizationError(
            "discrétisation ZOH singulière: une entrée de A vaut 0, (ΔA)⁻¹ n'existe pas"
        )
    if np.any(delta <= 0):
        raise ContractError("Δ doit être strictement positif")


def zoh_gain(delta: Tensor, A: Tensor) -> Tensor:
    """e = (exp(Δa) − 1) / a, le facteur de B̄ = e·b"""
    z = delta.data * A.data
    abar = np.exp(z)
    gain = np.expm1(z) / A.data

    def backward(g):
        g_delta = g * abar
        g_a = g * (delta.data * abar - gain) / A.data
        return T.unbroadcast(g_delta, delta.shape), T.unbroadcast(g_a, A.shape)

    return make_op("zoh_gain", gain.astype(delta.dtype), (delta, A), backward)


def discretize_zoh(A: Tensor, B: Tensor, delta: Tensor) -> DiscretizedParams:
    """Maintien d'ordre zéro élément par élément (A diagonale).

    ``A`` : (D, N) ; ``B`` : (…, N) ; ``delta`` : (…, D).
    Ā = exp(Δa), B̄ = ((exp(Δa) − 1) / a)·b, formes (…, D, N).
    """
    check_ssm_inputs(A.data, delta.data)
    delta_e = T.reshape(delta, delta.shape + (1,))
    B_e = T.reshape(B, B.shape[:-1] + (1, B.shape[-1]))
    A_bar = T.exp(T.mul(delta_e, A))
    B_bar = T.mul(zoh_gain(delta_e, A), B_e)
    return DiscretizedParams(A_bar=A_bar, B_bar=B_bar)


def select_params(x: Tensor, weights) -> SsmParams:
    """Sélection : B = Linear_N(x), C = Linear_N(x),
    Δ = SoftPlus(biais + Broadcast_D(Linear_1(x)))"""
    if not np.all(np.isfinite(x.data)):
        raise NumericError("select_params: entrée non finie")
    B = weights.b_proj(x)
    C = weights.c_proj(x)
    delta = T.softplus(T.add(weights.dt_proj(x), weights.dt_bias))
    A = T.neg(T.exp(weights.a_log))
    return SsmParams(A=A, B=B, C=C, delta=delta)
