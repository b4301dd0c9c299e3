"""Balayage sélectif : récurrence h_t = Ā_t ⊙ h_{t−1} + B̄_t ⊙ x_t, y_t = C_t · h_t.

Convention : h_{−1} = 0 et y_t voit x_{≤t}.

Deux noyaux numpy calculent les états :

- ``states_sequential`` : boucle directe sur le temps, l'oracle de référence ;
- ``states_chunked`` : découpe la séquence en blocs de longueur ``chunk``,
  balaie tous les blocs en parallèle depuis un état nul en accumulant la
  composée affine (h ↦ αh + β) de chaque bloc, propage l'état d'entrée de bloc
  en bloc, puis corrige. Avec ``chunk = 1`` ou ``chunk ≥ L`` l'arithmétique est
  exactement celle du noyau séquentiel.

Les canaux peuvent être répartis sur plusieurs threads (``workers``) ; les
résultats sont recollés dans l'ordre des canaux.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from functools import partial

import numpy as np

from voxmamba.autodiff import tensor as T
from voxmamba.autodiff.tensor import Tensor, make_op, record_macs
from voxmamba.errors import ContractError, DimensionError
from voxmamba.ssm.discretize import DiscretizedParams, check_ssm_inputs

logger = logging.getLogger(__name__)

DEFAULT_CHUNK = 64


def states_sequential(a: np.ndarray, u: np.ndarray) -> np.ndarray:
    """États (B, L, D, N) de la récurrence h_t = a_t h_{t−1} + u_t"""
    h = np.empty_like(u)
    prev = np.zeros_like(u[:, 0]) if u.shape[1] else None
    for t in range(u.shape[1]):
        prev = a[:, t] * prev + u[:, t]
        h[:, t] = prev
    return h


def _chunk_states(a: np.ndarray, u: np.ndarray, chunk: int) -> np.ndarray:
    batch, length = u.shape[:2]
    tail = u.shape[2:]
    n_chunks = math.ceil(length / chunk)
    pad = n_chunks * chunk - length
    if pad:
        a = np.concatenate([a, np.ones((batch, pad) + tail, dtype=a.dtype)], axis=1)
        u = np.concatenate([u, np.zeros((batch, pad) + tail, dtype=u.dtype)], axis=1)
    a = a.reshape((batch, n_chunks, chunk) + tail)
    u = u.reshape((batch, n_chunks, chunk) + tail)

    # Balayage local de chaque bloc depuis h = 0, tous blocs à la fois
    local = np.empty_like(u)
    alpha = np.empty_like(a)
    local[:, :, 0] = u[:, :, 0]
    alpha[:, :, 0] = a[:, :, 0]
    for t in range(1, chunk):
        local[:, :, t] = a[:, :, t] * local[:, :, t - 1] + u[:, :, t]
        alpha[:, :, t] = alpha[:, :, t - 1] * a[:, :, t]

    # Propagation de l'état d'entrée d'un bloc au suivant
    carry = np.zeros((batch, n_chunks) + tail, dtype=u.dtype)
    for k in range(1, n_chunks):
        carry[:, k] = alpha[:, k - 1, -1] * carry[:, k - 1] + local[:, k - 1, -1]

    h = local + alpha * carry[:, :, None]
    return h.reshape((batch, n_chunks * chunk) + tail)[:, :length]


def states_chunked(a: np.ndarray, u: np.ndarray, chunk: int = DEFAULT_CHUNK, workers: int = 1) -> np.ndarray:
    if chunk < 1:
        raise ContractError(f"la taille de bloc doit être ≥ 1, reçu {chunk}")
    if u.shape[1] == 0:
        return np.empty_like(u)
    channels = u.shape[2]
    workers = max(1, min(int(workers), channels))
    if workers == 1:
        return _chunk_states(a, u, chunk)
    groups = np.array_split(np.arange(channels), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(
            lambda idx: _chunk_states(a[:, :, idx[0]:idx[-1] + 1], u[:, :, idx[0]:idx[-1] + 1], chunk),
            groups,
        ))
    return np.concatenate(parts, axis=2)


def states_kernel(chunk: int = None, workers: int = 1):
    """Noyau d'états : séquentiel si ``chunk`` vaut None"""
    if chunk is None:
        return states_sequential
    return partial(states_chunked, chunk=chunk, workers=workers)


def _reverse_states(states_fn, a: np.ndarray, source: np.ndarray) -> np.ndarray:
    """Adjoint : dh_t = source_t + a_{t+1} ⊙ dh_{t+1}"""
    a_next = np.concatenate([a[:, 1:], np.zeros_like(a[:, :1])], axis=1)
    flipped = states_fn(np.ascontiguousarray(a_next[:, ::-1]), np.ascontiguousarray(source[:, ::-1]))
    return flipped[:, ::-1]


def _shifted(h: np.ndarray) -> np.ndarray:
    return np.concatenate([np.zeros_like(h[:, :1]), h[:, :-1]], axis=1)


def scan_states_output(a_bar: Tensor, u: Tensor, C: Tensor, states_fn) -> Tensor:
    """y = C · h avec h = scan(Ā, u) ; opération différentiable en (Ā, u, C)"""
    h = states_fn(a_bar.data, u.data)
    y = np.einsum("bldn,bln->bld", h, C.data)
    # récurrence puis contraction par C : deux par état
    record_macs(2 * h.size)

    def backward(g):
        dh = _reverse_states(states_fn, a_bar.data, g[..., None] * C.data[:, :, None, :])
        return dh * _shifted(h), dh, np.einsum("bld,bldn->bln", g, h)

    return make_op("scan", y, (a_bar, u, C), backward)


def _check_scan_shapes(x: Tensor, params: DiscretizedParams, C: Tensor):
    expected = x.shape + (C.shape[-1],)
    if params.A_bar.shape != expected or params.B_bar.shape != expected:
        raise DimensionError(
            f"scan: Ā {params.A_bar.shape} / B̄ {params.B_bar.shape} incompatibles avec x {x.shape} et C {C.shape}"
        )
    if C.shape[:-1] != x.shape[:-1]:
        raise DimensionError(f"scan: C {C.shape} incompatible avec x {x.shape}")


def _scan(x: Tensor, params: DiscretizedParams, C: Tensor, states_fn) -> Tensor:
    _check_scan_shapes(x, params, C)
    unbatched = x.ndim == 2
    a_bar, b_bar = params.A_bar, params.B_bar
    if unbatched:
        x = T.reshape(x, (1,) + x.shape)
        a_bar = T.reshape(a_bar, (1,) + a_bar.shape)
        b_bar = T.reshape(b_bar, (1,) + b_bar.shape)
        C = T.reshape(C, (1,) + C.shape)
    u = T.mul(b_bar, T.reshape(x, x.shape + (1,)))
    y = scan_states_output(a_bar, u, C, states_fn)
    if unbatched:
        y = T.reshape(y, y.shape[1:])
    return y


def scan_sequential(x: Tensor, params: DiscretizedParams, C: Tensor) -> Tensor:
    """Oracle séquentiel. x : (B, L, D) ou (L, D) ; C : (…, L, N)"""
    return _scan(x, params, C, states_sequential)


def scan_chunked(x: Tensor, params: DiscretizedParams, C: Tensor, chunk: int = DEFAULT_CHUNK, workers: int = 1) -> Tensor:
    """Même résultat que ``scan_sequential`` par composition affine de blocs"""
    if chunk < 1:
        raise ContractError(f"la taille de bloc doit être ≥ 1, reçu {chunk}")
    return _scan(x, params, C, partial(states_chunked, chunk=chunk, workers=workers))


def selective_scan(x: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor, chunk: int = None, workers: int = 1) -> Tensor:
    """Discrétisation ZOH + balayage fusionnés.

    x, delta : (B, L, D) ; A : (D, N) ; B, C : (B, L, N).
    Seuls les états h sont conservés pour la passe arrière ; Ā et B̄ sont
    recalculés élément par élément.
    """
    check_ssm_inputs(A.data, delta.data)
    states_fn = states_kernel(chunk, workers)
    a = A.data

    def discretize():
        z = delta.data[..., None] * a
        a_bar = np.exp(z)
        gain = np.expm1(z) / a
        return a_bar, gain

    a_bar, gain = discretize()
    b_bar = gain * B.data[:, :, None, :]
    h = states_fn(a_bar, b_bar * x.data[..., None])
    del b_bar
    y = np.einsum("bldn,bln->bld", h, C.data)
    record_macs(2 * h.size)

    def backward(g):
        a_bar, gain = discretize()
        b_bar = gain * B.data[:, :, None, :]
        dh = _reverse_states(states_fn, a_bar, g[..., None] * C.data[:, :, None, :])
        g_abar = dh * _shifted(h)
        g_x = np.einsum("bldn,bldn->bld", dh, b_bar)
        g_bbar = dh * x.data[..., None]
        g_B = np.einsum("bldn,bldn->bln", g_bbar, gain)
        g_gain = g_bbar * B.data[:, :, None, :]
        g_delta = np.einsum("bldn,dn->bld", g_abar * a_bar, a) + np.einsum("bldn->bld", g_gain * a_bar)
        dl = delta.data[..., None]
        g_A = np.einsum("bldn->dn", g_abar * dl * a_bar + g_gain * (dl * a_bar - gain) / a)
        g_C = np.einsum("bld,bldn->bln", g, h)
        return g_x, g_delta, g_A, g_B, g_C

    return make_op("selective_scan", y.astype(x.dtype), (x, delta, A, B, C), backward)
