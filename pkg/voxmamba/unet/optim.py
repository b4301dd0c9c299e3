"""Optimiseurs RAdam / Adam et planification linéaire du taux d'apprentissage"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from voxmamba.autodiff.module import Module
from voxmamba.errors import ConfigurationError

logger = logging.getLogger(__name__)

OPTIMIZERS = ("radam", "adam")

# Seuil de rectification de la variance
RHO_THRESHOLD = 5.0


@dataclass
class OptimizerState:
    name: str = "radam"
    lr: float = 3e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        self.name = str(self.name).lower()
        self.betas = tuple(float(b) for b in self.betas)
        if self.name not in OPTIMIZERS:
            raise ConfigurationError(f"optimiseur inconnu '{self.name}', attendus: {list(OPTIMIZERS)}")
        if self.lr < 0:
            raise ConfigurationError(f"taux d'apprentissage négatif: {self.lr}")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigurationError(f"betas dans [0, 1) attendus: {self.betas}")

    def settings(self) -> dict:
        return {"name": self.name, "lr": self.lr, "betas": list(self.betas), "eps": self.eps}


def _radam_direction(m_hat, v, beta2, t, eps):
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    beta2_t = beta2 ** t
    rho_t = rho_inf - 2.0 * t * beta2_t / (1.0 - beta2_t)
    if rho_t <= RHO_THRESHOLD:
        # Variance non rectifiable : pas de moment non adapté
        return m_hat
    rect = math.sqrt(
        (rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)
    )
    adaptive = math.sqrt(1.0 - beta2_t) / (np.sqrt(v) + eps)
    return rect * m_hat * adaptive


def _adam_direction(m_hat, v, beta2, t, eps):
    v_hat = v / (1.0 - beta2 ** t)
    return m_hat / (np.sqrt(v_hat) + eps)


def optimizer_step(model: Module, state: OptimizerState, lr: float = None) -> OptimizerState:
    """Une mise à jour ; les paramètres sans gradient sont laissés intacts"""
    lr = state.lr if lr is None else lr
    beta1, beta2 = state.betas
    state.step += 1
    t = state.step
    direction_fn = _radam_direction if state.name == "radam" else _adam_direction
    for name, p in model.named_parameters():
        if p.grad is None:
            continue
        g = p.grad.astype(np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - beta1 ** t)
        update = direction_fn(m_hat, v, beta2, t, state.eps)
        p.data = (p.data - lr * update).astype(p.dtype)
    return state


@dataclass(frozen=True)
class LinearSchedule:
    """lr(e) = base · (1 − e / E)"""

    base: float
    epochs: int

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs ≥ 1 attendu, reçu {self.epochs}")

    def __call__(self, epoch: int) -> float:
        return self.base * (1.0 - epoch / self.epochs)
