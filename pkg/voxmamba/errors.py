"""Hiérarchie d'exceptions de voxmamba"""


class VoxMambaError(Exception):
    """Erreur de base du projet"""

    exit_code = 1


class DimensionError(VoxMambaError):
    """Formes incompatibles"""

    exit_code = 2


class ContractError(VoxMambaError):
    """Précondition violée (permutation invalide, backward non scalaire...)"""

    exit_code = 2


class ConfigurationError(VoxMambaError):
    """Configuration invalide; le message nomme l'invariant violé"""

    exit_code = 2


class NumericError(VoxMambaError):
    """Valeur non finie produite par une opération"""

    exit_code = 3


class SingularDiscretizationError(NumericError):
    """a == 0 : l'inverse (ΔA)⁻¹ du maintien d'ordre zéro n'existe pas"""


class DivergenceError(NumericError):
    """Perte non finie pendant l'entraînement"""

    def __init__(self, step: int, loss: float):
        super().__init__(f"Divergence à l'étape {step}: perte = {loss}")
        self.step = step
        self.loss = loss


class FormatError(VoxMambaError):
    """Conteneur binaire invalide (volume ou checkpoint)"""

    exit_code = 4

    def __init__(self, message: str, offset: int = 0, expected=None, actual=None):
        detail = f"{message} (offset {offset}"
        if expected is not None:
            detail += f", attendu {expected}, obtenu {actual}"
        super().__init__(detail + ")")
        self.offset = offset
        self.expected = expected
        self.actual = actual
