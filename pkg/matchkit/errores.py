"""
Jerarquía de excepciones del proyecto.

La CLI traduce cada clase a un código de salida (atributo ``exit_code``); el resto
del código solo lanza.
"""

from typing import Optional


class MatchkitError(Exception):
    """Raíz de todos los errores de matchkit"""

    exit_code = 1


class ShapeError(MatchkitError, ValueError):
    """Formas incompatibles entre tensores o entradas"""

    exit_code = 2


class GraphConsumedError(MatchkitError, RuntimeError):
    """El grafo ya se recorrió con backward y no puede reutilizarse"""

    exit_code = 3


class ConfigError(MatchkitError, ValueError):
    """Configuración inválida o incompatible"""

    exit_code = 1


class DataError(MatchkitError, ValueError):
    """Datos ausentes, ilegibles o insuficientes"""

    exit_code = 2


class CheckpointError(DataError):
    """Checkpoint con cabecera o versión inválida"""


class ChecksumError(CheckpointError):
    """El CRC32 del checkpoint no coincide"""


class NumericError(MatchkitError, FloatingPointError):
    """Aparición de NaN/Inf durante el cálculo"""

    exit_code = 3

    def __init__(self, message: str, checkpoint_path: Optional[str] = None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class GradcheckError(MatchkitError, AssertionError):
    """El gradiente analítico no coincide con diferencias finitas"""

    exit_code = 4

    def __init__(self, message: str, parameter: Optional[str] = None):
        super().__init__(message)
        self.parameter = parameter

