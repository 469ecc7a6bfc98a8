"""
Colección de parámetros del modelo (θ) y estadísticas de batchnorm
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from matchkit.errores import ConfigError
from matchkit.nucleo.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class RunningStats:
    """Media y varianza acumuladas de un batchnorm (por canal)"""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, canales: int, dtype=np.float64) -> "RunningStats":
        return cls(np.zeros(canales, dtype=dtype), np.ones(canales, dtype=dtype))

    def copy(self) -> "RunningStats":
        return RunningStats(self.mean.copy(), self.var.copy())


class ModelParams:
    """Mapa ordenado nombre → Tensor entrenable, más buffers de batchnorm.

    Los nombres son rutas con puntos (``enc.b0.conv.w``, ``fce.att.W_f``...) y
    las formas quedan fijas tras la inicialización.
    """

    def __init__(
        self,
        tensores: Optional[Dict[str, Tensor]] = None,
        buffers: Optional[Dict[str, RunningStats]] = None,
    ):
        self._tensores: Dict[str, Tensor] = {}
        self.buffers: Dict[str, RunningStats] = dict(buffers or {})
        for nombre, t in (tensores or {}).items():
            self._tensores[nombre] = t

    # -- acceso -----------------------------------------------------------
    def __getitem__(self, nombre: str) -> Tensor:
        try:
            return self._tensores[nombre]
        except KeyError:
            raise KeyError(f"Parámetro desconocido: {nombre}") from None

    def __contains__(self, nombre: str) -> bool:
        return nombre in self._tensores

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensores)

    def __len__(self) -> int:
        return len(self._tensores)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._tensores.items())

    def names(self):
        return list(self._tensores)

    @property
    def num_values(self) -> int:
        return int(sum(t.size for t in self._tensores.values()))

    # -- construcción -----------------------------------------------------
    def add(self, nombre: str, valores: np.ndarray, requires_grad: bool = True) -> Tensor:
        if nombre in self._tensores:
            raise ConfigError(f"Parámetro duplicado: {nombre}")
        t = Tensor(np.ascontiguousarray(valores), requires_grad=requires_grad)
        self._tensores[nombre] = t
        return t

    def add_buffer(self, nombre: str, stats: RunningStats):
        if nombre in self.buffers:
            raise ConfigError(f"Buffer duplicado: {nombre}")
        self.buffers[nombre] = stats

    # -- copias -----------------------------------------------------------
    def zero_grad(self):
        for t in self._tensores.values():
            t.zero_grad()

    def copy(self) -> "ModelParams":
        """Copia profunda e independiente (copy-on-write del ajuste fino)"""
        return ModelParams(
            {n: Tensor(t.data.copy(), requires_grad=t.requires_grad) for n, t in self.items()},
            {n: b.copy() for n, b in self.buffers.items()},
        )

    def detached(self) -> "ModelParams":
        """Vista de solo lectura: misma memoria, sin grafo de gradientes"""
        return ModelParams({n: t.detach() for n, t in self.items()}, self.buffers)

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            {
                n: Tensor(t.data.astype(dtype), requires_grad=t.requires_grad)
                for n, t in self.items()
            },
            {
                n: RunningStats(b.mean.astype(dtype), b.var.astype(dtype))
                for n, b in self.buffers.items()
            },
        )


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float64):
    """Inicialización uniforme en ±√(6/(fan_in+fan_out))"""
    cota = glorot_bound(fan_in, fan_out)
    return rng.uniform(-cota, cota, size=shape).astype(dtype)
