"""
Verificación de gradientes por diferencias finitas centrales
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional

import numpy as np

from matchkit.nucleo.tensor import Tensor

logger = logging.getLogger(__name__)

PASO_POR_DEFECTO = 1e-5


def relative_error(analitico: np.ndarray, numerico: np.ndarray, piso: float = 1e-7) -> float:
    """‖a − n‖ / max(‖a‖ + ‖n‖, piso)"""
    diferencia = np.linalg.norm(np.ravel(analitico) - np.ravel(numerico))
    escala = np.linalg.norm(np.ravel(analitico)) + np.linalg.norm(np.ravel(numerico))
    return float(diferencia / max(escala, piso))


def numerical_gradient(
    funcion: Callable[[], float],
    arreglo: np.ndarray,
    h: float = PASO_POR_DEFECTO,
    indices: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Gradiente central de ``funcion`` respecto de ``arreglo`` (se perturba in situ)"""
    grad = np.zeros_like(arreglo, dtype=np.float64)
    plano = arreglo.reshape(-1)
    if not np.shares_memory(plano, arreglo):
        raise ValueError("numerical_gradient requiere un arreglo contiguo")
    grad_plano = grad.reshape(-1)
    recorrido = range(plano.size) if indices is None else indices
    for i in recorrido:
        original = plano[i]
        plano[i] = original + h
        f_mas = funcion()
        plano[i] = original - h
        f_menos = funcion()
        plano[i] = original
        grad_plano[i] = (f_mas - f_menos) / (2.0 * h)
    return grad


@dataclass
class GradcheckReport:
    """Error relativo máximo por grupo de parámetros"""

    errors: Dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.errors.values())

    @property
    def worst(self) -> Optional[str]:
        if not self.errors:
            return None
        return max(self.errors, key=self.errors.get)

    def lines(self):
        for nombre, error in self.errors.items():
            marca = "✓" if error <= self.tolerance else "✗"
            yield f"{marca} {nombre:<32} {error:.3e}"


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensores: Mapping[str, Tensor],
    h: float = PASO_POR_DEFECTO,
    tolerance: float = 1e-4,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> GradcheckReport:
    """Compara el gradiente de ``backward`` con diferencias finitas.

    ``loss_fn`` debe reconstruir el grafo en cada llamada. Con ``max_entries``
    se verifica una muestra aleatoria de entradas por tensor.
    """
    for t in tensores.values():
        t.zero_grad()
    perdida = loss_fn()
    perdida.backward()
    analiticos = {
        nombre: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
        for nombre, t in tensores.items()
    }

    rng = np.random.default_rng(seed)
    informe = GradcheckReport(tolerance=tolerance)
    for nombre, t in tensores.items():
        indices = None
        if max_entries is not None and t.size > max_entries:
            indices = np.sort(rng.choice(t.size, size=max_entries, replace=False))
        numerico = numerical_gradient(lambda: loss_fn().item(), t.data, h=h, indices=indices)
        analitico = analiticos[nombre]
        if indices is not None:
            analitico = analitico.reshape(-1)[indices]
            numerico = numerico.reshape(-1)[indices]
        informe.errors[nombre] = relative_error(analitico, numerico)
        logger.debug(f"gradcheck {nombre}: error relativo {informe.errors[nombre]:.3e}")
    return informe
