"""
Optimizador Adam sobre ``ModelParams``
"""

from typing import Dict

import numpy as np

from matchkit.modelos.parametros import ModelParams


class Adam:
    """Adam con corrección de sesgo; los momentos se guardan por nombre de parámetro"""

    def __init__(
        self,
        params: ModelParams,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v: Dict[str, np.ndarray] = {n: np.zeros_like(t.data) for n, t in params.items()}

    def zero_grad(self):
        self.params.zero_grad()

    def step(self):
        """Actualiza in situ los parámetros con gradiente; los que no tienen se omiten"""
        self.t += 1
        correccion1 = 1.0 - self.beta1**self.t
        correccion2 = 1.0 - self.beta2**self.t
        for nombre, tensor in self.params.items():
            if tensor.grad is None:
                continue
            g = tensor.grad
            m, v = self.m[nombre], self.v[nombre]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            paso = self.lr * (m / correccion1) / (np.sqrt(v / correccion2) + self.eps)
            tensor.data -= paso.astype(tensor.dtype, copy=False)

    def load_state(self, t: int, m: Dict[str, np.ndarray], v: Dict[str, np.ndarray]):
        faltantes = set(self.m) - set(m)
        if faltantes or set(self.v) - set(v):
            raise KeyError(f"Momentos de Adam incompletos: {sorted(faltantes)[:3]}")
        self.t = int(t)
        for nombre in self.m:
            self.m[nombre][...] = m[nombre]
            self.v[nombre][...] = v[nombre]
