"""
Celda LSTM de cuatro compuertas usada por las Full Context Embeddings
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from matchkit.modelos.parametros import ModelParams, glorot_uniform
from matchkit.nucleo import operaciones as ops
from matchkit.nucleo.tensor import Tensor

COMPUERTAS = ("i", "f", "o", "c")


@dataclass(frozen=True)
class LstmCellParams:
    """Nombres y formas de una celda: pesos [d_h, d_in + d_rec] y sesgos [d_h].

    ``d_rec`` es el ancho de la entrada recurrente: d_h en una LSTM simple,
    2·d_h en el lector con atención (que recibe ``[h, r]``).
    """

    prefix: str
    d_in: int
    d_rec: int
    d_h: int

    def weight(self, compuerta: str) -> str:
        return f"{self.prefix}.W_{compuerta}"

    def bias(self, compuerta: str) -> str:
        return f"{self.prefix}.b_{compuerta}"

    def names(self):
        for compuerta in COMPUERTAS:
            yield self.weight(compuerta)
            yield self.bias(compuerta)


def init_lstm_cell(
    params: ModelParams, celda: LstmCellParams, rng: np.random.Generator, dtype=np.float64
):
    """Pesos Glorot, sesgo de olvido 1 y resto de sesgos 0"""
    ancho = celda.d_in + celda.d_rec
    for compuerta in COMPUERTAS:
        params.add(
            celda.weight(compuerta),
            glorot_uniform(rng, (celda.d_h, ancho), ancho, celda.d_h, dtype),
        )
        sesgo = np.ones(celda.d_h, dtype) if compuerta == "f" else np.zeros(celda.d_h, dtype)
        params.add(celda.bias(compuerta), sesgo)


def lstm_step(
    params: ModelParams, celda: LstmCellParams, x: Tensor, h_rec: Tensor, c: Tensor
) -> Tuple[Tensor, Tensor]:
    """Un paso ``LSTM(x, h, c)`` sobre lotes ``[B, ·]``; devuelve ``(h, c)``"""
    z = ops.concat([x, h_rec], axis=1)

    def compuerta(nombre: str) -> Tensor:
        return ops.add(
            ops.matmul(z, ops.transpose(params[celda.weight(nombre)])),
            params[celda.bias(nombre)],
        )

    i = ops.sigmoid(compuerta("i"))
    f = ops.sigmoid(compuerta("f"))
    o = ops.sigmoid(compuerta("o"))
    candidato = ops.tanh(compuerta("c"))
    c_nuevo = ops.add(ops.mul(f, c), ops.mul(i, candidato))
    h_nuevo = ops.mul(o, ops.tanh(c_nuevo))
    return h_nuevo, c_nuevo
