"""
Full Context Embeddings (FCE).

- g(x_i, S): LSTM bidireccional sobre el soporte en el orden muestreado,
  sumado a la conexión residual g'(x_i).
- f(x̂, S): K lecturas de un LSTM con atención sobre g(S); el estado inicial
  es h_0 = f'(x̂), c_0 = 0, de modo que K = 0 devuelve f'(x̂) tal cual.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from matchkit.errores import ConfigError, ShapeError
from matchkit.modelos.codificadores import fce_cells
from matchkit.modelos.lstm import lstm_step
from matchkit.modelos.parametros import ModelParams
from matchkit.nucleo import operaciones as ops
from matchkit.nucleo.tensor import Tensor, as_tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FceConfig:
    K: int = 5

    def __post_init__(self):
        if self.K < 0:
            raise ConfigError(f"K debe ser >= 0, recibido {self.K}")


def _dimension(params: ModelParams) -> int:
    return params["fce.fwd.b_i"].shape[0]


def embed_support_fce(params: ModelParams, raw_embs) -> Tensor:
    """g(x_i, S) = h→_i + h←_i + g'(x_i) para ``raw_embs`` ``[k,d]``"""
    g_prima = as_tensor(raw_embs)
    if g_prima.ndim != 2 or g_prima.shape[0] == 0:
        raise ShapeError(f"embed_support_fce espera [k,d] con k >= 1, recibido {g_prima.shape}")
    k, d = g_prima.shape
    if d != _dimension(params):
        raise ShapeError(f"Embeddings de dimensión {d}, las celdas FCE esperan {_dimension(params)}")
    adelante, atras, _ = fce_cells(d)
    filas = [ops.reshape(g_prima[i], (1, d)) for i in range(k)]
    cero = Tensor(np.zeros((1, d), dtype=g_prima.dtype))

    def recorrer(celda, orden) -> List[Tensor]:
        estados: List[Optional[Tensor]] = [None] * k
        h, c = cero, cero
        for i in orden:
            h, c = lstm_step(params, celda, filas[i], h, c)
            estados[i] = h
        return estados

    h_adelante = recorrer(adelante, range(k))
    h_atras = recorrer(atras, range(k - 1, -1, -1))
    recurrente = ops.concat([ops.add(a, b) for a, b in zip(h_adelante, h_atras)], axis=0)
    return ops.add(recurrente, g_prima)


def embed_query_fce(
    params: ModelParams,
    f_prime,
    g_set,
    K: int,
    attention_log: Optional[list] = None,
) -> Tensor:
    """h_K tras K lecturas con atención sobre ``g_set``.

    ``f_prime`` puede ser ``[d]`` o un lote ``[B,d]``. ``attention_log`` es un
    gancho de diagnóstico: si se pasa, recibe la matriz de atención ``[B,k]``
    de cada lectura; no afecta al resultado.
    """
    if K < 0:
        raise ConfigError(f"K debe ser >= 0, recibido {K}")
    f = as_tensor(f_prime)
    g = as_tensor(g_set)
    if g.ndim != 2 or f.ndim not in (1, 2) or f.shape[-1] != g.shape[1]:
        raise ShapeError(f"embed_query_fce: f' {f.shape} incompatible con g(S) {g.shape}")
    if K == 0:
        return f_prime if isinstance(f_prime, Tensor) else f

    unica = f.ndim == 1
    if unica:
        f = ops.reshape(f, (1, -1))
    lector = fce_cells(g.shape[1])[2]
    h = f
    c = Tensor(np.zeros(f.shape, dtype=f.dtype))
    for _ in range(K):
        atencion = ops.softmax(ops.matmul(h, ops.transpose(g)), axis=1)
        if attention_log is not None:
            attention_log.append(atencion.data.copy())
        r = ops.matmul(atencion, g)
        h_gorro, c = lstm_step(params, lector, f, ops.concat([h, r], axis=1), c)
        h = ops.add(h_gorro, f)
    return ops.reshape(h, (h.shape[1],)) if unica else h


def forward_fce(params: ModelParams, episode, config, mode: str = "train", attention=None):
    """f'(x̂) → lecturas sobre g(S) → atención → clasificación"""
    from matchkit.modelos.emparejador import SupportSet, attend, classify, embed_episode

    if config.fce is None:
        raise ConfigError("forward_fce requiere FCE habilitado en la configuración")
    g_prima, f_prima = embed_episode(params, episode.support_x, episode.batch_x, config, mode)
    g = embed_support_fce(params, g_prima)
    f = embed_query_fce(params, f_prima, g, config.fce.K)
    soporte = SupportSet.from_labels(g, episode.support_y, episode.n_way)
    pesos = attend(f, soporte, attention or config.attention, config.knn_b, config.kde_bandwidth)
    return classify(pesos, soporte)
