"""
Clasificador por atención sobre el conjunto de soporte.

P(ŷ | x̂, S) = Σ_i a(x̂, x_i) · y_i, con tres núcleos de atención:

- ``softmax_cosine``: softmax de la similitud coseno (diferenciable).
- ``knn``: peso uniforme 1/(k−b) sobre los k−b soportes más cercanos.
- ``kde``: núcleo gaussiano normalizado con ancho de banda h.

Todas las operaciones aceptan una consulta ``[d]`` o un lote ``[B,d]``.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from matchkit.errores import ShapeError
from matchkit.modelos.codificadores import ModelConfig, _como_modelo, embed
from matchkit.modelos.parametros import ModelParams
from matchkit.nucleo import operaciones as ops
from matchkit.nucleo.tensor import Tensor, as_tensor

logger = logging.getLogger(__name__)


@dataclass
class SupportSet:
    """Embeddings del soporte con etiquetas one-hot ``[k,N]``"""

    embeddings: Tensor
    labels: np.ndarray
    class_ids: np.ndarray

    def __post_init__(self):
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
        self.labels = np.asarray(self.labels)
        k = self.embeddings.shape[0] if self.embeddings.ndim == 2 else 0
        if k == 0:
            raise ShapeError("El conjunto de soporte está vacío")
        if self.labels.shape[0] != k or self.class_ids.shape != (k,):
            raise ShapeError(
                f"Soporte incoherente: {k} embeddings, etiquetas {self.labels.shape}"
            )
        if not np.all(self.labels.sum(axis=1) == 1) or not np.all(
            self.labels[np.arange(k), self.class_ids] == 1
        ):
            raise ShapeError("Las etiquetas del soporte deben ser one-hot y coincidir con class_ids")
        if not np.all(self.labels.sum(axis=0) >= 1):
            raise ShapeError("Cada clase del episodio debe aparecer al menos una vez en el soporte")

    @classmethod
    def from_labels(cls, embeddings: Tensor, class_ids, n_classes: int) -> "SupportSet":
        ids = np.asarray(class_ids, dtype=np.int64)
        etiquetas = np.zeros((ids.shape[0], n_classes), dtype=embeddings.dtype)
        etiquetas[np.arange(ids.shape[0]), ids] = 1.0
        return cls(embeddings, etiquetas, ids)

    @property
    def k(self) -> int:
        return self.embeddings.shape[0]

    @property
    def n_classes(self) -> int:
        return self.labels.shape[1]


@dataclass
class AttentionWeights:
    values: Tensor
    mode: str


@dataclass
class ClassDistribution:
    probs: Tensor


@dataclass
class ClampCounter:
    """Cuenta las probabilidades verdaderas acotadas en 1e-12 por ``nll``"""

    count: int = 0
    events: int = field(default=0)

    def record(self, n: int):
        self.count += n
        self.events += 1


def _consulta(query_emb, support: SupportSet) -> Tuple[Tensor, bool]:
    q = as_tensor(query_emb)
    unica = q.ndim == 1
    if unica:
        q = ops.reshape(q, (1, -1))
    if q.ndim != 2 or q.shape[1] != support.embeddings.shape[1]:
        raise ShapeError(
            f"Dimensión de la consulta {tuple(q.shape)} incompatible con el soporte "
            f"{tuple(support.embeddings.shape)}"
        )
    return q, unica


def _salida(pesos: Tensor, unica: bool) -> Tensor:
    return ops.reshape(pesos, (pesos.shape[1],)) if unica else pesos


def attend_softmax_cosine(query_emb, support: SupportSet) -> AttentionWeights:
    """a(x̂, x_i) = softmax_i(cos(f(x̂), g(x_i)))"""
    q, unica = _consulta(query_emb, support)
    logits = ops.pairwise_cosine(q, support.embeddings)
    return AttentionWeights(_salida(ops.softmax(logits, axis=1), unica), "softmax_cosine")


def attend_knn(query_emb, support: SupportSet, b: int) -> AttentionWeights:
    """Peso cero en los b soportes más lejanos (distancia coseno), 1/(k−b) en el resto.

    Empates de distancia: gana el índice de soporte menor. No es diferenciable.
    """
    if not 0 <= b < support.k:
        raise ShapeError(f"attend_knn requiere 0 <= b < k, recibido b={b}, k={support.k}")
    q, unica = _consulta(query_emb, support)
    similitud = ops.pairwise_cosine(q.detach(), support.embeddings.detach()).data
    orden = np.argsort(-similitud, axis=1, kind="stable")
    retenidos = orden[:, : support.k - b]
    pesos = np.zeros_like(similitud)
    np.put_along_axis(pesos, retenidos, 1.0 / (support.k - b), axis=1)
    return AttentionWeights(_salida(Tensor(pesos), unica), "knn")


def attend_kde(query_emb, support: SupportSet, bandwidth: float) -> AttentionWeights:
    """a_i ∝ exp(−‖f(x̂) − g(x_i)‖² / (2·h²))"""
    if not bandwidth > 0:
        raise ShapeError(f"El ancho de banda debe ser positivo, recibido {bandwidth}")
    q, unica = _consulta(query_emb, support)
    logits = ops.mul(ops.pairwise_sqdist(q, support.embeddings), -1.0 / (2.0 * bandwidth**2))
    return AttentionWeights(_salida(ops.softmax(logits, axis=1), unica), "kde")


def attend(
    query_emb, support: SupportSet, mode: str = "softmax_cosine", knn_b: int = 0, kde_bandwidth: float = 1.0
) -> AttentionWeights:
    if mode == "softmax_cosine":
        return attend_softmax_cosine(query_emb, support)
    if mode == "knn":
        return attend_knn(query_emb, support, knn_b)
    if mode == "kde":
        return attend_kde(query_emb, support, kde_bandwidth)
    raise ValueError(f"Modo de atención desconocido: {mode}")


def classify(weights: AttentionWeights, support: SupportSet) -> ClassDistribution:
    """Combinación lineal de las etiquetas one-hot del soporte"""
    valores = weights.values
    if valores.shape[-1] != support.k:
        raise ShapeError(f"{valores.shape[-1]} pesos para {support.k} soportes")
    etiquetas = Tensor(support.labels, dtype=valores.dtype)
    return ClassDistribution(ops.matmul(valores, etiquetas))


def predict(dist: ClassDistribution) -> Union[int, np.ndarray]:
    """arg max_y P(y | x̂, S); los empates van al índice de clase menor"""
    probs = dist.probs.data
    if probs.ndim == 1:
        return int(np.argmax(probs))
    return np.argmax(probs, axis=-1)


# ----------------------------------------------------------------------
# Episodios completos
# ----------------------------------------------------------------------
def embed_episode(
    params: ModelParams, support_x, batch_x, config, mode: str = "train"
) -> Tuple[Tensor, Tensor]:
    """Embebe soporte y lote en una sola pasada (comparten estadísticas de batchnorm)"""
    k = len(support_x)
    todos = np.concatenate([np.asarray(support_x), np.asarray(batch_x)], axis=0)
    emb = embed(params, todos, config, mode=mode)
    return emb[:k], emb[k:]


def forward_plain(
    params: ModelParams, episode, config, mode: str = "train", attention: Optional[str] = None
) -> ClassDistribution:
    """Emparejamiento sin FCE: f = g = codificador compartido"""
    modelo = _como_modelo(config)
    g, f = embed_episode(params, episode.support_x, episode.batch_x, modelo, mode)
    soporte = SupportSet.from_labels(g, episode.support_y, episode.n_way)
    pesos = attend(
        f, soporte, attention or modelo.attention, modelo.knn_b, modelo.kde_bandwidth
    )
    return classify(pesos, soporte)


def forward_episode(
    params: ModelParams, episode, config, mode: str = "train", attention: Optional[str] = None
) -> ClassDistribution:
    modelo = _como_modelo(config)
    if modelo.fce is not None:
        from matchkit.modelos.fce import forward_fce

        return forward_fce(params, episode, modelo, mode=mode, attention=attention)
    return forward_plain(params, episode, modelo, mode=mode, attention=attention)


def episode_nll(
    params: ModelParams,
    episode,
    attention_mode: Optional[str] = None,
    *,
    config: ModelConfig,
    mode: str = "train",
    stats: Optional[ClampCounter] = None,
) -> Tensor:
    """Media sobre el lote de −log P_θ(y | x, S)"""
    if len(episode.batch_y) == 0:
        raise ShapeError("El lote del episodio está vacío")
    dist = forward_episode(params, episode, config, mode=mode, attention=attention_mode)
    return ops.nll(dist.probs, episode.batch_y, stats=stats)


def accuracy(dist: ClassDistribution, targets: Sequence[int]) -> float:
    return float(np.mean(predict(dist) == np.asarray(targets)))
