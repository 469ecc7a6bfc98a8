"""
Líneas base: clasificador convencional, coseno sobre sus características y
ajuste fino one-shot sobre el soporte.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from matchkit.datos.conjuntos import ClassDataset
from matchkit.datos.episodios import Episode
from matchkit.entrenamiento.evaluacion import EvalReport, evaluate, evaluate_episodes
from matchkit.entrenamiento.optimizador import Adam
from matchkit.errores import ConfigError, DataError
from matchkit.modelos.codificadores import ModelConfig, embed, init_params
from matchkit.modelos.emparejador import SupportSet, attend_softmax_cosine, classify
from matchkit.modelos.parametros import ModelParams, glorot_uniform
from matchkit.nucleo import operaciones as ops
from matchkit.nucleo.tensor import Tensor

logger = logging.getLogger(__name__)

VARIANTES = ("cosine", "softmax")
CAIDA_TOLERADA = 0.05


def encoder_config(model: ModelConfig) -> ModelConfig:
    """Las líneas base usan solo el codificador (sin FCE)"""
    return replace(model, fce=None)


def _cabeza(params: ModelParams, prefijo: str, d: int, n: int, rng: np.random.Generator, dtype):
    params.add(f"{prefijo}.w", glorot_uniform(rng, (d, n), d, n, dtype))
    params.add(f"{prefijo}.b", np.zeros(n, dtype))


def _logits(params: ModelParams, h: Tensor, prefijo: str) -> Tensor:
    return ops.add(ops.matmul(h, params[f"{prefijo}.w"]), params[f"{prefijo}.b"])


def strip_head(params: ModelParams, prefijo: str = "head") -> ModelParams:
    """Características de la última capa antes del softmax"""
    return ModelParams(
        {n: t for n, t in params.items() if not n.startswith(prefijo + ".")}, params.buffers
    )


def _ejemplos(dataset: ClassDataset, class_ids: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    if len(class_ids) == 0:
        raise DataError("La partición de entrenamiento está vacía")
    x = np.concatenate([dataset.examples[c] for c in class_ids])
    y = np.concatenate(
        [np.full(dataset.num_examples(c), i, dtype=np.int64) for i, c in enumerate(class_ids)]
    )
    return x, y


def train_baseline_classifier(
    dataset: ClassDataset,
    train_ids: Sequence[int],
    epochs: int,
    model: ModelConfig,
    *,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
    progress: bool = False,
) -> ModelParams:
    """Entropía cruzada estándar: codificador + capa lineal softmax sobre las clases de entrenamiento"""
    model = encoder_config(model)
    dtype = model.np_dtype
    rng = np.random.default_rng(seed)
    params = init_params(model, seed, dtype=dtype)
    _cabeza(params, "head", model.embedding_dim, len(train_ids), rng, dtype)
    optimizador = Adam(params, lr=lr)
    x, y = _ejemplos(dataset, train_ids)

    for epoca in range(epochs):
        orden = rng.permutation(len(y))
        perdidas = []
        lotes = [orden[i : i + batch_size] for i in range(0, len(orden), batch_size)]
        for lote in tqdm(lotes, disable=not progress, desc=f"Época {epoca + 1}/{epochs}"):
            if len(lote) < 2:
                continue
            optimizador.zero_grad()
            h = embed(params, x[lote], model, mode="train")
            perdida = ops.nll(ops.softmax(_logits(params, h, "head"), axis=1), y[lote])
            perdida.backward()
            optimizador.step()
            perdidas.append(perdida.item())
        logger.info(f"Línea base, época {epoca + 1}: pérdida media {np.mean(perdidas):.4f}")
    return params


def classifier_accuracy(
    params: ModelParams, dataset: ClassDataset, class_ids: Sequence[int], model: ModelConfig
) -> float:
    """Exactitud de la cabeza softmax sobre todos los ejemplos de ``class_ids``"""
    model = encoder_config(model)
    x, y = _ejemplos(dataset, class_ids)
    congelados = params.detached()
    h = embed(congelados, x, model, mode="eval")
    predichas = np.argmax(_logits(congelados, h, "head").data, axis=1)
    return float(np.mean(predichas == y))


def evaluate_baseline_cosine(
    params: ModelParams,
    dataset: ClassDataset,
    class_pool: Sequence[int],
    n_way: int,
    k_shot: int,
    n_episodes: int,
    seed: int,
    *,
    model: ModelConfig,
    **kwargs,
) -> EvalReport:
    """Coseno sobre las características del clasificador, sin ajuste fino"""
    return evaluate(
        strip_head(params), dataset, class_pool, n_way, k_shot, n_episodes, seed,
        config=encoder_config(model), attention="softmax_cosine", **kwargs,
    )


# ----------------------------------------------------------------------
# Ajuste fino one-shot
# ----------------------------------------------------------------------
def _perdida_coseno(params: ModelParams, x: np.ndarray, y: np.ndarray, n_way: int, model) -> Tensor:
    """Emparejamiento del soporte contra sí mismo"""
    g = embed(params, x, model, mode="eval")
    soporte = SupportSet.from_labels(g, y, n_way)
    return ops.nll(classify(attend_softmax_cosine(g, soporte), soporte).probs, y)


def fine_tune(
    params: ModelParams,
    support_x: np.ndarray,
    support_y: np.ndarray,
    n_way: int,
    steps: int = 100,
    lr: float = 1e-2,
    *,
    variant: str = "cosine",
    model: ModelConfig,
    seed: int = 0,
) -> ModelParams:
    """Pasos de gradiente solo sobre el soporte; ``params`` no se modifica.

    ``softmax`` añade una cabeza nueva ``ft.*`` de N clases; ``cosine`` usa
    la pérdida de emparejamiento. El batchnorm queda en modo eval. Con
    ``steps=0`` se devuelve una copia idéntica de ``params``.
    """
    if variant not in VARIANTES:
        raise ValueError(f"Variante de ajuste fino desconocida: {variant}")
    if steps == 0:
        return params.copy()
    model = encoder_config(model)
    ajustados = strip_head(params).copy()
    if variant == "softmax":
        rng = np.random.default_rng(seed)
        _cabeza(ajustados, "ft", model.embedding_dim, n_way, rng, model.np_dtype)

    y = np.asarray(support_y, dtype=np.int64)
    optimizador = Adam(ajustados, lr=lr)
    for _ in range(steps):
        optimizador.zero_grad()
        if variant == "softmax":
            h = embed(ajustados, support_x, model, mode="eval")
            perdida = ops.nll(ops.softmax(_logits(ajustados, h, "ft"), axis=1), y)
        else:
            perdida = _perdida_coseno(ajustados, support_x, y, n_way, model)
        perdida.backward()
        optimizador.step()
    return ajustados


def predict_finetuned(
    params: ModelParams, episode: Episode, variant: str, model: ModelConfig
) -> np.ndarray:
    model = encoder_config(model)
    congelados = params.detached()
    if variant == "softmax":
        if "ft.w" not in congelados:
            raise ConfigError("La variante softmax necesita al menos un paso de ajuste fino")
        h = embed(congelados, episode.batch_x, model, mode="eval")
        return np.argmax(_logits(congelados, h, "ft").data, axis=1)
    g = embed(congelados, episode.support_x, model, mode="eval")
    f = embed(congelados, episode.batch_x, model, mode="eval")
    soporte = SupportSet.from_labels(g, episode.support_y, episode.n_way)
    return np.argmax(classify(attend_softmax_cosine(f, soporte), soporte).probs.data, axis=1)


def support_accuracy(params: ModelParams, episode: Episode, variant: str, model: ModelConfig) -> float:
    """Exactitud sobre el propio soporte (sobreajuste esperado tras el ajuste fino)"""
    espejo = replace(episode, batch_x=episode.support_x, batch_y=episode.support_y)
    return float(np.mean(predict_finetuned(params, espejo, variant, model) == episode.support_y))


@dataclass
class FinetuneReport:
    """Exactitud sobre el lote antes y después del ajuste fino.

    ``before`` es el emparejamiento coseno con las características sin
    ajustar (la cabeza softmax aún no existe antes del ajuste).
    """

    before: EvalReport
    after: EvalReport
    support_accuracy: float

    @property
    def delta(self) -> float:
        return self.after.accuracy - self.before.accuracy

    def format(self) -> str:
        return (
            f"antes={self.before.accuracy:.4f} después={self.after.accuracy:.4f} "
            f"cambio={self.delta:+.4f} soporte={self.support_accuracy:.4f}"
        )


def evaluate_finetuned(
    params: ModelParams,
    dataset: ClassDataset,
    class_pool: Sequence[int],
    n_way: int,
    k_shot: int,
    n_episodes: int,
    seed: int,
    *,
    model: ModelConfig,
    variant: str = "cosine",
    steps: int = 100,
    lr: float = 1e-2,
    batch_per_class: int = 2,
    threads: int = 1,
    progress: bool = False,
) -> FinetuneReport:
    """Ajusta una copia por episodio y mide la exactitud sobre el lote antes y después"""
    if variant == "softmax" and steps < 1:
        raise ConfigError("La variante softmax necesita finetune_steps >= 1")
    sin_ajustar = strip_head(params)
    antes: Dict[int, float] = {}
    soporte: Dict[int, float] = {}

    def puntuar(episodio: Episode, i: int) -> float:
        previas = predict_finetuned(sin_ajustar, episodio, "cosine", model)
        antes[i] = float(np.mean(previas == episodio.batch_y))
        ajustados = fine_tune(
            params, episodio.support_x, episodio.support_y, n_way, steps, lr,
            variant=variant, model=model, seed=seed + i,
        )
        soporte[i] = support_accuracy(ajustados, episodio, variant, model)
        predichas = predict_finetuned(ajustados, episodio, variant, model)
        return float(np.mean(predichas == episodio.batch_y))

    despues = evaluate_episodes(
        dataset, class_pool, n_way, k_shot, n_episodes, seed, puntuar,
        batch_per_class=batch_per_class, threads=threads, progress=progress,
    )
    informe = FinetuneReport(
        before=EvalReport.from_accuracies(n_way, k_shot, [antes[i] for i in range(n_episodes)]),
        after=despues,
        support_accuracy=float(np.mean([soporte[i] for i in range(n_episodes)])),
    )
    logger.info(f"Ajuste fino {variant}: {informe.format()}")
    if informe.delta < -CAIDA_TOLERADA:
        logger.warning(
            f"El ajuste fino reduce la exactitud sobre el lote en {-informe.delta:.4f} "
            f"(tolerancia {CAIDA_TOLERADA:.2f})"
        )
    return informe
