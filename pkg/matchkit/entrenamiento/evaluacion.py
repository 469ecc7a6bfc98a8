"""
Protocolo de evaluación one-shot sobre clases no vistas
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from tqdm import tqdm

from matchkit.datos.conjuntos import ClassDataset
from matchkit.datos.episodios import Episode, sample_episode
from matchkit.modelos.codificadores import ModelConfig, PixelEmbedConfig
from matchkit.modelos.emparejador import accuracy, forward_episode
from matchkit.modelos.parametros import ModelParams

logger = logging.getLogger(__name__)

Z_95 = 1.96


@dataclass
class EvalReport:
    n_way: int
    k_shot: int
    n_episodes: int
    accuracy: float
    ci_halfwidth: float
    per_episode: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_accuracies(cls, n_way: int, k_shot: int, exactitudes: Sequence[float]) -> "EvalReport":
        valores = np.asarray(exactitudes, dtype=np.float64)
        n = valores.size
        if n < 1:
            raise ValueError("Se necesita al menos un episodio para el informe")
        sigma = valores.std(ddof=1) if n > 1 else 0.0
        return cls(n_way, k_shot, n, float(valores.mean()), float(Z_95 * sigma / np.sqrt(n)), valores)

    def format(self) -> str:
        return f"acc={self.accuracy:.4f} ±{self.ci_halfwidth:.4f} n={self.n_episodes}"


def episode_rng(seed: int, indice: int) -> np.random.Generator:
    """El episodio i depende solo de (seed, i), no del orden de ejecución"""
    return np.random.default_rng([seed, indice])


def evaluate_episodes(
    dataset: ClassDataset,
    class_pool: Sequence[int],
    n_way: int,
    k_shot: int,
    n_episodes: int,
    seed: int,
    scorer: Callable[[Episode, int], float],
    batch_per_class: int = 2,
    threads: int = 1,
    progress: bool = False,
) -> EvalReport:
    """Aplica ``scorer`` a ``n_episodes`` episodios, en paralelo si ``threads > 1``"""

    def un_episodio(i: int) -> float:
        episodio = sample_episode(
            dataset, class_pool, n_way, k_shot, batch_per_class, episode_rng(seed, i), seed=seed
        )
        return scorer(episodio, i)

    indices = range(n_episodes)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            resultados = list(
                tqdm(pool.map(un_episodio, indices), total=n_episodes, disable=not progress,
                     desc="Evaluación")
            )
    else:
        resultados = [un_episodio(i) for i in tqdm(indices, disable=not progress, desc="Evaluación")]
    informe = EvalReport.from_accuracies(n_way, k_shot, resultados)
    logger.info(f"{n_way}-way {k_shot}-shot: {informe.format()}")
    return informe


def evaluate(
    params: ModelParams,
    dataset: ClassDataset,
    class_pool: Sequence[int],
    n_way: int,
    k_shot: int,
    n_episodes: int,
    seed: int,
    *,
    config: ModelConfig,
    batch_per_class: int = 2,
    attention: Optional[str] = None,
    threads: int = 1,
    progress: bool = False,
) -> EvalReport:
    """Exactitud media del emparejador sobre episodios del conjunto ``class_pool``"""
    congelados = params.detached()

    def puntuar(episodio: Episode, _: int) -> float:
        dist = forward_episode(congelados, episodio, config, mode="eval", attention=attention)
        return accuracy(dist, episodio.batch_y)

    return evaluate_episodes(
        dataset, class_pool, n_way, k_shot, n_episodes, seed, puntuar,
        batch_per_class=batch_per_class, threads=threads, progress=progress,
    )


def pixel_config(dataset: ClassDataset, attention: str = "softmax_cosine") -> ModelConfig:
    """Emparejador sin parámetros sobre los píxeles (o vectores) crudos"""
    return ModelConfig(encoder=PixelEmbedConfig(dataset.input_shape), attention=attention)


def evaluate_pixels(
    dataset: ClassDataset,
    class_pool: Sequence[int],
    n_way: int,
    k_shot: int,
    n_episodes: int,
    seed: int,
    **kwargs,
) -> EvalReport:
    config = pixel_config(dataset, kwargs.pop("attention", None) or "softmax_cosine")
    return evaluate(
        ModelParams(), dataset, class_pool, n_way, k_shot, n_episodes, seed, config=config, **kwargs
    )
