"""
Particiones de clases y muestreo episódico.

Un episodio elige N clases sin reemplazo y, por clase, k ejemplos de
soporte y ``batch_per_class`` ejemplos de lote disjuntos. Las etiquetas son
locales (0..N−1) según el orden de muestreo.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from matchkit.datos.conjuntos import ClassDataset
from matchkit.errores import ConfigError, DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitSpec:
    train_class_ids: Tuple[int, ...]
    test_class_ids: Tuple[int, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "train_class_ids", tuple(int(c) for c in self.train_class_ids))
        object.__setattr__(self, "test_class_ids", tuple(int(c) for c in self.test_class_ids))
        if set(self.train_class_ids) & set(self.test_class_ids):
            raise ConfigError("Las clases de entrenamiento y prueba deben ser disjuntas")

    def part(self, nombre: str) -> Tuple[int, ...]:
        if nombre == "train":
            return self.train_class_ids
        if nombre == "test":
            return self.test_class_ids
        raise ConfigError(f"Partición desconocida: {nombre}")


def split_classes(dataset: ClassDataset, n_train: int, seed: int) -> SplitSpec:
    """Baraja los grupos de origen con ``seed`` y asigna ``n_train`` a entrenamiento.

    Sin rotaciones cada clase es su propio grupo; con rotaciones las cuatro
    variantes de un carácter caen siempre del mismo lado.
    """
    grupos = np.unique(dataset.groups)
    if not 1 <= n_train < grupos.size:
        raise ConfigError(
            f"n_train={n_train} debe estar en [1, {grupos.size}) (grupos disponibles)"
        )
    orden = np.random.default_rng(seed).permutation(grupos)
    entrenamiento = np.isin(dataset.groups, orden[:n_train])
    ids = np.arange(dataset.n_classes)
    split = SplitSpec(tuple(ids[entrenamiento]), tuple(ids[~entrenamiento]), seed)
    logger.debug(
        f"Partición: {len(split.train_class_ids)} clases de entrenamiento, "
        f"{len(split.test_class_ids)} de prueba"
    )
    return split


@dataclass
class Episode:
    """Soporte agrupado por clase y lote disjunto.

    ``support_index``/``batch_index`` son pares ``(clase_global, ejemplo)``.
    """

    n_way: int
    k_shot: int
    class_ids: np.ndarray
    support_x: np.ndarray
    support_y: np.ndarray
    batch_x: np.ndarray
    batch_y: np.ndarray
    support_index: np.ndarray
    batch_index: np.ndarray
    seed: Optional[int] = None

    @property
    def batch_size(self) -> int:
        return len(self.batch_y)


def sample_episode(
    dataset: ClassDataset,
    class_pool: Sequence[int],
    n_way: int,
    k_shot: int,
    batch_per_class: int,
    rng: np.random.Generator,
    seed: Optional[int] = None,
) -> Episode:
    pool = np.asarray(class_pool, dtype=np.int64)
    if n_way < 1 or k_shot < 1 or batch_per_class < 0:
        raise ConfigError(f"Tarea inválida: N={n_way}, k={k_shot}, lote={batch_per_class}")
    if pool.size < n_way:
        raise DataError(f"Se piden {n_way} clases pero la partición solo tiene {pool.size}")

    clases = rng.choice(pool, size=n_way, replace=False)
    necesarios = k_shot + batch_per_class
    soporte, lote = [], []
    for c in clases:
        disponibles = dataset.num_examples(c)
        if disponibles < necesarios:
            raise DataError(
                f"La clase '{dataset.class_names[c]}' tiene {disponibles} ejemplos, "
                f"se necesitan {necesarios}"
            )
        elegidos = rng.choice(disponibles, size=necesarios, replace=False)
        soporte.append(elegidos[:k_shot])
        lote.append(elegidos[k_shot:])

    def reunir(partes):
        indice = np.array(
            [(c, e) for c, idx in zip(clases, partes) for e in idx], dtype=np.int64
        ).reshape(-1, 2)
        forma = (len(indice),) + dataset.input_shape
        x = np.stack([dataset.examples[c][e] for c, e in indice]) if len(indice) else np.empty(forma)
        y = np.repeat(np.arange(n_way), [len(p) for p in partes])
        return x, y, indice

    support_x, support_y, support_index = reunir(soporte)
    batch_x, batch_y, batch_index = reunir(lote)
    return Episode(
        n_way=n_way,
        k_shot=k_shot,
        class_ids=clases,
        support_x=support_x,
        support_y=support_y,
        batch_x=batch_x,
        batch_y=batch_y,
        support_index=support_index,
        batch_index=batch_index,
        seed=seed,
    )


class EpisodeSampler:
    """Generador de episodios con su propio estado aleatorio (no compartir entre hilos)"""

    def __init__(
        self,
        dataset: ClassDataset,
        class_pool: Sequence[int],
        n_way: int,
        k_shot: int,
        batch_per_class: int,
        seed: Union[int, Sequence[int]] = 0,
    ):
        self.dataset = dataset
        self.class_pool = tuple(int(c) for c in class_pool)
        self.n_way = n_way
        self.k_shot = k_shot
        self.batch_per_class = batch_per_class
        self.rng = np.random.default_rng(seed)

    def sample(self) -> Episode:
        return sample_episode(
            self.dataset, self.class_pool, self.n_way, self.k_shot, self.batch_per_class, self.rng
        )

    @property
    def state(self) -> Dict:
        return self.rng.bit_generator.state

    @state.setter
    def state(self, estado: Dict):
        self.rng.bit_generator.state = estado
