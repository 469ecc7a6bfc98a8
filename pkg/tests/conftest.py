"""
Fixtures compartidas: generadores sembrados, conjuntos pequeños y árboles PNG
"""

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from matchkit.datos.conjuntos import gen_synthetic
from matchkit.datos.episodios import Episode
from matchkit.modelos.codificadores import MlpEmbedConfig, ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_dataset():
    return gen_synthetic(12, 8, 0.1, seed=3, examples_per_class=6)


@pytest.fixture
def mlp_model():
    return ModelConfig(encoder=MlpEmbedConfig(input_dim=8, hidden_dims=(8,), output_dim=8))


def write_png(path: Path, pixels: np.ndarray):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(path)


@pytest.fixture
def png_tree(tmp_path):
    """Dos clases con dos imágenes 28x28 cada una"""
    root = tmp_path / "imagenes"
    patron = np.random.default_rng(1).integers(0, 256, size=(4, 28, 28))
    for i, clase in enumerate(("alfa", "beta")):
        for j in range(2):
            write_png(root / clase / f"{j}.png", patron[2 * i + j])
    return root


def make_episode(support_x, support_y, batch_x, batch_y, n_way) -> Episode:
    """Episodio construido a mano (índices ficticios)"""
    support_x, batch_x = np.asarray(support_x, float), np.asarray(batch_x, float)
    k = len(support_y)
    return Episode(
        n_way=n_way,
        k_shot=max(1, k // n_way),
        class_ids=np.arange(n_way),
        support_x=support_x,
        support_y=np.asarray(support_y),
        batch_x=batch_x,
        batch_y=np.asarray(batch_y),
        support_index=np.stack([np.asarray(support_y), np.arange(k)], axis=1),
        batch_index=np.stack([np.asarray(batch_y), k + np.arange(len(batch_y))], axis=1),
    )
