"""
Ejecuciones de aceptación de extremo a extremo (``pytest -m slow``)
"""

import os
from pathlib import Path

import pytest
import yaml

from matchkit.configuracion import config_from_dict, eval_threads
from matchkit.datos.conjuntos import augment_rotations, dataset_from_config, load_image_class_tree
from matchkit.datos.episodios import split_classes
from matchkit.entrenamiento.baselines import evaluate_baseline_cosine, train_baseline_classifier
from matchkit.entrenamiento.entrenador import train_matching_net
from matchkit.entrenamiento.evaluacion import evaluate, evaluate_pixels

SINTETICO = {
    "data": {"source": "synthetic", "n_classes": 40, "dim": 16, "noise": 0.1, "examples_per_class": 40,
             "nuisance_rank": 4, "nuisance_scale": 1.5, "n_train": 30},
    "model": {"encoder": {"type": "mlp", "input_dim": 16, "hidden_dims": [64], "output_dim": 16}},
    "training": {"ways": 5, "shots": 1, "episodes_total": 2000, "eval_every": 0, "eval_episodes": 0},
    "evaluation": {"ways": 5, "shots": 1, "episodes": 1000},
}


@pytest.mark.slow
def test_sintetico_supera_a_los_pixeles():
    config = config_from_dict(SINTETICO)
    datos = dataset_from_config(config.data)
    split = split_classes(datos, config.data.n_train, config.data.split_seed)
    resultado = train_matching_net(config, datos, split)
    red = evaluate(resultado.params, datos, split.test_class_ids, 5, 1, 1000, 1234, config=config.model)
    pixeles = evaluate_pixels(datos, split.test_class_ids, 5, 1, 1000, 1234)
    assert red.accuracy >= 0.95
    assert red.accuracy >= pixeles.accuracy + 0.10


@pytest.mark.slow
@pytest.mark.omniglot
@pytest.mark.skipif("MATCHKIT_OMNIGLOT" not in os.environ, reason="MATCHKIT_OMNIGLOT no definido")
@pytest.mark.parametrize("ways, esperado", [(5, 0.417), (20, 0.267)])
def test_omniglot_pixeles(ways, esperado):
    datos = augment_rotations(load_image_class_tree(Path(os.environ["MATCHKIT_OMNIGLOT"]), invert=True))
    split = split_classes(datos, 1200, seed=0)
    informe = evaluate_pixels(datos, split.test_class_ids, ways, 1, 1000, 1234)
    assert abs(informe.accuracy - esperado) <= 0.04


@pytest.mark.slow
def test_mas_ejemplos_no_empeoran():
    config = config_from_dict(SINTETICO)
    datos = dataset_from_config(config.data)
    split = split_classes(datos, config.data.n_train, config.data.split_seed)
    params = train_matching_net(config, datos, split).params
    uno = evaluate(params, datos, split.test_class_ids, 5, 1, 2000, 7, config=config.model)
    cinco = evaluate(params, datos, split.test_class_ids, 5, 5, 2000, 7, config=config.model)
    assert cinco.accuracy >= uno.accuracy - 0.01


@pytest.mark.slow
@pytest.mark.omniglot
@pytest.mark.skipif("MATCHKIT_OMNIGLOT" not in os.environ, reason="MATCHKIT_OMNIGLOT no definido")
def test_omniglot_red_supera_a_la_linea_base(tmp_path):
    raiz = Path(__file__).resolve().parents[1]
    with open(raiz / "Experimentos/1_Omniglot/config/omniglot.yaml", encoding="utf-8") as f:
        documento = yaml.safe_load(f)
    documento["data"]["path"] = os.environ["MATCHKIT_OMNIGLOT"]
    config = config_from_dict(documento)
    datos = dataset_from_config(config.data)
    split = split_classes(datos, config.data.n_train, config.data.split_seed)

    params = train_matching_net(config, datos, split, out_dir=tmp_path, threads=eval_threads()).params
    uno = evaluate(params, datos, split.test_class_ids, 5, 1, 1000, 1234, config=config.model)
    cinco = evaluate(params, datos, split.test_class_ids, 5, 5, 1000, 1234, config=config.model)

    # mismo presupuesto: tantos ejemplos vistos como en el meta-entrenamiento
    t = config.training
    vistos = t.episodes_total * t.ways * (t.shots + t.batch_per_class)
    n_ejemplos = sum(datos.num_examples(c) for c in split.train_class_ids)
    base = train_baseline_classifier(
        datos, split.train_class_ids, max(1, vistos // n_ejemplos), config.model,
        batch_size=config.baseline.batch_size, lr=config.baseline.lr,
    )
    referencia = evaluate_baseline_cosine(
        base, datos, split.test_class_ids, 5, 1, 1000, 1234, model=config.model
    )
    assert uno.accuracy >= referencia.accuracy + 0.03
    assert cinco.accuracy >= uno.accuracy - 0.01
