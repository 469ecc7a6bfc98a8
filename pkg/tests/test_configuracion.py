import dataclasses
from pathlib import Path

import pytest
import yaml

from matchkit.configuracion import (
    RunConfig,
    TrainConfig,
    config_from_dict,
    config_hash,
    dump_config,
    eval_threads,
    load_config,
)
from matchkit.errores import ConfigError
from matchkit.modelos.codificadores import ConvEmbedConfig, MlpEmbedConfig

DOCUMENTO = {
    "data": {"source": "synthetic", "n_classes": 12, "dim": 8, "noise": 0.2, "n_train": 8},
    "model": {
        "encoder": {"type": "mlp", "input_dim": 8, "hidden_dims": [16], "output_dim": 8},
        "fce": {"enabled": True, "K": 3},
        "attention": "softmax_cosine",
    },
    "training": {"ways": 3, "shots": 1, "episodes_total": 50, "lr": 0.001},
    "evaluation": {"ways": 3, "shots": 1, "episodes": 20},
}


def test_documento_completo():
    config = config_from_dict(DOCUMENTO)
    assert config.model.encoder == MlpEmbedConfig(8, (16,), 8)
    assert config.model.fce.K == 3
    assert config.training.episodes_total == 50
    assert config.training.beta2 == 0.999
    assert config.evaluation.seed == 1234


def test_valores_por_defecto_materializados():
    config = config_from_dict({})
    documento = config.to_dict()
    assert documento["training"]["episodes_total"] == 30000
    assert documento["model"]["encoder"]["type"] == "mlp"
    assert documento["model"]["fce"] == {"enabled": False, "K": 5}
    assert set(documento) == {"data", "model", "training", "evaluation", "baseline"}


def test_ida_y_vuelta_por_yaml(tmp_path):
    config = config_from_dict(DOCUMENTO)
    ruta = dump_config(config, tmp_path / "config.yaml")
    assert load_config(ruta) == config
    assert config_hash(load_config(ruta)) == config_hash(config)


@pytest.mark.parametrize(
    "seccion, clave, ruta",
    [("training", "lrr", "training.lrr"), ("data", "ruido", "data.ruido"), ("model", "capas", "model.capas")],
)
def test_clave_desconocida_nombra_la_ruta(seccion, clave, ruta):
    documento = {seccion: {clave: 1}}
    with pytest.raises(ConfigError, match=ruta.replace(".", r"\.")):
        config_from_dict(documento)


def test_clave_desconocida_anidada():
    with pytest.raises(ConfigError, match=r"model\.encoder\.profundidad"):
        config_from_dict({"model": {"encoder": {"type": "mlp", "profundidad": 3}}})
    with pytest.raises(ConfigError, match=r"model\.fce\.pasos"):
        config_from_dict({"model": {"fce": {"enabled": True, "pasos": 3}}})


def test_seccion_desconocida():
    with pytest.raises(ConfigError, match="optimizador"):
        config_from_dict({"optimizador": {}})


@pytest.mark.parametrize(
    "documento",
    [
        {"training": {"lr": "rapido"}},
        {"training": {"ways": 2.5, "shots": 1}},
        {"data": {"rotations": "si"}},
        {"model": {"encoder": {"type": "transformer"}}},
        {"training": {"lr": -1.0}},
        {"data": {"source": "images"}},
    ],
)
def test_valores_invalidos(documento):
    with pytest.raises(ConfigError):
        config_from_dict(documento)


def test_yaml_invalido_y_archivo_ausente(tmp_path):
    ruta = tmp_path / "roto.yaml"
    ruta.write_text("training: [sin cerrar", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(ruta)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "no_existe.yaml")


def test_tarea_de_evaluacion_distinta():
    documento = {"training": {"ways": 5, "shots": 1}, "evaluation": {"ways": 20, "shots": 1}}
    with pytest.raises(ConfigError):
        config_from_dict(documento)
    documento["evaluation"]["allow_task_mismatch"] = True
    assert config_from_dict(documento).evaluation.ways == 20


def test_codificador_incompatible_con_los_datos():
    with pytest.raises(ConfigError):
        RunConfig(model=dataclasses.replace(RunConfig().model, encoder=ConvEmbedConfig()))
    with pytest.raises(ConfigError):
        config_from_dict({"data": {"dim": 8}})


def test_hash_ignora_solo_episodios_totales():
    base = config_from_dict(DOCUMENTO)
    mas_largo = dataclasses.replace(base, training=dataclasses.replace(base.training, episodes_total=99))
    otra_tasa = dataclasses.replace(base, training=dataclasses.replace(base.training, lr=0.01))
    assert config_hash(mas_largo) == config_hash(base)
    assert config_hash(otra_tasa) != config_hash(base)
    assert len(config_hash(base)) == 64


def test_subconjunto_de_clases_como_tupla():
    config = config_from_dict({"training": {"class_subset": ["sint_0001", "sint_0002"]}})
    assert config.training.class_subset == ("sint_0001", "sint_0002")
    assert yaml.safe_load(yaml.safe_dump(config.to_dict()))["training"]["class_subset"] == [
        "sint_0001",
        "sint_0002",
    ]


def test_hilos_desde_entorno(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("MATCHKIT_THREADS", "3")
    assert eval_threads() == 3
    monkeypatch.setenv("MATCHKIT_THREADS", "muchos")
    with pytest.raises(ConfigError):
        eval_threads()
    monkeypatch.setenv("MATCHKIT_THREADS", "0")
    with pytest.raises(ConfigError):
        eval_threads()


def test_train_config_valida_tarea():
    with pytest.raises(ConfigError):
        TrainConfig(ways=1)


@pytest.mark.parametrize(
    "ruta, encoder",
    [
        ("Experimentos/1_Omniglot/config/omniglot.yaml", ConvEmbedConfig),
        ("Experimentos/2_Sintetico/config/sintetico.yaml", MlpEmbedConfig),
    ],
)
def test_configuraciones_de_experimentos(ruta, encoder):
    raiz = Path(__file__).resolve().parents[1]
    config = load_config(raiz / ruta)
    assert isinstance(config.model.encoder, encoder)
    assert (config.training.ways, config.training.shots) == (5, 1)
