import re

import numpy as np
import pytest
import yaml

from matchkit.cli import main

LINEA_ACC = re.compile(r"^acc=\d\.\d{4} ±\d\.\d{4} n=\d+$", re.MULTILINE)


def _escribir(ruta, documento):
    ruta.write_text(yaml.safe_dump(documento), encoding="utf-8")
    return str(ruta)


@pytest.fixture
def config_sintetica(tmp_path):
    return _escribir(
        tmp_path / "sintetico.yaml",
        {
            "data": {"source": "synthetic", "n_classes": 12, "dim": 8, "noise": 0.2,
                     "examples_per_class": 6, "n_train": 8},
            "model": {"encoder": {"type": "mlp", "input_dim": 8, "hidden_dims": [8], "output_dim": 8}},
            "training": {"ways": 3, "shots": 1, "episodes_total": 40, "eval_every": 20,
                         "eval_episodes": 5, "checkpoint_every": 20},
            "evaluation": {"ways": 3, "shots": 1, "episodes": 10},
            "baseline": {"epochs": 1, "batch_size": 8, "finetune_steps": 5},
        },
    )


@pytest.fixture
def entrenado(tmp_path, config_sintetica):
    salida = tmp_path / "run"
    assert main(["-q", "train", config_sintetica, "--out", str(salida)]) == 0
    return salida


def test_entrenar_y_evaluar(entrenado, capsys):
    assert (entrenado / "checkpoint.ckpt").is_file()
    assert (entrenado / "config.yaml").is_file()
    capsys.readouterr()
    assert main(["-q", "eval", "--checkpoint", str(entrenado / "checkpoint.ckpt")]) == 0
    assert LINEA_ACC.search(capsys.readouterr().out)


def test_informe_de_metricas(entrenado, capsys):
    capsys.readouterr()
    assert main(["report", str(entrenado / "metrics.tsv")]) == 0
    salida = capsys.readouterr().out
    assert "steps=40" in salida
    assert "final_loss=" in salida


def test_reanudar_desde_la_linea_de_comandos(tmp_path, config_sintetica, entrenado):
    otra = tmp_path / "otra"
    assert main(["-q", "train", config_sintetica, "--out", str(otra), "--stop-after", "25"]) == 0
    assert main(["-q", "train", config_sintetica, "--out", str(otra), "--resume"]) == 0
    assert (otra / "metrics.tsv").read_text() == (entrenado / "metrics.tsv").read_text()


def test_tarea_distinta_requiere_permiso(entrenado):
    ckpt = str(entrenado / "checkpoint.ckpt")
    assert main(["-q", "eval", "--checkpoint", ckpt, "--ways", "4"]) == 1
    assert main(["-q", "eval", "--checkpoint", ckpt, "--ways", "4", "--allow-task-mismatch"]) == 0


def test_checkpoint_corrupto_es_error_de_datos(entrenado):
    ruta = entrenado / "checkpoint.ckpt"
    crudo = bytearray(ruta.read_bytes())
    crudo[40] ^= 0x01
    ruta.write_bytes(bytes(crudo))
    assert main(["-q", "eval", "--checkpoint", str(ruta)]) == 2


def test_pixeles_sin_checkpoint(config_sintetica, capsys):
    assert main(["-q", "eval", "--config", config_sintetica, "--mode", "pixel", "--episodes", "5"]) == 0
    assert LINEA_ACC.search(capsys.readouterr().out)
    assert main(["-q", "eval", "--config", config_sintetica, "--mode", "matching"]) == 1


def test_linea_base(tmp_path, config_sintetica, capsys, caplog):
    salida = tmp_path / "base"
    assert main(["-q", "baseline", config_sintetica, "--out", str(salida)]) == 0
    ckpt = str(salida / "baseline.ckpt")
    capsys.readouterr()
    assert main(["-q", "eval", "--checkpoint", ckpt, "--mode", "baseline-cosine", "--episodes", "3"]) == 0
    assert main(["-q", "eval", "--checkpoint", ckpt, "--mode", "baseline-softmax", "--episodes", "3"]) == 0
    assert len(LINEA_ACC.findall(capsys.readouterr().out)) == 2
    assert "Ajuste fino softmax: antes=" in caplog.text
    assert "cambio=" in caplog.text
    assert main(["-q", "eval", "--checkpoint", ckpt, "--mode", "matching"]) == 1


def test_gradcheck_codigos_de_salida(capsys):
    assert main(["-q", "gradcheck"]) == 0
    assert "✓" in capsys.readouterr().out
    assert main(["-q", "gradcheck", "--fce", "--K", "2"]) == 0
    assert main(["-q", "gradcheck", "--inject-bug"]) == 4
    assert "✗" in capsys.readouterr().out
    assert main(["-q", "gradcheck", "--dim", "64"]) == 1


def test_episodio_de_muestra(tmp_path, config_sintetica):
    a, b = tmp_path / "a", tmp_path / "b"
    for destino in (a, b):
        assert main(["-q", "sample", config_sintetica, "--ways", "3", "--seed", "5", "--out", str(destino)]) == 0
    manifiesto = (a / "manifest.txt").read_text(encoding="utf-8").splitlines()
    assert manifiesto[0].split("\t") == ["part", "local_label", "class_id", "class_name", "example_index"]
    assert len(manifiesto) == 1 + 3 * 1 + 3 * 2
    assert manifiesto == (b / "manifest.txt").read_text(encoding="utf-8").splitlines()
    assert len(list((a / "support").rglob("*.npy"))) == 3
    assert len(list((a / "batch").rglob("*.npy"))) == 6
    clases = {int(f.split("\t")[2]) for f in manifiesto[1:]}
    assert len(clases) == 3


def test_episodio_de_imagenes(tmp_path, png_tree):
    config = _escribir(
        tmp_path / "imagenes.yaml",
        {
            "data": {"source": "images", "path": str(png_tree), "n_train": 1},
            "model": {"encoder": {"type": "pixel", "input_shape": [28, 28]}},
            "training": {"ways": 2, "shots": 1},
            "evaluation": {"ways": 2, "shots": 1},
        },
    )
    salida = tmp_path / "ep"
    assert main(["-q", "sample", config, "--ways", "2", "--batch-per-class", "1", "--part", "train", "--out", str(salida)]) == 2
    config = _escribir(
        tmp_path / "rotadas.yaml",
        {
            "data": {"source": "images", "path": str(png_tree), "n_train": 1, "rotations": True},
            "model": {"encoder": {"type": "pixel", "input_shape": [28, 28]}},
            "training": {"ways": 2, "shots": 1},
            "evaluation": {"ways": 2, "shots": 1},
        },
    )
    assert main(["-q", "sample", config, "--ways", "2", "--batch-per-class", "1", "--part", "train", "--out", str(salida)]) == 0
    assert len(list(salida.rglob("*.png"))) == 4


def test_ruta_de_datos_inexistente(tmp_path, caplog):
    config = _escribir(
        tmp_path / "falta.yaml",
        {
            "data": {"source": "images", "path": str(tmp_path / "no_hay_imagenes")},
            "model": {"encoder": {"type": "pixel", "input_shape": [28, 28]}},
        },
    )
    assert main(["-q", "eval", "--config", config, "--mode", "pixel"]) == 2
    assert "no_hay_imagenes" in caplog.text


def test_configuracion_invalida(tmp_path):
    config = _escribir(tmp_path / "mala.yaml", {"training": {"lrr": 0.1}})
    assert main(["-q", "train", config, "--out", str(tmp_path / "x")]) == 1


def test_preparar_sintetico(tmp_path, config_sintetica, capsys):
    binario = tmp_path / "sint.bin"
    assert main(["-q", "prepare", config_sintetica, "--out", str(binario)]) == 0
    assert "clases=12" in capsys.readouterr().out
    config = _escribir(
        tmp_path / "desde_archivo.yaml",
        {
            "data": {"source": "synthetic_file", "path": str(binario), "n_train": 8, "dim": 8},
            "model": {"encoder": {"type": "mlp", "input_dim": 8, "hidden_dims": [8], "output_dim": 8}},
        },
    )
    assert main(["-q", "eval", "--config", config, "--mode", "pixel", "--ways", "3", "--episodes", "3"]) == 0


def test_ejemplos_guardados_son_los_del_conjunto(tmp_path, config_sintetica):
    from matchkit.configuracion import load_config
    from matchkit.datos.conjuntos import dataset_from_config

    salida = tmp_path / "m"
    assert main(["-q", "sample", config_sintetica, "--ways", "3", "--out", str(salida)]) == 0
    datos = dataset_from_config(load_config(config_sintetica).data)
    for linea in (salida / "manifest.txt").read_text(encoding="utf-8").splitlines()[1:]:
        parte, etiqueta, clase, _, ejemplo = linea.split("\t")
        x = np.load(salida / parte / f"{etiqueta}_{clase}" / f"{ejemplo}.npy")
        np.testing.assert_array_equal(x, datos.examples[int(clase)][int(ejemplo)])


def test_salida_no_escribible_es_error_de_datos(tmp_path, config_sintetica, caplog):
    ocupado = tmp_path / "ocupado"
    ocupado.write_text("no es un directorio", encoding="utf-8")
    assert main(["-q", "train", config_sintetica, "--out", str(ocupado / "run")]) == 2
    assert "✗ Error de E/S" in caplog.text
    assert "ocupado" in caplog.text
