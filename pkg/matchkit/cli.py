#!/usr/bin/env python3
"""
Interfaz de línea de comandos de matchkit.

Subcomandos: ``train``, ``eval``, ``gradcheck``, ``sample``, ``prepare``,
``baseline`` y ``report``. Códigos de salida: 0 ok, 1 configuración,
2 datos, 3 numérico, 4 fallo de gradcheck.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from dotenv import load_dotenv
from PIL import Image

from matchkit.configuracion import (
    RunConfig,
    config_from_dict,
    config_hash,
    dump_config,
    eval_threads,
    load_config,
)
from matchkit.datos.conjuntos import ClassDataset, dataset_from_config, save_synthetic
from matchkit.datos.episodios import SplitSpec, sample_episode, split_classes
from matchkit.entrenamiento.baselines import (
    classifier_accuracy,
    evaluate_baseline_cosine,
    evaluate_finetuned,
    train_baseline_classifier,
)
from matchkit.entrenamiento.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from matchkit.entrenamiento.entrenador import train_matching_net
from matchkit.entrenamiento.evaluacion import evaluate, evaluate_pixels
from matchkit.entrenamiento.verificacion import gradcheck_pipeline
from matchkit.errores import ConfigError, DataError, GradcheckError, MatchkitError
from matchkit.utiles.logging_config import setup_logging
from matchkit.utiles.metricas import read_metrics, summarize_metrics

logger = logging.getLogger(__name__)


def _progreso(args) -> bool:
    return not args.quiet and sys.stderr.isatty()


def _datos(config: RunConfig) -> Tuple[ClassDataset, SplitSpec]:
    dataset = dataset_from_config(config.data)
    return dataset, split_classes(dataset, config.data.n_train, config.data.split_seed)


# ----------------------------------------------------------------------
# Subcomandos
# ----------------------------------------------------------------------
def cmd_train(args) -> int:
    config = load_config(args.config)
    out_dir = Path(args.out)
    dataset, split = _datos(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_config(config, out_dir / "config.yaml")
    logger.info(
        f"Entrenando {config.training.ways}-way {config.training.shots}-shot "
        f"({len(split.train_class_ids)} clases de entrenamiento, hash {config_hash(config)[:12]})"
    )
    resultado = train_matching_net(
        config,
        dataset,
        split,
        out_dir=out_dir,
        resume=args.resume,
        stop_after=args.stop_after,
        threads=eval_threads(),
        progress=_progreso(args),
    )
    logger.info(f"✓ Entrenamiento en el episodio {resultado.episode}; checkpoint {resultado.checkpoint_path}")
    if resultado.eval_reports:
        ultimo = max(resultado.eval_reports)
        print(resultado.eval_reports[ultimo].format())
    return 0


def _config_eval(args) -> Tuple[RunConfig, Optional[Checkpoint]]:
    ckpt = load_checkpoint(args.checkpoint) if args.checkpoint else None
    if args.config:
        config = load_config(args.config)
        if ckpt is not None and ckpt.config_hash != config_hash(config):
            raise ConfigError(f"El checkpoint {args.checkpoint} no corresponde a {args.config}")
    elif ckpt is not None:
        config = config_from_dict(ckpt.config)
    else:
        raise ConfigError("eval necesita --config o --checkpoint")
    return config, ckpt


def cmd_eval(args) -> int:
    config, ckpt = _config_eval(args)
    evaluacion = config.evaluation
    modo = args.mode or evaluacion.mode
    ways = args.ways or evaluacion.ways
    shots = args.shots or evaluacion.shots
    episodios = args.episodes or evaluacion.episodes
    semilla = evaluacion.seed if args.seed is None else args.seed
    lote = args.batch_per_class or evaluacion.batch_per_class
    ajuste = args.finetune or evaluacion.finetune

    if modo == "matching" and (ckpt is None or ckpt.kind != "matching"):
        raise ConfigError("El modo matching requiere un checkpoint de red de emparejamiento")
    if modo.startswith("baseline") and (ckpt is None or ckpt.kind != "baseline"):
        raise ConfigError(f"El modo {modo} requiere un checkpoint de línea base")
    permitido = args.allow_task_mismatch or evaluacion.allow_task_mismatch
    entrenamiento = config.training
    if modo != "pixel" and not permitido and (ways, shots) != (entrenamiento.ways, entrenamiento.shots):
        raise ConfigError(
            f"Evaluar {ways}-way {shots}-shot un modelo entrenado en {entrenamiento.ways}-way "
            f"{entrenamiento.shots}-shot requiere --allow-task-mismatch"
        )

    dataset, split = _datos(config)
    pool = split.part(args.part)
    comunes = dict(batch_per_class=lote, threads=eval_threads(), progress=_progreso(args))
    modelo = config.model

    if modo == "pixel":
        informe = evaluate_pixels(
            dataset, pool, ways, shots, episodios, semilla, attention=args.attention, **comunes
        )
    elif modo == "matching":
        params = ckpt.params.astype(modelo.np_dtype)
        informe = evaluate(
            params, dataset, pool, ways, shots, episodios, semilla,
            config=modelo, attention=args.attention, **comunes,
        )
    else:
        params = ckpt.params.astype(modelo.np_dtype)
        base = config.baseline
        variante = "softmax" if modo == "baseline-softmax" else "cosine"
        if variante == "cosine" and not ajuste:
            informe = evaluate_baseline_cosine(
                params, dataset, pool, ways, shots, episodios, semilla, model=modelo, **comunes
            )
        else:
            informe = evaluate_finetuned(
                params, dataset, pool, ways, shots, episodios, semilla,
                model=modelo, variant=variante, steps=base.finetune_steps, lr=base.finetune_lr,
                **comunes,
            ).after
    print(informe.format())
    return 0


def cmd_gradcheck(args) -> int:
    informe = gradcheck_pipeline(
        dim=args.dim,
        ways=args.ways,
        shots=args.shots,
        fce=args.fce,
        K=args.K,
        seed=args.seed,
        inject_bug=args.inject_bug,
        encoder=args.encoder,
    )
    for linea in informe.lines():
        print(linea)
    if not informe.passed:
        raise GradcheckError(
            f"Error relativo {informe.errors[informe.worst]:.3e} > {informe.tolerance:g} en "
            f"{informe.worst}",
            parameter=informe.worst,
        )
    return 0


def _guardar_ejemplo(x: np.ndarray, ruta: Path):
    if x.ndim == 2:
        pixeles = np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(pixeles).save(ruta.with_suffix(".png"))
    else:
        np.save(ruta.with_suffix(".npy"), x)


def cmd_sample(args) -> int:
    config = load_config(args.config)
    dataset, split = _datos(config)
    rng = np.random.default_rng(args.seed)
    episodio = sample_episode(
        dataset, split.part(args.part), args.ways, args.shots, args.batch_per_class, rng, seed=args.seed
    )
    out = Path(args.out)
    filas: List[str] = ["part\tlocal_label\tclass_id\tclass_name\texample_index"]
    for parte, indices, etiquetas, ejemplos in (
        ("support", episodio.support_index, episodio.support_y, episodio.support_x),
        ("batch", episodio.batch_index, episodio.batch_y, episodio.batch_x),
    ):
        for (clase, ejemplo), etiqueta, x in zip(indices, etiquetas, ejemplos):
            carpeta = out / parte / f"{etiqueta}_{clase}"
            carpeta.mkdir(parents=True, exist_ok=True)
            _guardar_ejemplo(x, carpeta / str(ejemplo))
            filas.append(f"{parte}\t{etiqueta}\t{clase}\t{dataset.class_names[clase]}\t{ejemplo}")
    (out / "manifest.txt").write_text("\n".join(filas) + "\n", encoding="utf-8")
    logger.info(f"✓ Episodio {args.ways}-way {args.shots}-shot escrito en {out}")
    return 0


def cmd_prepare(args) -> int:
    config = load_config(args.config)
    dataset = dataset_from_config(config.data)
    print(
        f"clases={dataset.n_classes} ejemplos={sum(len(e) for e in dataset.examples)} "
        f"forma={dataset.input_shape}"
    )
    if args.out:
        save_synthetic(dataset, args.out)
    return 0


def cmd_baseline(args) -> int:
    config = load_config(args.config)
    dataset, split = _datos(config)
    base = config.baseline
    params = train_baseline_classifier(
        dataset,
        split.train_class_ids,
        base.epochs,
        config.model,
        batch_size=base.batch_size,
        lr=base.lr,
        seed=base.seed,
        progress=_progreso(args),
    )
    exactitud = classifier_accuracy(params, dataset, split.train_class_ids, config.model)
    logger.info(f"Exactitud de entrenamiento del clasificador: {exactitud:.4f}")
    ruta = save_checkpoint(
        Checkpoint(
            kind="baseline",
            params=params,
            config=config.to_dict(),
            config_hash=config_hash(config),
            dtype=config.model.dtype,
            extra={"n_classes": len(split.train_class_ids), "train_accuracy": exactitud},
        ),
        Path(args.out) / "baseline.ckpt",
    )
    logger.info(f"✓ Línea base guardada en {ruta}")
    return 0


def cmd_report(args) -> int:
    resumen = summarize_metrics(read_metrics(args.metrics))
    for clave, valor in resumen.items():
        print(f"{clave}={valor:.4f}" if isinstance(valor, float) else f"{clave}={valor}")
    return 0


# ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="matchkit", description="Redes de emparejamiento para clasificación one-shot"
    )
    parser.add_argument("--log-dir", type=Path, default=None, help="Directorio de logs (opcional)")
    parser.add_argument("--log-level", default="INFO", help="Nivel de logging")
    parser.add_argument("--quiet", "-q", action="store_true", help="Sin barras de progreso")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="Meta-entrenar una red de emparejamiento")
    p.add_argument("config", help="Archivo YAML de configuración")
    p.add_argument("--out", "-o", required=True, help="Directorio de salida")
    p.add_argument("--resume", action="store_true", help="Reanudar desde el checkpoint")
    p.add_argument("--stop-after", type=int, default=None, help="Detener tras N episodios")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Evaluar en episodios de clases no vistas")
    p.add_argument("--checkpoint", "-c", default=None)
    p.add_argument("--config", default=None, help="Configuración (por defecto, la del checkpoint)")
    p.add_argument("--ways", type=int, default=None)
    p.add_argument("--shots", type=int, default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--batch-per-class", type=int, default=None)
    p.add_argument(
        "--mode", choices=("matching", "pixel", "baseline-cosine", "baseline-softmax"), default=None
    )
    p.add_argument("--attention", choices=("softmax_cosine", "knn", "kde"), default=None)
    p.add_argument("--finetune", action="store_true", help="Ajuste fino sobre el soporte")
    p.add_argument("--part", choices=("train", "test"), default="test")
    p.add_argument("--allow-task-mismatch", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="Verificar gradientes por diferencias finitas")
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--ways", type=int, default=2)
    p.add_argument("--shots", type=int, default=1)
    p.add_argument("--fce", action="store_true")
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--encoder", choices=("mlp", "conv"), default="mlp")
    p.add_argument("--inject-bug", action="store_true", help="Control negativo: altera relu")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sample", help="Escribir un episodio para inspección")
    p.add_argument("config")
    p.add_argument("--ways", type=int, default=5)
    p.add_argument("--shots", type=int, default=1)
    p.add_argument("--batch-per-class", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--part", choices=("train", "test"), default="test")
    p.add_argument("--out", "-o", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("prepare", help="Ingerir o generar el conjunto de datos")
    p.add_argument("config")
    p.add_argument("--out", "-o", default=None, help="Binario sintético de salida")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("baseline", help="Entrenar el clasificador de referencia")
    p.add_argument("config")
    p.add_argument("--out", "-o", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("report", help="Resumir un registro de métricas")
    p.add_argument("metrics")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Función principal con interfaz de línea de comandos."""
    load_dotenv()
    args = build_parser().parse_args(argv)
    setup_logging(args.log_dir, args.log_level)
    try:
        return args.func(args)
    except GradcheckError as e:
        logger.error(f"✗ Gradcheck fallido en {e.parameter}: {e}")
        return e.exit_code
    except MatchkitError as e:
        logger.error(f"✗ {e}")
        return e.exit_code
    except OSError as e:
        error = DataError(f"Error de E/S en {e.filename or '?'}: {e.strerror or e}")
        logger.error(f"✗ {error}")
        return error.exit_code


if __name__ == "__main__":
    sys.exit(main())
