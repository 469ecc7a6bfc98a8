"""
Configuración de ejecución: documento YAML con secciones estrictas.

Secciones: ``data``, ``model``, ``training``, ``evaluation`` y ``baseline``.
Las claves desconocidas se rechazan con la ruta completa (``training.lrr``)
y todos los valores por defecto se materializan en ``to_dict``.
"""

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union, get_args, get_origin, get_type_hints

import yaml
from dotenv import load_dotenv

from matchkit.errores import ConfigError
from matchkit.modelos.codificadores import (
    ConvEmbedConfig,
    MlpEmbedConfig,
    ModelConfig,
    PixelEmbedConfig,
)
from matchkit.modelos.fce import FceConfig

logger = logging.getLogger(__name__)

FUENTES = ("synthetic", "synthetic_file", "images")
MODOS_EVALUACION = ("matching", "pixel", "baseline-cosine", "baseline-softmax")
CODIFICADORES = {"conv": ConvEmbedConfig, "mlp": MlpEmbedConfig, "pixel": PixelEmbedConfig}
VARIABLE_HILOS = "MATCHKIT_THREADS"


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    path: Optional[str] = None
    image_size: int = 28
    invert: bool = False
    rotations: bool = False
    n_classes: int = 40
    dim: int = 16
    noise: float = 0.1
    examples_per_class: int = 40
    nuisance_rank: int = 0
    nuisance_scale: float = 0.0
    seed: int = 0
    n_train: int = 30
    split_seed: int = 0

    def __post_init__(self):
        if self.source not in FUENTES:
            raise ConfigError(f"data.source debe ser uno de {FUENTES}, recibido {self.source!r}")
        if self.source != "synthetic" and not self.path:
            raise ConfigError(f"data.path es obligatorio con data.source={self.source}")
        if self.rotations and self.source != "images":
            raise ConfigError("data.rotations solo aplica a conjuntos de imágenes")
        if self.n_train < 1:
            raise ConfigError("data.n_train debe ser >= 1")


@dataclass(frozen=True)
class TrainConfig:
    ways: int = 5
    shots: int = 1
    batch_per_class: int = 2
    episodes_total: int = 30000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_every: int = 500
    eval_episodes: int = 100
    checkpoint_every: int = 1000
    seed: int = 0
    class_subset: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if self.episodes_total <= 0:
            raise ConfigError("training.episodes_total debe ser > 0")
        if self.lr <= 0:
            raise ConfigError("training.lr debe ser > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.adam_eps <= 0:
            raise ConfigError("Hiperparámetros de Adam fuera de rango")
        _validar_tarea("training", self.ways, self.shots, self.batch_per_class)
        if min(self.eval_every, self.eval_episodes, self.checkpoint_every) < 0:
            raise ConfigError("eval_every, eval_episodes y checkpoint_every no pueden ser negativos")
        if self.class_subset is not None:
            object.__setattr__(self, "class_subset", tuple(self.class_subset))


@dataclass(frozen=True)
class EvalConfig:
    ways: int = 5
    shots: int = 1
    batch_per_class: int = 2
    episodes: int = 1000
    seed: int = 1234
    mode: str = "matching"
    finetune: bool = False
    allow_task_mismatch: bool = False

    def __post_init__(self):
        _validar_tarea("evaluation", self.ways, self.shots, self.batch_per_class)
        if self.episodes < 1:
            raise ConfigError("evaluation.episodes debe ser >= 1")
        if self.mode not in MODOS_EVALUACION:
            raise ConfigError(f"evaluation.mode debe ser uno de {MODOS_EVALUACION}")


@dataclass(frozen=True)
class BaselineConfig:
    epochs: int = 5
    batch_size: int = 32
    lr: float = 1e-3
    finetune_steps: int = 100
    finetune_lr: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2:
            raise ConfigError("baseline.epochs >= 1 y baseline.batch_size >= 2")
        if self.lr <= 0 or self.finetune_lr <= 0 or self.finetune_steps < 0:
            raise ConfigError("Tasas de aprendizaje positivas y finetune_steps >= 0")


def _validar_tarea(seccion: str, ways: int, shots: int, batch_per_class: int):
    if ways < 2:
        raise ConfigError(f"{seccion}.ways debe ser >= 2")
    if shots < 1:
        raise ConfigError(f"{seccion}.shots debe ser >= 1")
    if batch_per_class < 1:
        raise ConfigError(f"{seccion}.batch_per_class debe ser >= 1")


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(
        default_factory=lambda: ModelConfig(encoder=MlpEmbedConfig())
    )
    training: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)

    def __post_init__(self):
        entrenamiento, evaluacion = self.training, self.evaluation
        if not evaluacion.allow_task_mismatch and (
            (entrenamiento.ways, entrenamiento.shots) != (evaluacion.ways, evaluacion.shots)
        ):
            raise ConfigError(
                f"La tarea de evaluación ({evaluacion.ways}-way {evaluacion.shots}-shot) no "
                f"coincide con la de entrenamiento ({entrenamiento.ways}-way "
                f"{entrenamiento.shots}-shot); use evaluation.allow_task_mismatch"
            )
        encoder = self.model.encoder
        vectores = self.data.source in ("synthetic", "synthetic_file")
        if vectores and isinstance(encoder, ConvEmbedConfig):
            raise ConfigError("El codificador conv requiere imágenes (data.source=images)")
        if not vectores and isinstance(encoder, MlpEmbedConfig):
            raise ConfigError("El codificador mlp requiere datos vectoriales")
        if self.data.source == "synthetic" and isinstance(encoder, MlpEmbedConfig):
            if encoder.input_dim != self.data.dim:
                raise ConfigError(
                    f"model.encoder.input_dim={encoder.input_dim} no coincide con data.dim={self.data.dim}"
                )
        if isinstance(encoder, ConvEmbedConfig) and encoder.input_size != self.data.image_size:
            raise ConfigError("model.encoder.input_size debe coincidir con data.image_size")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "data": _a_dict(self.data),
            "model": _modelo_a_dict(self.model),
            "training": _a_dict(self.training),
            "evaluation": _a_dict(self.evaluation),
            "baseline": _a_dict(self.baseline),
        }


# ----------------------------------------------------------------------
# Serialización
# ----------------------------------------------------------------------
def _plano(valor):
    if isinstance(valor, tuple):
        return [_plano(v) for v in valor]
    return valor


def _a_dict(instancia) -> Dict[str, Any]:
    return {f.name: _plano(getattr(instancia, f.name)) for f in dataclasses.fields(instancia)}


def _modelo_a_dict(modelo: ModelConfig) -> Dict[str, Any]:
    tipo = next(n for n, cls in CODIFICADORES.items() if isinstance(modelo.encoder, cls))
    return {
        "encoder": dict(type=tipo, **_a_dict(modelo.encoder)),
        "fce": {
            "enabled": modelo.fce is not None,
            "K": modelo.fce.K if modelo.fce is not None else FceConfig().K,
        },
        "attention": modelo.attention,
        "knn_b": modelo.knn_b,
        "kde_bandwidth": modelo.kde_bandwidth,
        "dtype": modelo.dtype,
    }


def _convertir(valor, tipo, ruta: str):
    """Valida y convierte un escalar YAML al tipo anotado del campo"""
    origen = get_origin(tipo)
    if origen is Union:
        opciones = [t for t in get_args(tipo) if t is not type(None)]
        if valor is None:
            return None
        return _convertir(valor, opciones[0], ruta)
    if origen in (tuple, Tuple):
        if not isinstance(valor, (list, tuple)):
            raise ConfigError(f"{ruta}: se esperaba una lista, recibido {valor!r}")
        interno = get_args(tipo)[0]
        return tuple(_convertir(v, interno, f"{ruta}[{i}]") for i, v in enumerate(valor))
    if tipo is bool:
        if not isinstance(valor, bool):
            raise ConfigError(f"{ruta}: se esperaba un booleano, recibido {valor!r}")
        return valor
    if tipo is int:
        if isinstance(valor, bool) or not isinstance(valor, int):
            raise ConfigError(f"{ruta}: se esperaba un entero, recibido {valor!r}")
        return valor
    if tipo is float:
        if isinstance(valor, bool) or not isinstance(valor, (int, float)):
            raise ConfigError(f"{ruta}: se esperaba un número, recibido {valor!r}")
        return float(valor)
    if tipo is str:
        if not isinstance(valor, str):
            raise ConfigError(f"{ruta}: se esperaba un texto, recibido {valor!r}")
        return valor
    raise ConfigError(f"{ruta}: tipo no soportado {tipo}")


def _desde_dict(cls, datos, ruta: str):
    if datos is None:
        datos = {}
    if not isinstance(datos, dict):
        raise ConfigError(f"{ruta}: se esperaba una sección, recibido {datos!r}")
    tipos = get_type_hints(cls)
    nombres = {f.name for f in dataclasses.fields(cls)}
    desconocidas = sorted(set(datos) - nombres)
    if desconocidas:
        raise ConfigError(f"Clave desconocida: {ruta}.{desconocidas[0]}")
    argumentos = {
        clave: _convertir(valor, tipos[clave], f"{ruta}.{clave}") for clave, valor in datos.items()
    }
    return cls(**argumentos)


def _modelo_desde_dict(datos) -> ModelConfig:
    datos = dict(datos or {})
    desconocidas = sorted(set(datos) - {"encoder", "fce", "attention", "knn_b", "kde_bandwidth", "dtype"})
    if desconocidas:
        raise ConfigError(f"Clave desconocida: model.{desconocidas[0]}")

    encoder = dict(datos.pop("encoder", None) or {"type": "mlp"})
    tipo = encoder.pop("type", None)
    if tipo not in CODIFICADORES:
        raise ConfigError(f"model.encoder.type debe ser uno de {sorted(CODIFICADORES)}")
    encoder_cfg = _desde_dict(CODIFICADORES[tipo], encoder, "model.encoder")

    fce = dict(datos.pop("fce", None) or {})
    desconocidas = sorted(set(fce) - {"enabled", "K"})
    if desconocidas:
        raise ConfigError(f"Clave desconocida: model.fce.{desconocidas[0]}")
    fce_cfg = None
    if _convertir(fce.get("enabled", False), bool, "model.fce.enabled"):
        fce_cfg = FceConfig(K=_convertir(fce.get("K", FceConfig().K), int, "model.fce.K"))

    resto = _desde_dict(_ModeloPlano, datos, "model")
    return ModelConfig(encoder=encoder_cfg, fce=fce_cfg, **_a_dict(resto))


@dataclass(frozen=True)
class _ModeloPlano:
    attention: str = "softmax_cosine"
    knn_b: int = 0
    kde_bandwidth: float = 1.0
    dtype: str = "float64"


SECCIONES = {
    "data": DataConfig,
    "training": TrainConfig,
    "evaluation": EvalConfig,
    "baseline": BaselineConfig,
}


def config_from_dict(documento: Dict[str, Any]) -> RunConfig:
    if documento is None:
        documento = {}
    if not isinstance(documento, dict):
        raise ConfigError("La configuración debe ser un mapa de secciones")
    desconocidas = sorted(set(documento) - set(SECCIONES) - {"model"})
    if desconocidas:
        raise ConfigError(f"Sección desconocida: {desconocidas[0]}")
    secciones = {
        nombre: _desde_dict(cls, documento.get(nombre), nombre)
        for nombre, cls in SECCIONES.items()
    }
    return RunConfig(model=_modelo_desde_dict(documento.get("model")), **secciones)


def load_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"No existe el archivo de configuración: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            documento = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"YAML inválido en {path}: {e}") from e
    config = config_from_dict(documento)
    logger.debug(f"Configuración cargada de {path} (hash {config_hash(config)[:12]})")
    return config


def dump_config(config: RunConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config.to_dict(), f, sort_keys=False, allow_unicode=True)
    return path


def config_hash(config: RunConfig) -> str:
    """SHA-256 de la configuración materializada, sin ``training.episodes_total``"""
    documento = config.to_dict()
    documento["training"].pop("episodes_total")
    canonico = json.dumps(documento, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonico.encode("utf-8")).hexdigest()


def eval_threads() -> int:
    """Hilos de evaluación desde ``MATCHKIT_THREADS`` (también vía ``.env``)"""
    load_dotenv()
    crudo = os.environ.get(VARIABLE_HILOS, "1")
    try:
        hilos = int(crudo)
    except ValueError:
        raise ConfigError(f"{VARIABLE_HILOS} debe ser un entero, recibido {crudo!r}") from None
    if hilos < 1:
        raise ConfigError(f"{VARIABLE_HILOS} debe ser >= 1")
    return hilos
