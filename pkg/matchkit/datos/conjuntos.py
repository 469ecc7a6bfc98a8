"""
Conjuntos de datos por clase: sintéticos, árboles de PNG y aumento por rotación
"""

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from matchkit.errores import ConfigError, DataError

logger = logging.getLogger(__name__)

SYNTHETIC_MAGIC = b"MNSYN1\0\0"
_CABECERA = struct.Struct("<8sII")
EXTENSIONES_IMAGEN = (".png",)


@dataclass
class ClassDataset:
    """Ejemplos agrupados por clase.

    ``examples[c]`` es un arreglo de solo lectura ``[n_c, *input_shape]``;
    ``groups[c]`` identifica la clase de origen (las rotaciones de un mismo
    carácter comparten grupo).
    """

    class_names: List[str]
    examples: List[np.ndarray]
    groups: np.ndarray = None
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.class_names) != len(self.examples):
            raise DataError(
                f"{len(self.class_names)} nombres de clase para {len(self.examples)} clases"
            )
        if len(set(self.class_names)) != len(self.class_names):
            raise DataError("Los nombres de clase deben ser únicos")
        if not self.class_names:
            raise DataError("El conjunto de datos no contiene clases")
        formas = {ejemplos.shape[1:] for ejemplos in self.examples}
        if len(formas) != 1:
            raise DataError(f"Formas de ejemplo heterogéneas: {sorted(formas)}")
        if self.groups is None:
            self.groups = np.arange(len(self.class_names))
        self.groups = np.asarray(self.groups, dtype=np.int64)
        if self.groups.shape != (len(self.class_names),):
            raise DataError("Debe haber un identificador de grupo por clase")
        for ejemplos in self.examples:
            ejemplos.setflags(write=False)
        self.metadata.setdefault("input_shape", list(self.input_shape))

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return tuple(self.examples[0].shape[1:])

    def __len__(self) -> int:
        return self.n_classes

    def num_examples(self, class_id: int) -> int:
        return self.examples[class_id].shape[0]

    def class_ids(self, nombres: Sequence[str]) -> List[int]:
        indice = {nombre: i for i, nombre in enumerate(self.class_names)}
        faltantes = [n for n in nombres if n not in indice]
        if faltantes:
            raise ConfigError(f"Clases desconocidas: {faltantes[:5]}")
        return [indice[n] for n in nombres]


# ----------------------------------------------------------------------
# Datos sintéticos
# ----------------------------------------------------------------------
def gen_synthetic(
    n_classes: int,
    dim: int,
    within_class_noise: float,
    seed: int,
    examples_per_class: int = 40,
    nuisance_rank: int = 0,
    nuisance_scale: float = 0.0,
) -> ClassDataset:
    """Prototipos uniformes en la esfera unidad más ruido gaussiano σ.

    Con ``nuisance_rank > 0`` cada ejemplo recibe además una variación de
    amplitud ``nuisance_scale`` en un subespacio aleatorio fijo, común a todas
    las clases: perjudica al coseno sobre píxeles pero un codificador
    entrenado puede proyectarla fuera.
    """
    if n_classes < 2:
        raise ConfigError("gen_synthetic requiere al menos 2 clases")
    if within_class_noise < 0 or nuisance_scale < 0:
        raise ConfigError("Las amplitudes de ruido no pueden ser negativas")
    if not 0 <= nuisance_rank < dim:
        raise ConfigError(f"nuisance_rank debe estar en [0, {dim})")
    if examples_per_class < 1:
        raise ConfigError("examples_per_class debe ser >= 1")

    rng = np.random.default_rng(seed)
    prototipos = rng.standard_normal((n_classes, dim))
    prototipos /= np.linalg.norm(prototipos, axis=1, keepdims=True)
    base = None
    if nuisance_rank:
        base, _ = np.linalg.qr(rng.standard_normal((dim, nuisance_rank)))

    ejemplos = []
    for c in range(n_classes):
        x = prototipos[c] + within_class_noise * rng.standard_normal((examples_per_class, dim))
        if base is not None:
            x = x + nuisance_scale * rng.standard_normal((examples_per_class, nuisance_rank)) @ base.T
        ejemplos.append(x)

    return ClassDataset(
        class_names=[f"sint_{c:04d}" for c in range(n_classes)],
        examples=ejemplos,
        metadata={
            "source": "synthetic",
            "seed": seed,
            "within_class_noise": within_class_noise,
            "nuisance_rank": nuisance_rank,
            "nuisance_scale": nuisance_scale,
        },
    )


def save_synthetic(dataset: ClassDataset, path: Union[str, Path]) -> Path:
    """Cabecera de 16 bytes (magia, u32 n_clases, u32 dim) y float64 LE"""
    path = Path(path)
    if len(dataset.input_shape) != 1:
        raise DataError("Solo se serializan conjuntos de vectores")
    conteos = {dataset.num_examples(c) for c in range(dataset.n_classes)}
    if len(conteos) != 1:
        raise DataError("La serialización requiere el mismo número de ejemplos por clase")
    path.parent.mkdir(parents=True, exist_ok=True)
    datos = np.stack(dataset.examples).astype("<f8")
    with open(path, "wb") as f:
        f.write(_CABECERA.pack(SYNTHETIC_MAGIC, dataset.n_classes, dataset.input_shape[0]))
        f.write(datos.tobytes(order="C"))
    logger.info(f"✓ Conjunto sintético guardado en {path}")
    return path


def load_synthetic(path: Union[str, Path]) -> ClassDataset:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"No existe el archivo de datos: {path}")
    crudo = path.read_bytes()
    if len(crudo) < _CABECERA.size:
        raise DataError(f"Archivo sintético truncado: {path}")
    magia, n_clases, dim = _CABECERA.unpack_from(crudo)
    if magia != SYNTHETIC_MAGIC:
        raise DataError(f"Cabecera desconocida en {path}")
    cuerpo = crudo[_CABECERA.size :]
    valores = np.frombuffer(cuerpo, dtype="<f8")
    if n_clases == 0 or dim == 0 or valores.size % (n_clases * dim):
        raise DataError(f"Tamaño de datos incoherente con la cabecera en {path}")
    por_clase = valores.size // (n_clases * dim)
    datos = valores.astype(np.float64).reshape(n_clases, por_clase, dim)
    return ClassDataset(
        class_names=[f"sint_{c:04d}" for c in range(n_clases)],
        examples=[datos[c].copy() for c in range(n_clases)],
        metadata={"source": str(path)},
    )


# ----------------------------------------------------------------------
# Imágenes
# ----------------------------------------------------------------------
def _matriz_area(origen: int, destino: int) -> np.ndarray:
    """Fila i: fracción de cada píxel de origen cubierta por el píxel destino i"""
    bordes_o = np.arange(origen + 1) / origen
    bordes_d = np.arange(destino + 1) / destino
    inicio = np.maximum(bordes_d[:-1, None], bordes_o[None, :-1])
    fin = np.minimum(bordes_d[1:, None], bordes_o[None, 1:])
    return np.clip(fin - inicio, 0.0, None) * destino


def resize_area(imagen: np.ndarray, size: int) -> np.ndarray:
    """Redimensiona ``[H,W]`` a ``[size,size]`` promediando áreas exactas"""
    alto, ancho = imagen.shape
    if (alto, ancho) == (size, size):
        return imagen
    return _matriz_area(alto, size) @ imagen @ _matriz_area(ancho, size).T


def _leer_png(path: Path, size: int, invert: bool) -> np.ndarray:
    try:
        with Image.open(path) as img:
            pixeles = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    except OSError as e:
        raise DataError(f"No se pudo leer la imagen {path}: {e}") from e
    if invert:
        pixeles = 1.0 - pixeles
    return resize_area(pixeles, size)


def _es_imagen(p: Path) -> bool:
    return p.is_file() and p.suffix.lower() in EXTENSIONES_IMAGEN


def load_image_class_tree(
    root_path: Union[str, Path], size: int = 28, invert: bool = False
) -> ClassDataset:
    """Carga ``root/<clase>/<ejemplo>.png`` (se admiten árboles anidados).

    Una clase es cualquier directorio que contiene PNG directamente; su
    nombre es la ruta relativa POSIX. Las clases se ordenan
    lexicográficamente y los ejemplos por nombre de archivo.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise DataError(f"No existe el directorio de datos: {root}")
    if any(_es_imagen(p) for p in root.iterdir()):
        raise DataError(f"Hay imágenes sueltas en la raíz {root}; se esperaban subdirectorios")

    clases: Dict[str, List[Path]] = {}
    for directorio in sorted(p for p in root.rglob("*") if p.is_dir()):
        hijos = list(directorio.iterdir())
        imagenes = sorted(p for p in hijos if _es_imagen(p))
        if imagenes:
            clases[directorio.relative_to(root).as_posix()] = imagenes
        elif not any(p.is_dir() for p in hijos):
            raise DataError(f"Directorio de clase vacío: {directorio}")
    if not clases:
        raise DataError(f"No se encontraron clases en {root}")

    nombres = sorted(clases)
    ejemplos = [np.stack([_leer_png(p, size, invert) for p in clases[n]]) for n in nombres]
    logger.info(
        f"✓ {len(nombres)} clases y {sum(len(e) for e in ejemplos)} imágenes cargadas de {root}"
    )
    return ClassDataset(
        class_names=nombres,
        examples=ejemplos,
        metadata={"source": str(root), "size": size, "invert": invert},
    )


def augment_rotations(dataset: ClassDataset) -> ClassDataset:
    """Cada clase genera cuatro clases: rotaciones de 0°, 90°, 180° y 270°"""
    forma = dataset.input_shape
    if len(forma) != 2 or forma[0] != forma[1]:
        raise DataError(f"La rotación requiere imágenes cuadradas, recibido {forma}")
    nombres, ejemplos, grupos = [], [], []
    for nombre, imagenes, grupo in zip(dataset.class_names, dataset.examples, dataset.groups):
        for giros in range(4):
            nombres.append(f"{nombre}/rot{90 * giros:03d}")
            ejemplos.append(np.ascontiguousarray(np.rot90(imagenes, giros, axes=(1, 2))))
            grupos.append(grupo)
    metadata = dict(dataset.metadata, rotations=True)
    return ClassDataset(nombres, ejemplos, np.asarray(grupos), metadata)


def dataset_from_config(data) -> ClassDataset:
    """Construye el conjunto descrito por la sección ``data`` de la configuración"""
    if data.source == "synthetic":
        dataset = gen_synthetic(
            data.n_classes,
            data.dim,
            data.noise,
            data.seed,
            examples_per_class=data.examples_per_class,
            nuisance_rank=data.nuisance_rank,
            nuisance_scale=data.nuisance_scale,
        )
    elif data.source == "synthetic_file":
        dataset = load_synthetic(data.path)
    else:
        dataset = load_image_class_tree(data.path, size=data.image_size, invert=data.invert)
    if data.rotations:
        dataset = augment_rotations(dataset)
    return dataset
