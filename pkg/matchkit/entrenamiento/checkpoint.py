"""
Checkpoints binarios versionados.

Formato (little-endian)::

    b"MNCKPT1\\0" | u32 versión | u32 len + JSON de metadatos |
    u32 n_tensores | por tensor: u32 len + nombre, u32 ndim, ndim×u32, f64[] |
    u32 CRC32 de todo lo anterior

La escritura es atómica (``<ruta>.tmp`` y ``os.replace``).
"""

import json
import logging
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from matchkit.errores import CheckpointError, ChecksumError, ConfigError
from matchkit.modelos.parametros import ModelParams, RunningStats

logger = logging.getLogger(__name__)

MAGIC = b"MNCKPT1\0"
VERSION = 1
TIPOS = ("matching", "baseline")
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    kind: str
    params: ModelParams
    config: Dict[str, Any]
    config_hash: str
    episode: int = 0
    adam_t: int = 0
    adam_m: Dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: Dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: Optional[Dict[str, Any]] = None
    dtype: str = "float64"
    extra: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in TIPOS:
            raise CheckpointError(f"Tipo de checkpoint desconocido: {self.kind}")


def _tensores(ckpt: Checkpoint) -> List[Tuple[str, np.ndarray]]:
    salida = [(f"param/{n}", t.data) for n, t in ckpt.params.items()]
    for nombre, stats in ckpt.params.buffers.items():
        salida.append((f"buffer/{nombre}.mean", stats.mean))
        salida.append((f"buffer/{nombre}.var", stats.var))
    salida += [(f"adam_m/{n}", m) for n, m in ckpt.adam_m.items()]
    salida += [(f"adam_v/{n}", v) for n, v in ckpt.adam_v.items()]
    return salida


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    tensores = _tensores(ckpt)
    meta = {
        "kind": ckpt.kind,
        "config": ckpt.config,
        "config_hash": ckpt.config_hash,
        "episode": int(ckpt.episode),
        "rng_state": ckpt.rng_state,
        "adam_t": int(ckpt.adam_t),
        "dtype": ckpt.dtype,
        "extra": ckpt.extra,
        "names": [n for n, _ in tensores],
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")

    partes = [MAGIC, _U32.pack(VERSION), _U32.pack(len(meta_bytes)), meta_bytes]
    partes.append(_U32.pack(len(tensores)))
    for nombre, arreglo in tensores:
        nombre_b = nombre.encode("utf-8")
        partes += [_U32.pack(len(nombre_b)), nombre_b, _U32.pack(arreglo.ndim)]
        partes += [_U32.pack(s) for s in arreglo.shape]
        partes.append(np.ascontiguousarray(arreglo, dtype="<f8").tobytes())
    cuerpo = b"".join(partes)
    return cuerpo + _U32.pack(zlib.crc32(cuerpo) & 0xFFFFFFFF)


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temporal = path.with_name(path.name + ".tmp")
    datos = encode_checkpoint(ckpt)
    try:
        with open(temporal, "wb") as f:
            f.write(datos)
            f.flush()
            os.fsync(f.fileno())
        os.replace(temporal, path)
    except BaseException:
        temporal.unlink(missing_ok=True)
        raise
    logger.debug(f"Checkpoint guardado en {path} (episodio {ckpt.episode})")
    return path


class _Lector:
    def __init__(self, datos: bytes, origen: Path):
        self.datos = datos
        self.pos = 0
        self.origen = origen

    def leer(self, n: int) -> bytes:
        if self.pos + n > len(self.datos):
            raise CheckpointError(f"Checkpoint truncado: {self.origen}")
        trozo = self.datos[self.pos : self.pos + n]
        self.pos += n
        return trozo

    def u32(self) -> int:
        return _U32.unpack(self.leer(4))[0]


def decode_checkpoint(datos: bytes, origen: Path = Path("<memoria>")) -> Checkpoint:
    if len(datos) < len(MAGIC) + 4 or datos[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"No es un checkpoint de matchkit: {origen}")
    cuerpo, cola = datos[:-4], datos[-4:]
    if zlib.crc32(cuerpo) & 0xFFFFFFFF != _U32.unpack(cola)[0]:
        raise ChecksumError(f"CRC32 no coincide, archivo corrupto: {origen}")

    lector = _Lector(cuerpo, origen)
    lector.leer(len(MAGIC))
    version = lector.u32()
    if version != VERSION:
        raise CheckpointError(f"Versión de checkpoint {version} no soportada: {origen}")
    meta = json.loads(lector.leer(lector.u32()).decode("utf-8"))
    dtype = np.dtype(meta["dtype"])

    tensores: Dict[str, np.ndarray] = {}
    for _ in range(lector.u32()):
        nombre = lector.leer(lector.u32()).decode("utf-8")
        forma = tuple(lector.u32() for _ in range(lector.u32()))
        n = int(np.prod(forma, dtype=np.int64))
        valores = np.frombuffer(lector.leer(8 * n), dtype="<f8").reshape(forma)
        tensores[nombre] = valores.astype(dtype)
    if lector.pos != len(cuerpo):
        raise CheckpointError(f"Bytes sobrantes en el checkpoint: {origen}")

    params = ModelParams()
    medias, varianzas = {}, {}
    adam_m, adam_v = {}, {}
    for nombre, arreglo in tensores.items():
        prefijo, _, resto = nombre.partition("/")
        if prefijo == "param":
            params.add(resto, arreglo)
        elif prefijo == "buffer":
            base, _, campo = resto.rpartition(".")
            (medias if campo == "mean" else varianzas)[base] = arreglo
        elif prefijo == "adam_m":
            adam_m[resto] = arreglo
        elif prefijo == "adam_v":
            adam_v[resto] = arreglo
        else:
            raise CheckpointError(f"Tensor con prefijo desconocido '{nombre}' en {origen}")
    if set(medias) != set(varianzas):
        raise CheckpointError(f"Estadísticas de batchnorm incompletas en {origen}")
    for base in medias:
        params.add_buffer(base, RunningStats(medias[base], varianzas[base]))

    return Checkpoint(
        kind=meta["kind"],
        params=params,
        config=meta["config"],
        config_hash=meta["config_hash"],
        episode=meta["episode"],
        adam_t=meta["adam_t"],
        adam_m=adam_m,
        adam_v=adam_v,
        rng_state=meta["rng_state"],
        dtype=meta["dtype"],
        extra=meta.get("extra", {}),
    )


def load_checkpoint(path: Union[str, Path], expected_hash: Optional[str] = None) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"No existe el checkpoint: {path}")
    ckpt = decode_checkpoint(path.read_bytes(), path)
    if expected_hash is not None and ckpt.config_hash != expected_hash:
        raise ConfigError(
            f"El checkpoint {path} corresponde a otra configuración "
            f"(hash {ckpt.config_hash[:12]} ≠ {expected_hash[:12]})"
        )
    return ckpt
