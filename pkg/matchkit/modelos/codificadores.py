"""
Funciones de embedding f' y g' (compartidas, f = g).

- ``ConvEmbedConfig``: la CNN de Omniglot, bloques {conv 3x3, batchnorm,
  relu, max-pool 2x2}; 28x28 tras 4 bloques da un mapa 1x1x64.
- ``MlpEmbedConfig``: pila afín-relu para datos sintéticos.
- ``PixelEmbedConfig``: sin parámetros, aplana los píxeles crudos.
"""

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Tuple, Union

import numpy as np

from matchkit.errores import ConfigError, ShapeError
from matchkit.modelos.lstm import LstmCellParams, init_lstm_cell
from matchkit.modelos.parametros import ModelParams, RunningStats, glorot_uniform
from matchkit.nucleo import operaciones as ops
from matchkit.nucleo.tensor import Tensor

if TYPE_CHECKING:
    from matchkit.modelos.fce import FceConfig

logger = logging.getLogger(__name__)

ATTENTION_MODES = ("softmax_cosine", "knn", "kde")
DTYPES = {"float64": np.float64, "float32": np.float32}


@dataclass(frozen=True)
class ConvEmbedConfig:
    num_blocks: int = 4
    filters: int = 64
    input_size: int = 28
    in_channels: int = 1
    kernel: int = 3

    def __post_init__(self):
        if self.kernel != 3:
            raise ConfigError("La CNN de embedding solo admite núcleos 3x3")
        if min(self.num_blocks, self.filters, self.input_size, self.in_channels) < 1:
            raise ConfigError(f"ConvEmbedConfig con valores no positivos: {self}")
        if self.feature_map_size < 1:
            raise ConfigError(
                f"{self.num_blocks} bloques reducen {self.input_size}x{self.input_size} "
                "a un mapa vacío"
            )

    @property
    def feature_map_size(self) -> int:
        lado = self.input_size
        for _ in range(self.num_blocks):
            lado //= 2
        return lado

    @property
    def output_dim(self) -> int:
        return self.filters * self.feature_map_size**2


@dataclass(frozen=True)
class MlpEmbedConfig:
    input_dim: int = 16
    hidden_dims: Tuple[int, ...] = (64,)
    output_dim: int = 16
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.activation != "relu":
            raise ConfigError(f"Activación no soportada: {self.activation}")
        if min((self.input_dim, self.output_dim) + self.hidden_dims) < 1:
            raise ConfigError(f"MlpEmbedConfig con dimensiones no positivas: {self}")

    @property
    def layer_dims(self) -> Tuple[int, ...]:
        return (self.input_dim,) + self.hidden_dims + (self.output_dim,)


@dataclass(frozen=True)
class PixelEmbedConfig:
    input_shape: Tuple[int, ...] = (28, 28)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))

    @property
    def output_dim(self) -> int:
        return int(np.prod(self.input_shape))


EncoderConfig = Union[ConvEmbedConfig, MlpEmbedConfig, PixelEmbedConfig]


@dataclass(frozen=True)
class ModelConfig:
    """Codificador compartido, FCE opcional y núcleo de atención"""

    encoder: EncoderConfig = field(default_factory=ConvEmbedConfig)
    fce: Optional["FceConfig"] = None
    attention: str = "softmax_cosine"
    knn_b: int = 0
    kde_bandwidth: float = 1.0
    dtype: str = "float64"

    def __post_init__(self):
        if self.attention not in ATTENTION_MODES:
            raise ConfigError(f"Modo de atención desconocido: {self.attention}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype no soportado: {self.dtype}")
        if self.kde_bandwidth <= 0:
            raise ConfigError("kde_bandwidth debe ser positivo")
        if self.knn_b < 0:
            raise ConfigError("knn_b no puede ser negativo")
        if self.fce is not None and isinstance(self.encoder, PixelEmbedConfig):
            raise ConfigError("FCE requiere un codificador entrenable")

    @property
    def embedding_dim(self) -> int:
        return self.encoder.output_dim

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]


def _como_modelo(config) -> ModelConfig:
    return config if isinstance(config, ModelConfig) else ModelConfig(encoder=config)


# ----------------------------------------------------------------------
# Inicialización
# ----------------------------------------------------------------------
def init_params(config, seed: int, dtype=None) -> ModelParams:
    """Parámetros deterministas dada la semilla.

    Conv/afines: Glorot uniforme; batchnorm gamma=1, beta=0 (estadísticas
    media 0, varianza 1); LSTM: sesgo de olvido 1, resto 0.
    """
    modelo = _como_modelo(config)
    dtype = dtype or modelo.np_dtype
    rng = np.random.default_rng(seed)
    params = ModelParams()
    encoder = modelo.encoder

    if isinstance(encoder, ConvEmbedConfig):
        canales = encoder.in_channels
        for b in range(encoder.num_blocks):
            fan_in, fan_out = canales * 9, encoder.filters * 9
            params.add(
                f"enc.b{b}.conv.w",
                glorot_uniform(rng, (encoder.filters, canales, 3, 3), fan_in, fan_out, dtype),
            )
            params.add(f"enc.b{b}.bn.gamma", np.ones(encoder.filters, dtype))
            params.add(f"enc.b{b}.bn.beta", np.zeros(encoder.filters, dtype))
            params.add_buffer(f"enc.b{b}.bn", RunningStats.fresh(encoder.filters, dtype))
            canales = encoder.filters
    elif isinstance(encoder, MlpEmbedConfig):
        dims = encoder.layer_dims
        for capa, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            params.add(f"enc.l{capa}.w", glorot_uniform(rng, (d_in, d_out), d_in, d_out, dtype))
            params.add(f"enc.l{capa}.b", np.zeros(d_out, dtype))

    if modelo.fce is not None:
        d = modelo.embedding_dim
        for celda in fce_cells(d):
            init_lstm_cell(params, celda, rng, dtype)

    logger.debug(f"Parámetros inicializados: {len(params)} tensores, {params.num_values} valores")
    return params


def fce_cells(d: int):
    """Celdas de las FCE: codificador bidireccional y lector con atención"""
    return (
        LstmCellParams("fce.fwd", d_in=d, d_rec=d, d_h=d),
        LstmCellParams("fce.bwd", d_in=d, d_rec=d, d_h=d),
        LstmCellParams("fce.att", d_in=d, d_rec=2 * d, d_h=d),
    )


# ----------------------------------------------------------------------
# Pasadas hacia delante
# ----------------------------------------------------------------------
def _entrada(x, params: ModelParams) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = next((t.dtype for _, t in params.items()), np.float64)
    return Tensor(np.asarray(x), dtype=dtype)


def embed_conv(
    params: ModelParams,
    images,
    mode: str = "eval",
    config: ConvEmbedConfig = ConvEmbedConfig(),
) -> Tensor:
    """``[B,1,28,28] -> [B,64]`` con el orden conv → batchnorm → relu → pool"""
    x = _entrada(images, params)
    lado, canales = config.input_size, config.in_channels
    if x.ndim == 3 and canales == 1:
        x = ops.expand_dims(x, 1)
    if x.ndim != 4 or x.shape[1:] != (canales, lado, lado):
        raise ShapeError(
            f"embed_conv espera [B,{canales},{lado},{lado}], recibido {tuple(x.shape)}"
        )
    for b in range(config.num_blocks):
        x = ops.conv2d(x, params[f"enc.b{b}.conv.w"])
        x = ops.batchnorm(
            x,
            params[f"enc.b{b}.bn.gamma"],
            params[f"enc.b{b}.bn.beta"],
            mode=mode,
            running_stats=params.buffers[f"enc.b{b}.bn"],
        )
        x = ops.relu(x)
        x = ops.maxpool2x2(x, ceil_mode=False)
    return ops.reshape(x, (x.shape[0], config.output_dim))


def embed_mlp(params: ModelParams, x, config: Optional[MlpEmbedConfig] = None) -> Tensor:
    """Pila afín-relu; la última capa es lineal"""
    h = _entrada(x, params)
    if h.ndim == 1:
        h = ops.expand_dims(h, 0)
    capas = (
        len(config.layer_dims) - 1
        if config is not None
        else len([n for n in params if n.startswith("enc.l") and n.endswith(".w")])
    )
    entrada = params["enc.l0.w"].shape[0]
    if h.ndim != 2 or h.shape[1] != entrada:
        raise ShapeError(f"embed_mlp espera [B,{entrada}], recibido {tuple(h.shape)}")
    for capa in range(capas):
        h = ops.add(ops.matmul(h, params[f"enc.l{capa}.w"]), params[f"enc.l{capa}.b"])
        if capa < capas - 1:
            h = ops.relu(h)
    return h


def embed_pixels(x, config: PixelEmbedConfig, dtype=np.float64) -> Tensor:
    arr = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=dtype)
    if arr.shape[1:] != config.input_shape:
        raise ShapeError(f"Se esperaban ejemplos {config.input_shape}, recibido {arr.shape[1:]}")
    return Tensor(arr.reshape(arr.shape[0], -1))


def embed(params: ModelParams, x, config, mode: str = "eval") -> Tensor:
    """Despacha al codificador configurado"""
    encoder = _como_modelo(config).encoder
    if isinstance(encoder, ConvEmbedConfig):
        return embed_conv(params, x, mode=mode, config=encoder)
    if isinstance(encoder, MlpEmbedConfig):
        return embed_mlp(params, x, config=encoder)
    return embed_pixels(x, encoder, dtype=_como_modelo(config).np_dtype)
