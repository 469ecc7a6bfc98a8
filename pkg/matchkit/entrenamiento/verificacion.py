"""
Verificación de gradientes de la canalización completa (codificador, FCE,
atención y pérdida) contra diferencias finitas en doble precisión.
"""

import logging
from contextlib import nullcontext

import numpy as np

from matchkit.datos.conjuntos import gen_synthetic
from matchkit.datos.episodios import sample_episode
from matchkit.errores import ConfigError
from matchkit.modelos.codificadores import ConvEmbedConfig, MlpEmbedConfig, ModelConfig, init_params
from matchkit.modelos.emparejador import episode_nll
from matchkit.modelos.fce import FceConfig
from matchkit.nucleo.gradcheck import GradcheckReport, check_gradients
from matchkit.nucleo.operaciones import perturbed_backward

logger = logging.getLogger(__name__)

DIMENSION_MAXIMA = 32
REGLA_ALTERADA = "relu"


def gradcheck_pipeline(
    dim: int = 8,
    ways: int = 2,
    shots: int = 1,
    fce: bool = False,
    K: int = 2,
    seed: int = 0,
    inject_bug: bool = False,
    tolerance: float = 1e-4,
    batch_per_class: int = 1,
    encoder: str = "mlp",
) -> GradcheckReport:
    """Error relativo máximo por tensor de parámetros en un episodio pequeño.

    ``encoder="conv"`` usa una CNN de dos bloques sobre imágenes 4x4.
    ``inject_bug`` invierte el signo de la regla de retroceso de relu.
    """
    if not 1 <= dim <= DIMENSION_MAXIMA:
        raise ConfigError(f"gradcheck admite 1 <= d <= {DIMENSION_MAXIMA}, recibido {dim}")
    if encoder == "mlp":
        codificador = MlpEmbedConfig(input_dim=dim, hidden_dims=(dim,), output_dim=dim)
    elif encoder == "conv":
        codificador = ConvEmbedConfig(num_blocks=2, filters=dim, input_size=4)
    else:
        raise ConfigError(f"Codificador desconocido para gradcheck: {encoder}")
    modelo = ModelConfig(encoder=codificador, fce=FceConfig(K=K) if fce else None)

    por_clase = shots + batch_per_class
    datos = gen_synthetic(ways, 16 if encoder == "conv" else dim, 0.5, seed, examples_per_class=por_clase)
    episodio = sample_episode(
        datos, range(ways), ways, shots, batch_per_class, np.random.default_rng(seed)
    )
    if encoder == "conv":
        episodio.support_x = episodio.support_x.reshape(-1, 4, 4)
        episodio.batch_x = episodio.batch_x.reshape(-1, 4, 4)

    params = init_params(modelo, seed, dtype=np.float64)
    contexto = perturbed_backward(REGLA_ALTERADA) if inject_bug else nullcontext()
    with contexto:
        informe = check_gradients(
            lambda: episode_nll(params, episodio, config=modelo, mode="train"),
            dict(params.items()),
            tolerance=tolerance,
        )
    logger.info(
        f"gradcheck d={dim} {ways}-way {shots}-shot fce={fce}: peor "
        f"{informe.worst} ({informe.errors[informe.worst]:.3e})"
    )
    return informe
