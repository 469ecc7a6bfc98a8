"""
Bucle de meta-entrenamiento: un episodio por paso de gradiente.

Cada paso muestrea un episodio de las clases de entrenamiento, calcula
``episode_nll`` (con FCE si está habilitado), retropropaga y aplica Adam.
Periódicamente evalúa sobre clases de prueba con la misma tarea (N, k).
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from matchkit.configuracion import RunConfig, config_hash
from matchkit.datos.conjuntos import ClassDataset
from matchkit.datos.episodios import Episode, EpisodeSampler, SplitSpec
from matchkit.entrenamiento.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from matchkit.entrenamiento.evaluacion import EvalReport, evaluate
from matchkit.entrenamiento.optimizador import Adam
from matchkit.errores import ConfigError, DataError, NumericError
from matchkit.modelos.codificadores import init_params
from matchkit.modelos.emparejador import ClampCounter, episode_nll
from matchkit.modelos.parametros import ModelParams
from matchkit.utiles.metricas import append_metrics, truncate_metrics

logger = logging.getLogger(__name__)

CHECKPOINT = "checkpoint.ckpt"
DIAGNOSTICO = "diagnostico.ckpt"
METRICAS = "metrics.tsv"


@dataclass
class TrainResult:
    params: ModelParams
    episode: int
    losses: List[float] = field(default_factory=list)
    eval_reports: Dict[int, EvalReport] = field(default_factory=dict)
    checkpoint_path: Optional[Path] = None
    clamp_events: int = 0


def training_pool(dataset: ClassDataset, split: SplitSpec, class_subset: Optional[Sequence[str]]):
    """Clases de entrenamiento, opcionalmente restringidas a ``class_subset``"""
    pool = split.train_class_ids
    if class_subset is None:
        return pool
    ids = dataset.class_ids(class_subset)
    fuera = [dataset.class_names[c] for c in ids if c not in set(pool)]
    if fuera:
        raise ConfigError(f"training.class_subset incluye clases fuera de la partición de entrenamiento: {fuera[:3]}")
    return tuple(sorted(ids))


class MatchingTrainer:
    """Estado de entrenamiento: parámetros, Adam, muestreador y contador de episodios"""

    def __init__(
        self,
        config: RunConfig,
        dataset: ClassDataset,
        split: SplitSpec,
        out_dir: Optional[Path] = None,
        threads: int = 1,
    ):
        self.config = config
        self.dataset = dataset
        self.split = split
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.threads = threads
        self.hash = config_hash(config)

        entrenamiento = config.training
        self.model = config.model
        self.pool = training_pool(dataset, split, entrenamiento.class_subset)
        if len(self.pool) < entrenamiento.ways:
            raise DataError(
                f"La partición de entrenamiento tiene {len(self.pool)} clases, se piden {entrenamiento.ways}"
            )
        self._prueba = frozenset(split.test_class_ids)
        self.params = init_params(self.model, entrenamiento.seed)
        self.optimizer = Adam(
            self.params,
            lr=entrenamiento.lr,
            beta1=entrenamiento.beta1,
            beta2=entrenamiento.beta2,
            eps=entrenamiento.adam_eps,
        )
        self.sampler = EpisodeSampler(
            dataset,
            self.pool,
            entrenamiento.ways,
            entrenamiento.shots,
            entrenamiento.batch_per_class,
            seed=[entrenamiento.seed, 1],
        )
        self.episode = 0
        self.clamps = ClampCounter()

    # ------------------------------------------------------------------
    def _verificar_pureza(self, episodio: Episode):
        filtradas = self._prueba.intersection(int(c) for c in episodio.class_ids)
        if filtradas:
            raise DataError(f"Clases de prueba en un episodio de entrenamiento: {sorted(filtradas)}")

    def step(self) -> float:
        episodio = self.sampler.sample()
        self._verificar_pureza(episodio)
        previas = self.clamps.count
        self.optimizer.zero_grad()
        try:
            perdida = episode_nll(
                self.params, episodio, config=self.model, mode="train", stats=self.clamps
            )
            perdida.backward()
            for nombre, t in self.params.items():
                if t.grad is not None and not np.all(np.isfinite(t.grad)):
                    raise NumericError(f"Gradiente no finito en {nombre}")
        except NumericError as e:
            ruta = self._diagnostico()
            raise NumericError(
                f"Entrenamiento abortado en el episodio {self.episode + 1}: {e}",
                checkpoint_path=str(ruta) if ruta else None,
            ) from e
        if self.clamps.count > previas:
            logger.warning(
                f"Episodio {self.episode + 1}: {self.clamps.count - previas} probabilidades "
                "verdaderas acotadas en 1e-12"
            )
        self.optimizer.step()
        self.episode += 1
        return perdida.item()

    def evaluate_now(self) -> EvalReport:
        entrenamiento = self.config.training
        return evaluate(
            self.params,
            self.dataset,
            self.split.test_class_ids,
            entrenamiento.ways,
            entrenamiento.shots,
            max(entrenamiento.eval_episodes, 1),
            self.config.evaluation.seed,
            config=self.model,
            batch_per_class=entrenamiento.batch_per_class,
            threads=self.threads,
        )

    # ------------------------------------------------------------------
    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            kind="matching",
            params=self.params,
            config=self.config.to_dict(),
            config_hash=self.hash,
            episode=self.episode,
            adam_t=self.optimizer.t,
            adam_m=self.optimizer.m,
            adam_v=self.optimizer.v,
            rng_state=self.sampler.state,
            dtype=self.model.dtype,
        )

    def save(self, nombre: str = CHECKPOINT) -> Optional[Path]:
        if self.out_dir is None:
            return None
        return save_checkpoint(self.checkpoint(), self.out_dir / nombre)

    def _diagnostico(self) -> Optional[Path]:
        try:
            ruta = self.save(DIAGNOSTICO)
        except (OSError, ValueError) as e:
            logger.error(f"✗ No se pudo guardar el checkpoint de diagnóstico: {e}")
            return None
        if ruta is not None:
            logger.error(f"✗ Checkpoint de diagnóstico guardado en {ruta}")
        return ruta

    def restore(self, ckpt: Checkpoint):
        if ckpt.kind != "matching":
            raise ConfigError(f"Se esperaba un checkpoint 'matching', recibido '{ckpt.kind}'")
        if ckpt.config_hash != self.hash:
            raise ConfigError("El checkpoint no corresponde a esta configuración")
        if set(ckpt.params.names()) != set(self.params.names()):
            raise ConfigError("Los parámetros del checkpoint no coinciden con el modelo")
        dtype = self.model.np_dtype
        self.params = ckpt.params.astype(dtype)
        self.optimizer = Adam(
            self.params,
            lr=self.optimizer.lr,
            beta1=self.optimizer.beta1,
            beta2=self.optimizer.beta2,
            eps=self.optimizer.eps,
        )
        self.optimizer.load_state(ckpt.adam_t, ckpt.adam_m, ckpt.adam_v)
        self.sampler.state = ckpt.rng_state
        self.episode = ckpt.episode
        logger.info(f"✓ Reanudando desde el episodio {self.episode}")

    # ------------------------------------------------------------------
    def _toca_evaluar(self) -> bool:
        entrenamiento = self.config.training
        if entrenamiento.eval_episodes == 0:
            return False
        if self.episode == entrenamiento.episodes_total:
            return True
        return entrenamiento.eval_every > 0 and self.episode % entrenamiento.eval_every == 0

    def run(self, stop_after: Optional[int] = None, progress: bool = False) -> TrainResult:
        """Entrena hasta ``episodes_total`` o, con ``stop_after``, durante ese número de pasos"""
        entrenamiento = self.config.training
        objetivo = entrenamiento.episodes_total
        if stop_after is not None:
            objetivo = min(objetivo, self.episode + stop_after)
        metricas = self.out_dir / METRICAS if self.out_dir is not None else None
        resultado = TrainResult(params=self.params, episode=self.episode)

        barra = tqdm(total=objetivo, initial=self.episode, disable=not progress, desc="Entrenamiento")
        while self.episode < objetivo:
            perdida = self.step()
            resultado.losses.append(perdida)
            acc = None
            if self._toca_evaluar():
                informe = self.evaluate_now()
                resultado.eval_reports[self.episode] = informe
                acc = informe.accuracy
                logger.info(f"Episodio {self.episode}: pérdida {perdida:.4f}, {informe.format()}")
            if metricas is not None:
                append_metrics(metricas, self.episode, perdida, acc)
            if entrenamiento.checkpoint_every and self.episode % entrenamiento.checkpoint_every == 0:
                self.save()
            barra.update(1)
            barra.set_postfix(loss=f"{perdida:.3f}")
        barra.close()

        resultado.params = self.params
        resultado.episode = self.episode
        resultado.checkpoint_path = self.save()
        resultado.clamp_events = self.clamps.events
        return resultado


def train_matching_net(
    config: RunConfig,
    dataset: ClassDataset,
    split: SplitSpec,
    *,
    out_dir: Optional[Path] = None,
    resume: bool = False,
    stop_after: Optional[int] = None,
    threads: int = 1,
    progress: bool = False,
) -> TrainResult:
    """Entrena una red de emparejamiento; con ``resume`` continúa desde ``out_dir``"""
    trainer = MatchingTrainer(config, dataset, split, out_dir=out_dir, threads=threads)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ruta = out_dir / CHECKPOINT
        if resume and ruta.exists():
            trainer.restore(load_checkpoint(ruta, expected_hash=trainer.hash))
            truncate_metrics(out_dir / METRICAS, trainer.episode)
        else:
            if resume:
                logger.warning(f"No hay checkpoint en {out_dir}; se entrena desde cero")
            (out_dir / METRICAS).write_text("", encoding="utf-8")
    return trainer.run(stop_after=stop_after, progress=progress)
