#!/usr/bin/env python3
"""
Experimento 2: comparación de métodos sobre el conjunto sintético

Red de emparejamiento entrenada frente al emparejador de vectores crudos y
la línea base de clasificación, en clases no vistas.
"""
import logging
from datetime import datetime
from pathlib import Path
from typing import Dict, List

import pandas as pd

from matchkit.configuracion import eval_threads, load_config
from matchkit.datos.conjuntos import dataset_from_config
from matchkit.datos.episodios import split_classes
from matchkit.entrenamiento.baselines import evaluate_baseline_cosine, train_baseline_classifier
from matchkit.entrenamiento.entrenador import train_matching_net
from matchkit.entrenamiento.evaluacion import EvalReport, evaluate, evaluate_pixels
from matchkit.utiles.logging_config import setup_logging

logger = logging.getLogger(__name__)


class SyntheticComparison:
    """Entrena y evalúa los métodos sobre la misma partición y las mismas semillas"""

    def __init__(self, config_path: Path, output_dir: Path):
        self.config = load_config(config_path)
        self.output_dir = Path(output_dir)
        self.dataset = dataset_from_config(self.config.data)
        self.split = split_classes(self.dataset, self.config.data.n_train, self.config.data.split_seed)
        self.threads = eval_threads()
        self.results: Dict[str, EvalReport] = {}

    def _tarea(self):
        ev = self.config.evaluation
        return (self.dataset, self.split.test_class_ids, ev.ways, ev.shots, ev.episodes, ev.seed)

    def run_pixels(self) -> EvalReport:
        logger.info("Emparejador sobre vectores crudos...")
        self.results["pixeles"] = evaluate_pixels(*self._tarea(), threads=self.threads)
        return self.results["pixeles"]

    def run_matching(self) -> EvalReport:
        logger.info("Meta-entrenando la red de emparejamiento...")
        resultado = train_matching_net(
            self.config, self.dataset, self.split,
            out_dir=self.output_dir / "matching", threads=self.threads,
        )
        self.results["matching"] = evaluate(
            resultado.params, *self._tarea(), config=self.config.model, threads=self.threads
        )
        return self.results["matching"]

    def run_baseline(self) -> EvalReport:
        logger.info("Entrenando la línea base de clasificación...")
        base = self.config.baseline
        params = train_baseline_classifier(
            self.dataset, self.split.train_class_ids, base.epochs, self.config.model,
            batch_size=base.batch_size, lr=base.lr, seed=base.seed,
        )
        self.results["baseline-cosine"] = evaluate_baseline_cosine(
            params, *self._tarea(), model=self.config.model, threads=self.threads
        )
        return self.results["baseline-cosine"]

    def summary(self) -> pd.DataFrame:
        filas: List[Dict] = [
            {
                "metodo": nombre,
                "ways": informe.n_way,
                "shots": informe.k_shot,
                "episodios": informe.n_episodes,
                "exactitud": informe.accuracy,
                "ic95": informe.ci_halfwidth,
            }
            for nombre, informe in self.results.items()
        ]
        return pd.DataFrame(filas).sort_values("exactitud", ascending=False)


def main():
    """Función principal del experimento"""
    setup_logging()
    base_dir = Path("Experimentos/2_Sintetico")
    output_dir = base_dir / "output" / datetime.now().strftime("%Y%m%d_%H%M%S")
    output_dir.mkdir(parents=True, exist_ok=True)

    comparacion = SyntheticComparison(base_dir / "config" / "sintetico.yaml", output_dir)
    comparacion.run_pixels()
    comparacion.run_matching()
    comparacion.run_baseline()

    tabla = comparacion.summary()
    tabla.to_csv(output_dir / "comparacion.csv", index=False)

    print("\n" + "=" * 70)
    print("RESUMEN: COMPARACIÓN DE MÉTODOS (CLASES NO VISTAS)")
    print("=" * 70)
    for fila in tabla.itertuples():
        print(f"  {fila.metodo:<16} {fila.exactitud:.4f} ±{fila.ic95:.4f}  (n={fila.episodios})")
    ventaja = comparacion.results["matching"].accuracy - comparacion.results["pixeles"].accuracy
    print(f"\nVentaja sobre vectores crudos: {ventaja:+.4f}")
    print(f"Resultados en: {output_dir}")
    print("=" * 70)


if __name__ == "__main__":
    main()
