#!/usr/bin/env python3
"""
Configuración de la rejilla de tareas Omniglot (N-way, k-shot)

Parte de la configuración base y escribe una configuración por tarea,
con y sin incrustaciones de contexto completo.
"""
import logging
from pathlib import Path
from typing import Dict, List

import pandas as pd
import yaml

from matchkit.configuracion import config_from_dict, dump_config
from matchkit.utiles.logging_config import setup_logging

logger = logging.getLogger(__name__)

TAREAS = [(5, 1), (5, 5), (20, 1), (20, 5)]


class OmniglotExperimentSetup:
    """Genera las configuraciones de la rejilla de tareas"""

    def __init__(self, experiment_dir: Path):
        self.experiment_dir = Path(experiment_dir)
        self.config_dir = self.experiment_dir / "config"
        self.output_dir = self.experiment_dir / "output"

        for d in [self.config_dir, self.output_dir]:
            d.mkdir(parents=True, exist_ok=True)

        with open(self.config_dir / "omniglot.yaml", "r", encoding="utf-8") as f:
            self.base = yaml.safe_load(f)

    def task_config(self, ways: int, shots: int, fce: bool) -> Dict:
        documento = {seccion: dict(valores) for seccion, valores in self.base.items()}
        documento["model"] = dict(documento["model"], fce=dict(documento["model"].get("fce", {}), enabled=fce))
        documento["training"].update(ways=ways, shots=shots)
        documento["evaluation"].update(ways=ways, shots=shots)
        return documento

    def write_grid(self) -> List[Dict]:
        filas = []
        for ways, shots in TAREAS:
            for fce in (False, True):
                nombre = f"{ways}way_{shots}shot{'_fce' if fce else ''}"
                # valida antes de escribir
                config = config_from_dict(self.task_config(ways, shots, fce))
                ruta = dump_config(config, self.config_dir / "rejilla" / f"{nombre}.yaml")
                filas.append(
                    {"tarea": nombre, "ways": ways, "shots": shots, "fce": fce,
                     "config": str(ruta), "salida": str(self.output_dir / nombre)}
                )
                logger.info(f"✓ {ruta}")
        return filas


def main():
    setup_logging()
    setup = OmniglotExperimentSetup(Path("Experimentos/1_Omniglot"))
    filas = setup.write_grid()
    tabla = pd.DataFrame(filas)
    tabla.to_csv(setup.config_dir / "rejilla" / "tareas.csv", index=False)

    print("\n" + "=" * 70)
    print("REJILLA DE TAREAS OMNIGLOT")
    print("=" * 70)
    print(tabla[["tarea", "ways", "shots", "fce"]].to_string(index=False))
    print("\nPara cada tarea:")
    print("  matchkit train <config> --out <salida>")
    print("  matchkit eval --checkpoint <salida>/checkpoint.ckpt")
    print("=" * 70)


if __name__ == "__main__":
    main()
