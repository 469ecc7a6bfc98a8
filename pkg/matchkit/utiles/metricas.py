"""
Registro de métricas de entrenamiento: líneas ``step<TAB>loss<TAB>eval_acc``
"""

import math
from pathlib import Path
from typing import Optional, Union

import pandas as pd

from matchkit.errores import DataError

COLUMNAS = ("step", "loss", "eval_acc")


def format_metrics_line(step: int, loss: float, eval_acc: Optional[float] = None) -> str:
    acc = "nan" if eval_acc is None or math.isnan(eval_acc) else repr(float(eval_acc))
    return f"{step}\t{float(loss)!r}\t{acc}\n"


def append_metrics(
    path: Union[str, Path], step: int, loss: float, eval_acc: Optional[float] = None
):
    """Añade una línea al registro (solo anexado)"""
    with open(path, "a", encoding="utf-8") as f:
        f.write(format_metrics_line(step, loss, eval_acc))


def truncate_metrics(path: Union[str, Path], hasta_step: int) -> int:
    """Descarta las líneas posteriores a ``hasta_step`` (reanudación); devuelve las conservadas"""
    path = Path(path)
    if not path.exists():
        return 0
    lineas = path.read_text(encoding="utf-8").splitlines(keepends=True)
    conservadas = [l for l in lineas if l.strip() and int(l.split("\t", 1)[0]) <= hasta_step]
    path.write_text("".join(conservadas), encoding="utf-8")
    return len(conservadas)


def read_metrics(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"No existe el registro de métricas: {path}")
    if path.stat().st_size == 0:
        return _vacio()
    try:
        df = pd.read_csv(path, sep="\t", header=None, names=list(COLUMNAS), na_values=["nan"])
    except (pd.errors.ParserError, ValueError) as e:
        raise DataError(f"Registro de métricas mal formado {path}: {e}") from e
    if df.empty:
        return _vacio()
    return df.astype({"step": "int64", "loss": "float64", "eval_acc": "float64"})


def summarize_metrics(df: pd.DataFrame) -> dict:
    """Pérdida final, media de las últimas 100 y mejor exactitud de evaluación"""
    if df.empty:
        raise DataError("El registro de métricas está vacío")
    evaluados = df.dropna(subset=["eval_acc"])
    mejor = evaluados.loc[evaluados["eval_acc"].idxmax()] if not evaluados.empty else None
    return {
        "steps": int(df["step"].iloc[-1]),
        "final_loss": float(df["loss"].iloc[-1]),
        "loss_last100": float(df["loss"].tail(100).mean()),
        "best_eval_acc": float(mejor["eval_acc"]) if mejor is not None else float("nan"),
        "best_eval_step": int(mejor["step"]) if mejor is not None else -1,
    }


def _vacio() -> pd.DataFrame:
    return pd.DataFrame(
        {
            "step": pd.Series(dtype="int64"),
            "loss": pd.Series(dtype="float64"),
            "eval_acc": pd.Series(dtype="float64"),
        }
    )
