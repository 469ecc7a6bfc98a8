"""
Tensor denso con diferenciación en modo reverso.

Cada operación diferenciable crea un nodo nuevo que guarda sus padres y una
función de retroceso; ``Tensor.backward`` construye el ``ComputeGraph`` desde
la pérdida escalar y lo recorre una sola vez. Los grafos son dinámicos: se
graban en cada pasada hacia delante.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from matchkit.errores import GraphConsumedError, NumericError, ShapeError

logger = logging.getLogger(__name__)

DTYPE_POR_DEFECTO = np.float64

# Recibe el gradiente de la salida y devuelve uno por padre (None = sin gradiente)
Retroceso = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """Arreglo denso con seguimiento opcional de gradiente"""

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        dtype=None,
        _padres: Tuple["Tensor", ...] = (),
        _op: str = "hoja",
        _retro: Optional[Retroceso] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype.kind == "f" else DTYPE_POR_DEFECTO
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._padres = _padres
        self._op = _op
        self._retro = _retro
        self._consumido = False

    # ------------------------------------------------------------------
    # Propiedades básicas
    # ------------------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._padres

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        """Misma memoria, sin seguimiento de gradiente"""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return (
            f"Tensor(shape={self.shape}, dtype={self.dtype}, "
            f"requires_grad={self.requires_grad}, op={self._op})"
        )

    def __len__(self):
        return self.shape[0]

    # ------------------------------------------------------------------
    # Retropropagación
    # ------------------------------------------------------------------
    def backward(self) -> "ComputeGraph":
        """Acumula en ``.grad`` de cada hoja rastreada el gradiente de esta pérdida"""
        if self.data.size != 1:
            raise ShapeError(f"backward requiere una pérdida escalar, forma {self.shape}")

        grafo = ComputeGraph.build(self)
        if any(nodo._consumido for nodo in grafo.tensores if not nodo.is_leaf):
            raise GraphConsumedError(
                "El grafo ya fue consumido por un backward previo; "
                "recalcula la pasada hacia delante"
            )

        grads: Dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for nodo in reversed(grafo.tensores):
            g = grads.pop(id(nodo), None)
            if g is None:
                continue
            if nodo.is_leaf:
                if nodo.requires_grad:
                    nodo.grad = g.copy() if nodo.grad is None else nodo.grad + g
                continue
            for padre, gp in zip(nodo._padres, nodo._retro(g)):
                if gp is None or not padre.requires_grad:
                    continue
                previo = grads.get(id(padre))
                grads[id(padre)] = gp if previo is None else previo + gp

        for nodo in grafo.tensores:
            if not nodo.is_leaf:
                nodo._consumido = True
                nodo._retro = None
        return grafo

    # ------------------------------------------------------------------
    # Azúcar sintáctico (delegado en operaciones)
    # ------------------------------------------------------------------
    def __add__(self, other):
        return operaciones.add(self, other)

    def __radd__(self, other):
        return operaciones.add(other, self)

    def __sub__(self, other):
        return operaciones.sub(self, other)

    def __rsub__(self, other):
        return operaciones.sub(other, self)

    def __mul__(self, other):
        return operaciones.mul(self, other)

    def __rmul__(self, other):
        return operaciones.mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("solo se admite división por escalares constantes")
        return operaciones.mul(self, 1.0 / other)

    def __neg__(self):
        return operaciones.mul(self, -1.0)

    def __matmul__(self, other):
        return operaciones.matmul(self, other)

    def __getitem__(self, index):
        return operaciones.take(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return operaciones.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return operaciones.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return operaciones.reshape(self, shape)

    @property
    def T(self):
        return operaciones.transpose(self)


def as_tensor(value, dtype=None) -> Tensor:
    """Envuelve constantes en un Tensor sin gradiente"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False, dtype=dtype)


def nodo(
    data: np.ndarray,
    padres: Sequence[Tensor],
    op: str,
    retro: Retroceso,
) -> Tensor:
    """Crea el resultado de una operación y lo engancha al grafo si hace falta"""
    if not np.all(np.isfinite(data)):
        raise NumericError(f"Valores no finitos tras la operación '{op}'")
    if not any(p.requires_grad for p in padres):
        return Tensor(data, requires_grad=False, dtype=data.dtype)
    return Tensor(
        data,
        requires_grad=True,
        dtype=data.dtype,
        _padres=tuple(padres),
        _op=op,
        _retro=retro,
    )


@dataclass
class NodeRecord:
    """Registro de un nodo: identificador, operación y entradas"""

    node_id: int
    op: str
    inputs: Tuple[int, ...]


@dataclass
class ComputeGraph:
    """Grafo acíclico en orden topológico (las entradas antes que las salidas)"""

    tensores: List[Tensor] = field(default_factory=list)
    registros: List[NodeRecord] = field(default_factory=list)

    @classmethod
    def build(cls, raiz: Tensor) -> "ComputeGraph":
        # DFS iterativo: las recurrencias desenrolladas exceden el límite de recursión
        orden: List[Tensor] = []
        visitados = set()
        pila: List[Tuple[Tensor, bool]] = [(raiz, False)]
        while pila:
            t, expandido = pila.pop()
            if expandido:
                orden.append(t)
                continue
            if id(t) in visitados:
                continue
            visitados.add(id(t))
            pila.append((t, True))
            for padre in t._padres:
                if id(padre) not in visitados:
                    pila.append((padre, False))

        ids = {id(t): i for i, t in enumerate(orden)}
        registros = [
            NodeRecord(i, t._op, tuple(ids[id(p)] for p in t._padres))
            for i, t in enumerate(orden)
        ]
        return cls(tensores=orden, registros=registros)

    @property
    def topological_order(self) -> List[int]:
        """Identificadores de nodo en orden de construcción (diagnóstico; backward recorre el inverso)"""
        return [r.node_id for r in self.registros]

    def __len__(self):
        return len(self.tensores)


# Importación al final: operaciones necesita la clase Tensor ya definida
from matchkit.nucleo import operaciones  # noqa: E402
