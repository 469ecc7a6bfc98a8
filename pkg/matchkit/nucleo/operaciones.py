"""
Primitivas diferenciables sobre ``Tensor``.

Cada primitiva calcula la pasada hacia delante con numpy/scipy y registra su
regla de retroceso. Todas se validan contra diferencias finitas centrales en
``tests/test_operaciones.py``.
"""

import contextlib
import contextvars
from typing import Iterator, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from matchkit.errores import NumericError, ShapeError
from matchkit.nucleo.tensor import Tensor, as_tensor, nodo

Axis = Union[None, int, Tuple[int, ...]]

COSINE_EPS = 1e-8
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LOG_FLOOR = 1e-12

# Reglas de retroceso alteradas a propósito (control negativo del gradcheck).
# ContextVar: el estado es local a cada hilo/contexto, nunca global compartido.
_REGLAS_ALTERADAS: contextvars.ContextVar = contextvars.ContextVar(
    "reglas_alteradas", default=frozenset()
)


@contextlib.contextmanager
def perturbed_backward(*ops: str) -> Iterator[None]:
    """Invierte el signo de la regla de retroceso de las operaciones indicadas"""
    token = _REGLAS_ALTERADAS.set(frozenset(ops) | _REGLAS_ALTERADAS.get())
    try:
        yield
    finally:
        _REGLAS_ALTERADAS.reset(token)


def _signo(op: str) -> float:
    return -1.0 if op in _REGLAS_ALTERADAS.get() else 1.0


def _reducir_a(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Suma el gradiente sobre los ejes difundidos hasta recuperar ``shape``"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for eje, extension in enumerate(shape):
        if extension == 1 and grad.shape[eje] != 1:
            grad = grad.sum(axis=eje, keepdims=True)
    return grad


def _par(a, b) -> Tuple[Tensor, Tensor]:
    """Convierte constantes al dtype del otro operando (float32 no se promueve)"""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, as_tensor(b, dtype=a.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return as_tensor(a, dtype=b.dtype), b
    return as_tensor(a), as_tensor(b)


def _ejes(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


# ----------------------------------------------------------------------
# Aritmética elemento a elemento
# ----------------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _par(a, b)
    out = a.data + b.data

    def retro(g):
        return _reducir_a(g, a.shape), _reducir_a(g, b.shape)

    return nodo(out, (a, b), "add", retro)


def sub(a, b) -> Tensor:
    a, b = _par(a, b)
    out = a.data - b.data

    def retro(g):
        return _reducir_a(g, a.shape), _reducir_a(-g, b.shape)

    return nodo(out, (a, b), "sub", retro)


def mul(a, b) -> Tensor:
    a, b = _par(a, b)
    out = a.data * b.data

    def retro(g):
        return _reducir_a(g * b.data, a.shape), _reducir_a(g * a.data, b.shape)

    return nodo(out, (a, b), "mul", retro)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mascara = x.data > 0
    signo = _signo("relu")

    def retro(g):
        return (signo * g * mascara,)

    return nodo(np.where(mascara, x.data, 0.0).astype(x.dtype), (x,), "relu", retro)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def retro(g):
        return (g * (1.0 - out**2),)

    return nodo(out, (x,), "tanh", retro)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = special.expit(x.data)

    def retro(g):
        return (g * out * (1.0 - out),)

    return nodo(out, (x,), "sigmoid", retro)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def retro(g):
        return (g * out,)

    return nodo(out, (x,), "exp", retro)


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericError("log requiere entradas estrictamente positivas")
    out = np.log(x.data)

    def retro(g):
        return (g / x.data,)

    return nodo(out, (x,), "log", retro)


# ----------------------------------------------------------------------
# Álgebra lineal y manipulación de forma
# ----------------------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul admite 1-D/2-D, recibido {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: dimensiones internas {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def retro(g):
        a2 = a.data.reshape(1, -1) if a.ndim == 1 else a.data
        b2 = b.data.reshape(-1, 1) if b.ndim == 1 else b.data
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        return (g2 @ b2.T).reshape(a.shape), (a2.T @ g2).reshape(b.shape)

    return nodo(out, (a, b), "matmul", retro)


def transpose(x, axes: Optional[Sequence[int]] = None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inversa = tuple(np.argsort(axes))

    def retro(g):
        return (np.transpose(g, inversa),)

    return nodo(np.transpose(x.data, axes), (x,), "transpose", retro)


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    original = x.shape

    def retro(g):
        return (g.reshape(original),)

    return nodo(x.data.reshape(tuple(shape)), (x,), "reshape", retro)


def take(x, index) -> Tensor:
    """Indexado básico o avanzado; el gradiente se acumula con ``np.add.at``"""
    x = as_tensor(x)

    def retro(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return nodo(np.array(x.data[index]), (x,), "take", retro)


def concat(tensores: Sequence, axis: int = 0) -> Tensor:
    tensores = [as_tensor(t) for t in tensores]
    if not tensores:
        raise ShapeError("concat requiere al menos un tensor")
    out = np.concatenate([t.data for t in tensores], axis=axis)
    cortes = np.cumsum([t.shape[axis] for t in tensores])[:-1]

    def retro(g):
        return tuple(np.split(g, cortes, axis=axis))

    return nodo(out, tuple(tensores), "concat", retro)


def stack(tensores: Sequence, axis: int = 0) -> Tensor:
    tensores = [as_tensor(t) for t in tensores]
    return concat([expand_dims(t, axis) for t in tensores], axis=axis)


def expand_dims(x, axis: int) -> Tensor:
    x = as_tensor(x)
    forma = list(x.shape)
    forma.insert(axis % (x.ndim + 1), 1)
    return reshape(x, forma)


def sum(x, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)
    ejes = _ejes(axis, x.ndim)

    def retro(g):
        if not keepdims:
            g = np.expand_dims(g, ejes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return nodo(np.asarray(out), (x,), "sum", retro)


def mean(x, axis: Axis = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    cuenta = int(np.prod([x.shape[e] for e in _ejes(axis, x.ndim)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / cuenta)


# ----------------------------------------------------------------------
# Normalizaciones y similitudes
# ----------------------------------------------------------------------
def softmax(x, axis: int = -1) -> Tensor:
    """Softmax estable (se resta el máximo) a lo largo de ``axis``"""
    x = as_tensor(x)
    if x.size == 0:
        raise ShapeError("softmax sobre un tensor vacío")
    out = special.softmax(x.data, axis=axis)

    def retro(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return nodo(out, (x,), "softmax", retro)


def pairwise_cosine(a, b, eps: float = COSINE_EPS) -> Tensor:
    """Similitud coseno entre filas: ``[q,d] x [k,d] -> [q,k]``

    Las normas se acotan inferiormente por ``eps``, de modo que un vector nulo
    da similitud 0 en lugar de NaN.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"pairwise_cosine: formas {a.shape} y {b.shape}")
    norma_a = np.linalg.norm(a.data, axis=1)
    norma_b = np.linalg.norm(b.data, axis=1)
    na = np.maximum(norma_a, eps)
    nb = np.maximum(norma_b, eps)
    producto = a.data @ b.data.T
    s = producto / (na[:, None] * nb[None, :])

    def retro(g):
        gs = g / (na[:, None] * nb[None, :])
        radial_a = np.where(norma_a > eps, np.sum(g * s, axis=1) / na, 0.0)
        radial_b = np.where(norma_b > eps, np.sum(g * s, axis=0) / nb, 0.0)
        ga = gs @ b.data - radial_a[:, None] * a.data / na[:, None]
        gb = gs.T @ a.data - radial_b[:, None] * b.data / nb[:, None]
        return ga, gb

    return nodo(s, (a, b), "pairwise_cosine", retro)


def cosine_similarity(a, b, eps: float = COSINE_EPS) -> Tensor:
    """a·b / (max(‖a‖,ε)·max(‖b‖,ε)) para dos vectores de igual dimensión"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape or a.size == 0:
        raise ShapeError(f"cosine_similarity: formas {a.shape} y {b.shape}")
    s = pairwise_cosine(reshape(a, (1, -1)), reshape(b, (1, -1)), eps=eps)
    return reshape(s, ())


def pairwise_sqdist(a, b) -> Tensor:
    """Distancia euclídea al cuadrado entre filas: ``[q,d] x [k,d] -> [q,k]``"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"pairwise_sqdist: formas {a.shape} y {b.shape}")
    diferencia = a.data[:, None, :] - b.data[None, :, :]
    out = np.sum(diferencia**2, axis=-1)

    def retro(g):
        ga = 2.0 * (g.sum(axis=1)[:, None] * a.data - g @ b.data)
        gb = 2.0 * (g.sum(axis=0)[:, None] * b.data - g.T @ a.data)
        return ga, gb

    return nodo(out, (a, b), "pairwise_sqdist", retro)


def nll(probs, targets, floor: float = LOG_FLOOR, stats=None) -> Tensor:
    """Media de −log p[y] sobre el lote; p se acota en ``floor``

    ``stats`` (opcional) debe exponer ``record(n)`` y recibe cuántas
    probabilidades verdaderas quedaron por debajo del umbral.
    """
    probs = as_tensor(probs)
    p2 = probs.data.reshape(1, -1) if probs.ndim == 1 else probs.data
    y = np.asarray(targets, dtype=np.int64).reshape(-1)
    if p2.ndim != 2 or y.shape[0] != p2.shape[0]:
        raise ShapeError(f"nll: probabilidades {probs.shape} y objetivos {y.shape}")
    filas = np.arange(y.shape[0])
    verdaderas = p2[filas, y]
    recortadas = verdaderas <= floor
    if stats is not None and np.any(recortadas):
        stats.record(int(np.sum(recortadas)))
    out = np.asarray(-np.mean(np.log(np.maximum(verdaderas, floor))), dtype=probs.dtype)

    def retro(g):
        gp = np.zeros_like(p2)
        gp[filas, y] = np.where(recortadas, 0.0, -1.0 / (y.shape[0] * verdaderas))
        return ((g * gp).reshape(probs.shape),)

    return nodo(out, (probs,), "nll", retro)


# ----------------------------------------------------------------------
# Capas convolucionales
# ----------------------------------------------------------------------
def conv2d(x, kernel) -> Tensor:
    """Convolución 3x3, paso 1, relleno 'same': ``[N,C,H,W] * [F,C,3,3] -> [N,F,H,W]``"""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d espera tensores 4-D, recibido {x.shape} y {kernel.shape}")
    if kernel.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d solo admite núcleos 3x3, recibido {kernel.shape[2:]}")
    if x.shape[1] != kernel.shape[1]:
        raise ShapeError(
            f"conv2d: la entrada tiene {x.shape[1]} canales y el núcleo {kernel.shape[1]}"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ventanas = sliding_window_view(xp, (3, 3), axis=(2, 3))  # [N,C,H,W,3,3]
    out = np.tensordot(ventanas, kernel.data, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def retro(g):
        gk = np.tensordot(g, ventanas, axes=([0, 2, 3], [0, 2, 3]))
        gp = np.pad(g, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ventanas_g = sliding_window_view(gp, (3, 3), axis=(2, 3))  # [N,F,H,W,3,3]
        volteado = kernel.data[:, :, ::-1, ::-1]
        gx = np.tensordot(ventanas_g, volteado, axes=([1, 4, 5], [0, 2, 3]))
        return np.ascontiguousarray(gx.transpose(0, 3, 1, 2)), gk

    return nodo(out, (x, kernel), "conv2d", retro)


def maxpool2x2(x, ceil_mode: bool = True) -> Tensor:
    """Max-pooling 2x2 con paso 2.

    ``ceil_mode=True`` rellena las extensiones impares con −∞ (salida ⌈H/2⌉);
    ``ceil_mode=False`` descarta la última fila/columna impar (salida ⌊H/2⌋).
    Los empates envían el gradiente al primer elemento en orden de filas.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"maxpool2x2 espera [N,C,H,W], recibido {x.shape}")
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise ShapeError("maxpool2x2 requiere extensiones espaciales >= 1")
    if ceil_mode:
        ho, wo = -(-h // 2), -(-w // 2)
        datos = np.pad(
            x.data,
            ((0, 0), (0, 0), (0, 2 * ho - h), (0, 2 * wo - w)),
            constant_values=-np.inf,
        )
    else:
        ho, wo = h // 2, w // 2
        if ho == 0 or wo == 0:
            raise ShapeError(f"maxpool2x2 sin relleno deja una salida vacía para {h}x{w}")
        datos = x.data[:, :, : 2 * ho, : 2 * wo]
    ventanas = datos.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5)
    ventanas = ventanas.reshape(n, c, ho, wo, 4)
    arg = np.argmax(ventanas, axis=-1)
    out = np.take_along_axis(ventanas, arg[..., None], axis=-1)[..., 0]

    def retro(g):
        gv = np.zeros((n, c, ho, wo, 4), dtype=g.dtype)
        np.put_along_axis(gv, arg[..., None], g[..., None], axis=-1)
        gv = gv.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        gv = gv.reshape(n, c, 2 * ho, 2 * wo)
        gx = np.zeros_like(x.data)
        hh, ww = min(h, 2 * ho), min(w, 2 * wo)
        gx[:, :, :hh, :ww] = gv[:, :, :hh, :ww]
        return (gx,)

    return nodo(np.ascontiguousarray(out), (x,), "maxpool2x2", retro)


def batchnorm(
    x,
    gamma,
    beta,
    mode: str = "train",
    running_stats=None,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Normalización por lotes sobre el eje de canales (eje 1).

    En modo ``train`` usa estadísticas del lote y actualiza ``running_stats``
    (objeto con arreglos ``mean`` y ``var``) con ``momentum``; en ``eval`` usa
    las estadísticas acumuladas y es un mapa afín determinista.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim < 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batchnorm: entrada {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    ejes = (0,) + tuple(range(2, x.ndim))
    forma_canal = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    g_c = gamma.data.reshape(forma_canal)

    if mode == "train":
        if x.shape[0] < 2:
            raise ShapeError("batchnorm en modo train requiere un lote de al menos 2 ejemplos")
        media = x.data.mean(axis=ejes)
        var = x.data.var(axis=ejes)
        if running_stats is not None:
            m = int(np.prod([x.shape[e] for e in ejes]))
            running_stats.mean[...] = (1 - momentum) * running_stats.mean + momentum * media
            running_stats.var[...] = (1 - momentum) * running_stats.var + momentum * var * m / (
                m - 1
            )
    elif mode == "eval":
        if running_stats is None:
            raise ShapeError("batchnorm en modo eval requiere estadísticas acumuladas")
        media = running_stats.mean
        var = running_stats.var
    else:
        raise ValueError(f"Modo de batchnorm desconocido: {mode}")

    inv = 1.0 / np.sqrt(var.reshape(forma_canal) + eps)
    xhat = (x.data - media.reshape(forma_canal)) * inv
    out = xhat * g_c + beta.data.reshape(forma_canal)

    def retro(g):
        g_gamma = np.sum(g * xhat, axis=ejes)
        g_beta = np.sum(g, axis=ejes)
        gxhat = g * g_c
        if mode == "train":
            m = int(np.prod([x.shape[e] for e in ejes]))
            gx = (
                inv
                / m
                * (
                    m * gxhat
                    - np.sum(gxhat, axis=ejes, keepdims=True)
                    - xhat * np.sum(gxhat * xhat, axis=ejes, keepdims=True)
                )
            )
        else:
            gx = gxhat * inv
        return gx, g_gamma, g_beta

    return nodo(out.astype(x.dtype), (x, gamma, beta), "batchnorm", retro)
