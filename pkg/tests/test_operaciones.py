"""
Primitivas: oráculos directos y gradientes contra diferencias finitas
"""

import numpy as np
import pytest
from scipy import special

from matchkit.errores import NumericError, ShapeError
from matchkit.modelos.parametros import RunningStats
from matchkit.nucleo import operaciones as ops
from matchkit.nucleo.gradcheck import check_gradients
from matchkit.nucleo.tensor import Tensor

TOLERANCIA = 1e-6


def _lejos_de_cero(rng, shape):
    return rng.uniform(0.2, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _verificar(funcion, *arreglos, seed=0):
    """Reduce la salida con pesos fijos y compara gradientes de todas las entradas"""
    tensores = {f"x{i}": Tensor(np.array(a, dtype=np.float64), requires_grad=True) for i, a in enumerate(arreglos)}
    salida = funcion(*tensores.values())
    pesos = np.random.default_rng(seed + 100).normal(size=salida.shape)

    def perdida():
        return ops.sum(ops.mul(funcion(*tensores.values()), pesos))

    informe = check_gradients(perdida, tensores)
    assert informe.passed, list(informe.lines())
    assert max(informe.errors.values()) < TOLERANCIA


# ----------------------------------------------------------------------
# Gradientes: cada primitiva sobre 20 tensores aleatorios
# ----------------------------------------------------------------------
def _separados(rng, shape):
    """Valores distintos entre sí por más de 0.05 (sin empates dentro del paso h)"""
    n = int(np.prod(shape))
    return (rng.permutation(n).reshape(shape) + rng.uniform(0.0, 0.5, size=shape)) * 0.1


def _bn_eval(rng):
    stats = RunningStats(rng.normal(size=3), rng.uniform(0.5, 2.0, size=3))
    return (
        lambda x, g, b: ops.batchnorm(x, g, b, mode="eval", running_stats=stats),
        [rng.normal(size=(2, 3, 2, 2)), rng.uniform(0.5, 1.5, size=3), rng.normal(size=3)],
    )


def _nll(rng):
    y = rng.integers(0, 3, size=4)
    return lambda z: ops.nll(ops.softmax(z, axis=1), y), [rng.normal(size=(4, 3))]


CASOS = {
    "add_mul_sub": lambda rng: (
        lambda a, b: ops.add(ops.mul(a, b), ops.sub(a, b)),
        [rng.normal(size=(3, 4)), rng.normal(size=(4,))],
    ),
    "relu": lambda rng: (ops.relu, [_lejos_de_cero(rng, (3, 5))]),
    "tanh": lambda rng: (ops.tanh, [rng.normal(size=(3, 5))]),
    "sigmoid": lambda rng: (ops.sigmoid, [rng.normal(size=(3, 5))]),
    "exp": lambda rng: (ops.exp, [rng.normal(size=(3, 5))]),
    "log": lambda rng: (ops.log, [rng.uniform(0.5, 2.0, size=(4,))]),
    "matmul": lambda rng: (ops.matmul, [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))]),
    "matmul_vector_matriz": lambda rng: (ops.matmul, [rng.normal(size=(4,)), rng.normal(size=(4, 2))]),
    "matmul_matriz_vector": lambda rng: (ops.matmul, [rng.normal(size=(3, 4)), rng.normal(size=(4,))]),
    "reshape_transpose": lambda rng: (
        lambda x: ops.transpose(ops.reshape(x, (3, 4))), [rng.normal(size=(2, 6))]
    ),
    "take": lambda rng: (lambda x: ops.take(x, np.array([2, 0, 2])), [rng.normal(size=(3, 2))]),
    "concat": lambda rng: (
        lambda a, b: ops.concat([a, b], axis=1), [rng.normal(size=(2, 3)), rng.normal(size=(2, 1))]
    ),
    "stack": lambda rng: (
        lambda a, b: ops.stack([a, b], axis=0), [rng.normal(size=(3,)), rng.normal(size=(3,))]
    ),
    "sum": lambda rng: (lambda x: ops.sum(x, axis=1), [rng.normal(size=(3, 4))]),
    "mean": lambda rng: (lambda x: ops.mean(x, axis=0, keepdims=True), [rng.normal(size=(3, 4))]),
    "softmax_filas": lambda rng: (lambda x: ops.softmax(x, axis=1), [rng.normal(size=(3, 5))]),
    "softmax_columnas": lambda rng: (lambda x: ops.softmax(x, axis=0), [rng.normal(size=(4, 2))]),
    "pairwise_cosine": lambda rng: (ops.pairwise_cosine, [rng.normal(size=(3, 4)), rng.normal(size=(5, 4))]),
    "pairwise_sqdist": lambda rng: (ops.pairwise_sqdist, [rng.normal(size=(3, 4)), rng.normal(size=(5, 4))]),
    "cosine_similarity": lambda rng: (ops.cosine_similarity, [rng.normal(size=4), rng.normal(size=4)]),
    "nll": _nll,
    "conv2d": lambda rng: (ops.conv2d, [rng.normal(size=(2, 2, 5, 4)), rng.normal(size=(3, 2, 3, 3))]),
    "maxpool_techo": lambda rng: (
        lambda x: ops.maxpool2x2(x, ceil_mode=True), [_separados(rng, (2, 2, 5, 5))]
    ),
    "maxpool_piso": lambda rng: (
        lambda x: ops.maxpool2x2(x, ceil_mode=False), [_separados(rng, (2, 2, 5, 5))]
    ),
    "batchnorm_train_mapas": lambda rng: (
        lambda x, g, b: ops.batchnorm(x, g, b, mode="train"),
        [rng.normal(size=(4, 3, 2, 2)), rng.uniform(0.5, 1.5, size=3), rng.normal(size=3)],
    ),
    "batchnorm_train_vectores": lambda rng: (
        lambda x, g, b: ops.batchnorm(x, g, b, mode="train"),
        [rng.normal(size=(6, 3)), rng.uniform(0.5, 1.5, size=3), rng.normal(size=3)],
    ),
    "batchnorm_eval": _bn_eval,
}


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("primitiva", sorted(CASOS))
def test_gradiente_contra_diferencias_finitas(primitiva, seed):
    rng = np.random.default_rng([seed, 17])
    funcion, arreglos = CASOS[primitiva](rng)
    _verificar(funcion, *arreglos, seed=seed)


# ----------------------------------------------------------------------
# Oráculos
# ----------------------------------------------------------------------
def _conv_ingenua(x, k):
    n, c, h, w = x.shape
    f = k.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((n, f, h, w))
    for a in range(n):
        for b in range(f):
            for i in range(h):
                for j in range(w):
                    out[a, b, i, j] = np.sum(xp[a, :, i : i + 3, j : j + 3] * k[b])
    return out


def test_conv2d_contra_bucles(rng):
    x = rng.normal(size=(2, 3, 6, 5))
    k = rng.normal(size=(4, 3, 3, 3))
    np.testing.assert_allclose(ops.conv2d(x, k).data, _conv_ingenua(x, k), atol=1e-12)


def _maxpool_ingenuo(x, ceil_mode):
    n, c, h, w = x.shape
    ho, wo = (-(-h // 2), -(-w // 2)) if ceil_mode else (h // 2, w // 2)
    out = np.empty((n, c, ho, wo))
    for a in range(n):
        for b in range(c):
            for i in range(ho):
                for j in range(wo):
                    out[a, b, i, j] = np.max(x[a, b, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2])
    return out


@pytest.mark.parametrize("seed", range(20))
def test_conv2d_contra_bucles_formas_aleatorias(seed):
    rng = np.random.default_rng(seed)
    n, c, f = rng.integers(1, 4, size=3)
    h, w = rng.integers(1, 9, size=2)
    x = rng.normal(size=(n, c, h, w))
    k = rng.normal(size=(f, c, 3, 3))
    np.testing.assert_allclose(ops.conv2d(x, k).data, _conv_ingenua(x, k), atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_maxpool_contra_bucles_6x6(seed):
    x = np.random.default_rng(seed).normal(size=(1, 1, 6, 6))
    for ceil_mode in (True, False):
        np.testing.assert_allclose(
            ops.maxpool2x2(x, ceil_mode=ceil_mode).data, _maxpool_ingenuo(x, ceil_mode), atol=1e-12
        )


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("ceil_mode", [True, False])
def test_maxpool_contra_bucles_formas_aleatorias(seed, ceil_mode):
    rng = np.random.default_rng([seed, 3])
    n, c = rng.integers(1, 4, size=2)
    h, w = rng.integers(2, 10, size=2)
    x = rng.normal(size=(n, c, h, w))
    np.testing.assert_allclose(
        ops.maxpool2x2(x, ceil_mode=ceil_mode).data, _maxpool_ingenuo(x, ceil_mode), atol=1e-12
    )


def test_conv2d_rechaza_canales_incompatibles(rng):
    with pytest.raises(ShapeError):
        ops.conv2d(rng.normal(size=(1, 2, 4, 4)), rng.normal(size=(3, 1, 3, 3)))


def test_maxpool_extensiones_impares():
    x = np.arange(25.0).reshape(1, 1, 5, 5)
    techo = ops.maxpool2x2(x, ceil_mode=True).data[0, 0]
    piso = ops.maxpool2x2(x, ceil_mode=False).data[0, 0]
    np.testing.assert_array_equal(techo, [[6, 8, 9], [16, 18, 19], [21, 23, 24]])
    np.testing.assert_array_equal(piso, [[6, 8], [16, 18]])


def test_maxpool_sin_relleno_sobre_1x1_falla():
    with pytest.raises(ShapeError):
        ops.maxpool2x2(np.ones((1, 1, 1, 1)), ceil_mode=False)
    assert ops.maxpool2x2(np.ones((1, 1, 1, 1)), ceil_mode=True).shape == (1, 1, 1, 1)


def test_maxpool_empate_envia_gradiente_al_primero():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    ops.sum(ops.maxpool2x2(x)).backward()
    np.testing.assert_array_equal(x.grad[0, 0], [[1, 0], [0, 0]])


def test_softmax_estable_y_contra_scipy(rng):
    np.testing.assert_allclose(ops.softmax(np.array([1000.0, 1000.0])).data, [0.5, 0.5])
    z = rng.normal(size=(3, 4))
    np.testing.assert_allclose(ops.softmax(z, axis=1).data, special.softmax(z, axis=1))


@pytest.mark.parametrize("desplazamiento", [-50.0, 3.0, 700.0])
def test_softmax_invariante_a_desplazamientos(rng, desplazamiento):
    z = rng.normal(size=(4, 6))
    np.testing.assert_allclose(
        ops.softmax(z + desplazamiento, axis=1).data, ops.softmax(z, axis=1).data, atol=1e-12
    )


def test_softmax_filas_suman_uno(rng):
    z = rng.normal(scale=10.0, size=(7, 9))
    np.testing.assert_allclose(ops.softmax(z, axis=1).data.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(ops.softmax(z, axis=0).data.sum(axis=0), 1.0, atol=1e-12)


def test_coseno_casos_basicos():
    assert ops.cosine_similarity([1.0, 0.0], [0.0, 1.0]).item() == pytest.approx(0.0)
    assert ops.cosine_similarity([2.0, 0.0], [5.0, 0.0]).item() == pytest.approx(1.0)
    assert ops.cosine_similarity([0.0, 0.0], [1.0, 1.0]).item() == 0.0


def test_coseno_a_cuarenta_y_cinco_grados():
    assert ops.cosine_similarity([1.0, 1.0], [1.0, 0.0]).item() == pytest.approx(np.sqrt(2) / 2, abs=1e-12)


def test_coseno_vector_nulo_sin_nan():
    a = Tensor(np.zeros((1, 3)), requires_grad=True)
    ops.sum(ops.pairwise_cosine(a, np.ones((2, 3)))).backward()
    assert np.all(np.isfinite(a.grad))


def test_nll_acota_y_cuenta():
    class Contador:
        n = 0

        def record(self, k):
            self.n += k

    contador = Contador()
    p = Tensor(np.array([[0.0, 1.0], [0.5, 0.5]]), requires_grad=True)
    perdida = ops.nll(p, [0, 0], stats=contador)
    assert perdida.item() == pytest.approx((-np.log(1e-12) - np.log(0.5)) / 2)
    assert contador.n == 1
    perdida.backward()
    assert p.grad[0, 0] == 0.0
    assert p.grad[1, 0] == pytest.approx(-1.0 / (2 * 0.5))


def test_log_de_cero_es_error_numerico():
    with pytest.raises(NumericError):
        ops.log(np.array([0.0, 1.0]))


def test_batchnorm_train_normaliza_y_actualiza(rng):
    x = rng.normal(loc=3.0, scale=2.0, size=(8, 2, 3, 3))
    stats = RunningStats.fresh(2)
    y = ops.batchnorm(x, np.ones(2), np.zeros(2), mode="train", running_stats=stats).data
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1.0, atol=1e-3)
    m = 8 * 9
    np.testing.assert_allclose(stats.mean, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(stats.var, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * m / (m - 1))


def test_batchnorm_canal_constante_devuelve_beta(rng):
    x = rng.normal(size=(5, 2, 3, 3))
    x[:, 0] = 3.0
    gamma = np.array([rng.uniform(0.1, 10.0), 1.0])
    beta = np.array([0.5, -1.0])
    y = ops.batchnorm(x, gamma, beta, mode="train").data
    np.testing.assert_allclose(y[:, 0], 0.5, atol=1e-12)


def test_batchnorm_eval_es_determinista_y_usa_acumuladas(rng):
    stats = RunningStats(np.array([1.0, -1.0]), np.array([4.0, 1.0]))
    x = rng.normal(size=(3, 2))
    y = ops.batchnorm(x, np.ones(2), np.zeros(2), mode="eval", running_stats=stats, eps=0.0).data
    np.testing.assert_allclose(y, (x - stats.mean) / np.sqrt(stats.var))
    np.testing.assert_array_equal(stats.mean, [1.0, -1.0])


def test_batchnorm_train_con_un_ejemplo_falla(rng):
    with pytest.raises(ShapeError):
        ops.batchnorm(rng.normal(size=(1, 2)), np.ones(2), np.zeros(2), mode="train")


def test_retroceso_alterado_invierte_relu():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with ops.perturbed_backward("relu"):
        ops.sum(ops.relu(x)).backward()
    np.testing.assert_array_equal(x.grad, [-1.0, -1.0])
    x.zero_grad()
    ops.sum(ops.relu(x)).backward()
    np.testing.assert_array_equal(x.grad, [1.0, 1.0])
