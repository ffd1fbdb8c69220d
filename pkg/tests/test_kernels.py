"""Backend agreement: the compiled kernels must match the numpy fallback to
floating-point rounding on every primitive."""

import numpy as np
import pytest

from depthmoe import kernels
from depthmoe.kernels import _numpy

compiled = pytest.importorskip("depthmoe.kernels._core", reason="compiled kernels not built")


@pytest.fixture
def data(rng):
    x = np.ascontiguousarray(rng.normal(size=(17, 23)) * 3)
    dy = np.ascontiguousarray(rng.normal(size=(17, 23)))
    gamma = rng.normal(size=23) * 0.3 + 1.0
    beta = rng.normal(size=23) * 0.2
    return x, dy, gamma, beta


def test_layernorm_agrees(data):
    x, dy, gamma, beta = data
    y_c, mean_c, rstd_c = compiled.layernorm_fwd(x, gamma, beta, 1e-5)
    y_n, mean_n, rstd_n = _numpy.layernorm_fwd(x, gamma, beta, 1e-5)
    np.testing.assert_allclose(y_c, y_n, atol=1e-12)
    np.testing.assert_allclose(mean_c, mean_n, atol=1e-13)
    np.testing.assert_allclose(rstd_c, rstd_n, rtol=1e-12)
    dx_c, dg_c, db_c = compiled.layernorm_bwd(dy, x, gamma, mean_c, rstd_c)
    dx_n, dg_n, db_n = _numpy.layernorm_bwd(dy, x, gamma, mean_n, rstd_n)
    np.testing.assert_allclose(dx_c, dx_n, atol=1e-12)
    np.testing.assert_allclose(dg_c, dg_n, atol=1e-11)
    np.testing.assert_allclose(db_c, db_n, atol=1e-11)


def test_softmax_agrees(data):
    x, dy, _, _ = data
    y_c = compiled.softmax_fwd(x)
    y_n = _numpy.softmax_fwd(x)
    np.testing.assert_allclose(y_c, y_n, atol=1e-14)
    np.testing.assert_allclose(compiled.softmax_bwd(y_c, dy), _numpy.softmax_bwd(y_n, dy),
                               atol=1e-13)


def test_gelu_agrees(data):
    x, dy, _, _ = data
    np.testing.assert_allclose(compiled.gelu_fwd(x), _numpy.gelu_fwd(x), atol=1e-14)
    np.testing.assert_allclose(compiled.gelu_bwd(x, dy), _numpy.gelu_bwd(x, dy), atol=1e-13)


def test_sigmoid_agrees(data):
    x, dy, _, _ = data
    y_c = compiled.sigmoid_fwd(x)
    y_n = _numpy.sigmoid_fwd(x)
    np.testing.assert_allclose(y_c, y_n, atol=1e-15)
    np.testing.assert_allclose(compiled.sigmoid_bwd(y_c, dy), _numpy.sigmoid_bwd(y_n, dy),
                               atol=1e-15)


def test_adam_agrees(rng):
    p1 = rng.normal(size=64)
    g = rng.normal(size=64)
    p2 = p1.copy()
    m1, v1 = np.zeros(64), np.zeros(64)
    m2, v2 = np.zeros(64), np.zeros(64)
    for t in range(1, 6):
        compiled.adam_step(p1, g, m1, v1, 1e-3, 0.9, 0.999, 1e-8, t)
        _numpy.adam_step(p2, g, m2, v2, 1e-3, 0.9, 0.999, 1e-8, t)
    np.testing.assert_allclose(p1, p2, atol=1e-15)
    np.testing.assert_allclose(m1, m2, atol=1e-15)
    np.testing.assert_allclose(v1, v2, atol=1e-15)


def test_backend_selection():
    assert set(kernels.available_backends()) == {"numpy", "compiled"}
    kernels.set_backend("numpy")
    assert kernels.backend_name() == "numpy"
    kernels.set_backend("compiled")
    assert kernels.backend_name() == "compiled"
    kernels.set_backend("auto")
    assert kernels.backend_name() == "compiled"
    with pytest.raises(ValueError):
        kernels.set_backend("mystery")
