"""Numpy fallback kernels.

Same contract as the compiled `_core` extension: float64, C-contiguous,
row-wise over 2-D inputs. The compiled backend exists to cut per-call Python
overhead in the training hot loop; results agree with these to rounding.
"""

import numpy as np

SQRT_2_OVER_PI = 0.7978845608028654
GELU_CUBIC = 0.044715

name = "numpy"


def layernorm_fwd(x, gamma, beta, eps):
    """Row-wise layer norm. Returns (y, mean, rstd); mean/rstd are per row."""
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    return xhat * gamma + beta, mean, rstd


def layernorm_bwd(dy, x, gamma, mean, rstd):
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=1)
    m2 = (dxhat * xhat).mean(axis=1)
    dx = rstd[:, None] * (dxhat - m1[:, None] - xhat * m2[:, None])
    return dx, dgamma, dbeta


def softmax_fwd(x):
    """Row-wise stable softmax (max subtraction)."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(y, dy):
    inner = (y * dy).sum(axis=1, keepdims=True)
    return y * (dy - inner)


def gelu_fwd(x):
    """tanh-approximate GELU; smooth everywhere, which keeps central
    finite-difference gradient checks tight."""
    inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x**3)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_bwd(x, dy):
    inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x**3)
    t = np.tanh(inner)
    sech2 = 1.0 - t * t
    local = 0.5 * (1.0 + t) + 0.5 * x * sech2 * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
    return dy * local


def sigmoid_fwd(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_bwd(y, dy):
    return dy * y * (1.0 - y)


def adam_step(p, g, m, v, lr, b1, b2, eps, t):
    """In-place Adam update on flat float64 views; t is the 1-based step."""
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    mhat = m / (1.0 - b1**t)
    vhat = v / (1.0 - b2**t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)
