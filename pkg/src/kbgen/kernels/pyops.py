"""Pure-numpy kernel implementations (fallback backend)."""

import numpy as np

# Plain Python floats: numpy scalars would promote float32 inputs.
_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu_fwd(x):
    t = np.tanh(_GELU_C * (x + _GELU_A * x * x * x))
    return 0.5 * x * (1.0 + t)


def gelu_bwd(x, gy):
    t = np.tanh(_GELU_C * (x + _GELU_A * x * x * x))
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return gy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def softmax_fwd(x):
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_bwd(y, gy):
    dot = np.sum(y * gy, axis=-1, keepdims=True)
    return y * (gy - dot)


def layernorm_fwd(x, gain, bias, eps):
    mu = np.mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    y = xc * rstd * gain + bias
    return y, mu, rstd


def layernorm_bwd(x, gain, mu, rstd, gy):
    xhat = (x - mu) * rstd
    gxhat = gy * gain
    m1 = np.mean(gxhat, axis=-1, keepdims=True)
    m2 = np.mean(gxhat * xhat, axis=-1, keepdims=True)
    gx = rstd * (gxhat - m1 - xhat * m2)
    axes = tuple(range(gy.ndim - 1))
    ggain = np.sum(gy * xhat, axis=axes)
    gbias = np.sum(gy, axis=axes)
    return gx, ggain, gbias


def cross_entropy_fwd(rows, targets):
    """Per-row negative log softmax at the target index. rows: (M, V)."""
    m = np.max(rows, axis=-1)
    lse = m + np.log(np.sum(np.exp(rows - m[:, None]), axis=-1))
    picked = rows[np.arange(rows.shape[0]), targets]
    return lse - picked


def cross_entropy_bwd(rows, targets, gscale):
    g = softmax_fwd(rows)
    g[np.arange(rows.shape[0]), targets] -= 1.0
    g *= gscale
    return g


def adam_update(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    """Bias-corrected Adam with decoupled weight decay, in place."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1**step)
    vhat = v / (1.0 - beta2**step)
    upd = mhat / (np.sqrt(vhat) + eps)
    if weight_decay:
        upd = upd + weight_decay * p
    p -= np.asarray(lr * upd, dtype=p.dtype)
