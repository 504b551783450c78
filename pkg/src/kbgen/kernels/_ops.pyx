# cython: boundscheck=False, cdivision=True, language_level=3
# (wraparound stays on: the Python-level wrappers index shape tuples with -1)
"""Compiled kernel implementations (native backend).

Loops run in the array's own precision (float32 paths call tanhf/expf so
the compiler can vectorize them through libmvec); single-threaded for
bit-deterministic results per build.
"""

import numpy as np

from libc.math cimport exp, expf, log, logf, pow, sqrt, sqrtf, tanh, tanhf

ctypedef fused floating:
    float
    double


cdef inline floating _tanh(floating v) noexcept nogil:
    if floating is float:
        return tanhf(v)
    else:
        return tanh(v)


cdef inline floating _exp(floating v) noexcept nogil:
    if floating is float:
        return expf(v)
    else:
        return exp(v)


cdef inline floating _log(floating v) noexcept nogil:
    if floating is float:
        return logf(v)
    else:
        return log(v)


cdef inline floating _sqrt(floating v) noexcept nogil:
    if floating is float:
        return sqrtf(v)
    else:
        return sqrt(v)


cdef floating GELU_C_f(floating _) noexcept nogil:
    return <floating> 0.7978845608028654  # sqrt(2/pi)


def _gelu_fwd(floating[::1] x, floating[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef floating v, t
    cdef floating c = <floating> 0.7978845608028654
    cdef floating a = <floating> 0.044715
    for i in range(n):
        v = x[i]
        t = _tanh(c * (v + a * v * v * v))
        out[i] = <floating> 0.5 * v * (<floating> 1.0 + t)


def gelu_fwd(x):
    arr = np.ascontiguousarray(x)
    out = np.empty_like(arr)
    _gelu_fwd(arr.ravel(), out.ravel())
    return out


def _gelu_bwd(floating[::1] x, floating[::1] gy, floating[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef floating v, t, dt
    cdef floating c = <floating> 0.7978845608028654
    cdef floating a = <floating> 0.044715
    cdef floating half = <floating> 0.5
    cdef floating one = <floating> 1.0
    cdef floating three = <floating> 3.0
    for i in range(n):
        v = x[i]
        t = _tanh(c * (v + a * v * v * v))
        dt = (one - t * t) * c * (one + three * a * v * v)
        out[i] = gy[i] * (half * (one + t) + half * v * dt)


def gelu_bwd(x, gy):
    arr = np.ascontiguousarray(x)
    garr = np.ascontiguousarray(gy)
    out = np.empty_like(arr)
    _gelu_bwd(arr.ravel(), garr.ravel(), out.ravel())
    return out


def _softmax_fwd(floating[:, ::1] x, floating[:, ::1] out):
    cdef Py_ssize_t i, j, n = x.shape[0], d = x.shape[1]
    cdef floating m, s, e
    for i in range(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        s = <floating> 0.0
        for j in range(d):
            e = _exp(x[i, j] - m)
            out[i, j] = e
            s += e
        for j in range(d):
            out[i, j] /= s


def softmax_fwd(x):
    arr = np.ascontiguousarray(x)
    out = np.empty_like(arr)
    d = arr.shape[-1]
    _softmax_fwd(arr.reshape(-1, d), out.reshape(-1, d))
    return out


def _softmax_bwd(floating[:, ::1] y, floating[:, ::1] gy, floating[:, ::1] out):
    cdef Py_ssize_t i, j, n = y.shape[0], d = y.shape[1]
    cdef floating dot
    for i in range(n):
        dot = <floating> 0.0
        for j in range(d):
            dot += y[i, j] * gy[i, j]
        for j in range(d):
            out[i, j] = y[i, j] * (gy[i, j] - dot)


def softmax_bwd(y, gy):
    yc = np.ascontiguousarray(y)
    gc = np.ascontiguousarray(gy)
    out = np.empty_like(yc)
    d = yc.shape[-1]
    _softmax_bwd(yc.reshape(-1, d), gc.reshape(-1, d), out.reshape(-1, d))
    return out


def _layernorm_fwd(floating[:, ::1] x, floating[::1] gain, floating[::1] bias,
                   double eps, floating[:, ::1] y, floating[::1] mu, floating[::1] rstd):
    cdef Py_ssize_t i, j, n = x.shape[0], d = x.shape[1]
    cdef floating m, var, r, xc
    for i in range(n):
        m = <floating> 0.0
        for j in range(d):
            m += x[i, j]
        m /= d
        var = <floating> 0.0
        for j in range(d):
            xc = x[i, j] - m
            var += xc * xc
        var /= d
        r = <floating> 1.0 / _sqrt(var + <floating> eps)
        mu[i] = m
        rstd[i] = r
        for j in range(d):
            y[i, j] = (x[i, j] - m) * r * gain[j] + bias[j]


def layernorm_fwd(x, gain, bias, eps):
    arr = np.ascontiguousarray(x)
    d = arr.shape[-1]
    lead = arr.shape[:-1]
    y = np.empty_like(arr)
    mu = np.empty(arr.size // d, dtype=arr.dtype)
    rstd = np.empty(arr.size // d, dtype=arr.dtype)
    _layernorm_fwd(arr.reshape(-1, d), np.ascontiguousarray(gain),
                   np.ascontiguousarray(bias), eps, y.reshape(-1, d), mu, rstd)
    keep = lead + (1,)
    return y, mu.reshape(keep), rstd.reshape(keep)


def _layernorm_bwd(floating[:, ::1] x, floating[::1] gain, floating[::1] mu,
                   floating[::1] rstd, floating[:, ::1] gy, floating[:, ::1] gx,
                   double[::1] ggain, double[::1] gbias):
    cdef Py_ssize_t i, j, n = x.shape[0], d = x.shape[1]
    cdef floating m1, m2, xhat, gxh, r, m
    for i in range(n):
        m = mu[i]
        r = rstd[i]
        m1 = <floating> 0.0
        m2 = <floating> 0.0
        for j in range(d):
            xhat = (x[i, j] - m) * r
            gxh = gy[i, j] * gain[j]
            m1 += gxh
            m2 += gxh * xhat
        m1 /= d
        m2 /= d
        for j in range(d):
            xhat = (x[i, j] - m) * r
            gxh = gy[i, j] * gain[j]
            gx[i, j] = r * (gxh - m1 - xhat * m2)
            ggain[j] += <double> (gy[i, j] * xhat)
            gbias[j] += <double> gy[i, j]


def layernorm_bwd(x, gain, mu, rstd, gy):
    arr = np.ascontiguousarray(x)
    gc = np.ascontiguousarray(gy)
    d = arr.shape[-1]
    gx = np.empty_like(arr)
    ggain = np.zeros(d, dtype=np.float64)
    gbias = np.zeros(d, dtype=np.float64)
    _layernorm_bwd(arr.reshape(-1, d), np.ascontiguousarray(gain),
                   np.ascontiguousarray(mu).ravel(), np.ascontiguousarray(rstd).ravel(),
                   gc.reshape(-1, d), gx.reshape(-1, d), ggain, gbias)
    return gx, ggain.astype(arr.dtype), gbias.astype(arr.dtype)


def _cross_entropy_fwd(floating[:, ::1] rows, long[::1] targets, floating[::1] out):
    cdef Py_ssize_t i, j, n = rows.shape[0], d = rows.shape[1]
    cdef floating m, s
    for i in range(n):
        m = rows[i, 0]
        for j in range(1, d):
            if rows[i, j] > m:
                m = rows[i, j]
        s = <floating> 0.0
        for j in range(d):
            s += _exp(rows[i, j] - m)
        out[i] = m + _log(s) - rows[i, targets[i]]


def cross_entropy_fwd(rows, targets):
    rc = np.ascontiguousarray(rows)
    tc = np.ascontiguousarray(targets, dtype=np.int_)
    out = np.empty(rc.shape[0], dtype=rc.dtype)
    _cross_entropy_fwd(rc, tc, out)
    return out


def _cross_entropy_bwd(floating[:, ::1] rows, long[::1] targets, double gscale,
                       floating[:, ::1] out):
    cdef Py_ssize_t i, j, n = rows.shape[0], d = rows.shape[1]
    cdef floating m, s, p
    cdef floating gs = <floating> gscale
    for i in range(n):
        m = rows[i, 0]
        for j in range(1, d):
            if rows[i, j] > m:
                m = rows[i, j]
        s = <floating> 0.0
        for j in range(d):
            p = _exp(rows[i, j] - m)
            out[i, j] = p
            s += p
        for j in range(d):
            p = out[i, j] / s
            if j == targets[i]:
                p -= <floating> 1.0
            out[i, j] = p * gs


def cross_entropy_bwd(rows, targets, gscale):
    rc = np.ascontiguousarray(rows)
    tc = np.ascontiguousarray(targets, dtype=np.int_)
    out = np.empty_like(rc)
    _cross_entropy_bwd(rc, tc, gscale, out)
    return out


def _adam_update(floating[::1] p, floating[::1] g, floating[::1] m, floating[::1] v,
                 long step, double lr, double beta1, double beta2, double eps,
                 double weight_decay):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef floating b1 = <floating> beta1
    cdef floating b2 = <floating> beta2
    cdef floating lrf = <floating> lr
    cdef floating epsf = <floating> eps
    cdef floating wdf = <floating> weight_decay
    cdef floating one = <floating> 1.0
    cdef floating bc1 = <floating> (1.0 - pow(beta1, <double> step))
    cdef floating bc2 = <floating> (1.0 - pow(beta2, <double> step))
    cdef floating gi, mi, vi, upd
    for i in range(n):
        gi = g[i]
        mi = b1 * m[i] + (one - b1) * gi
        vi = b2 * v[i] + (one - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        upd = (mi / bc1) / (_sqrt(vi / bc2) + epsf)
        if wdf != <floating> 0.0:
            upd += wdf * p[i]
        p[i] -= lrf * upd


def adam_update(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    if not p.flags["C_CONTIGUOUS"]:
        raise ValueError("adam_update requires a contiguous parameter array")
    _adam_update(p.ravel(), np.ascontiguousarray(g).ravel(), m.ravel(), v.ravel(),
                 step, lr, beta1, beta2, eps, weight_decay)
