# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled MLP kernels: fused forward, backward, Adam and Polyak steps.

Parameters are one flat row-major vector ``[W_0, b_0, W_1, b_1, ...]`` with
``W_k`` of shape ``(dims[k], dims[k+1])``.  ``forward`` returns the output and
a workspace holding every hidden activation followed by the output; the
workspace is what ``backward`` needs.  Signatures mirror :mod:`la3p._nn_py`.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, pow, sqrt, tanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline void _xw(const double* X, const double* W, double* C,
                     int B, int din, int dout, double beta) noexcept nogil:
    # C(B, dout) = X(B, din) @ W(din, dout) + beta * C, all row-major
    cdef char n = b'N'
    cdef double one = 1.0
    dgemm(&n, &n, &dout, &B, &din, &one, <double*>W, &dout, <double*>X, &din, &beta, C, &dout)


cdef inline void _xt_g(const double* X, const double* G, double* dW,
                       int B, int din, int dout) noexcept nogil:
    # dW(din, dout) = X(B, din).T @ G(B, dout)
    cdef char n = b'N'
    cdef char t = b'T'
    cdef double one = 1.0, zero = 0.0
    dgemm(&n, &t, &dout, &din, &B, &one, <double*>G, &dout, <double*>X, &din, &zero, dW, &dout)


cdef inline void _g_wt(const double* G, const double* W, double* dX,
                       int B, int din, int dout) noexcept nogil:
    # dX(B, din) = G(B, dout) @ W(din, dout).T
    cdef char n = b'N'
    cdef char t = b'T'
    cdef double one = 1.0, zero = 0.0
    dgemm(&t, &n, &din, &B, &dout, &one, <double*>W, &dout, <double*>G, &dout, &zero, dX, &din)


def forward(const double[::1] params, dims, const double[:, ::1] x, bint tanh_head, double scale):
    cdef int L = len(dims) - 1
    cdef int B = x.shape[0]
    cdef int k, i, j, din, dout
    cdef Py_ssize_t total = 0, pos = 0, wpos = 0, prev = 0
    cdef int[32] d
    if L >= 31:
        raise ValueError("too many layers")
    for k in range(L + 1):
        d[k] = dims[k]
        if k:
            total += d[k]
    cdef cnp.ndarray[double, ndim=1] work = np.empty(B * total)
    cdef double* w = &work[0]
    cdef const double* h = &x[0, 0]
    cdef double* z
    cdef const double* bias
    with nogil:
        for k in range(L):
            din = d[k]
            dout = d[k + 1]
            z = w + wpos
            bias = &params[pos + din * dout]
            for i in range(B):
                for j in range(dout):
                    z[i * dout + j] = bias[j]
            _xw(h, &params[pos], z, B, din, dout, 1.0)
            if k < L - 1:
                for i in range(B * dout):
                    if z[i] < 0.0:
                        z[i] = 0.0
            elif tanh_head:
                for i in range(B * dout):
                    z[i] = scale * tanh(z[i])
            pos += din * dout + dout
            prev = wpos
            wpos += B * dout
            h = z
    out = work[prev:].reshape(B, d[L])
    return out, work


def backward(const double[::1] params, dims, const double[:, ::1] x, const double[::1] work,
             const double[:, ::1] grad_out, bint want_params, bint tanh_head, double scale,
             bint want_input=True):
    cdef int L = len(dims) - 1
    cdef int B = x.shape[0]
    cdef int k, i, j, din, dout, dmax = 0
    cdef Py_ssize_t pos, wpos, total = 0
    cdef int[32] d
    cdef Py_ssize_t[32] ppos
    cdef Py_ssize_t[32] apos
    for k in range(L + 1):
        d[k] = dims[k]
        if d[k] > dmax:
            dmax = d[k]
    pos = 0
    wpos = 0
    for k in range(L):
        ppos[k] = pos
        apos[k] = wpos
        pos += d[k] * d[k + 1] + d[k + 1]
        wpos += B * d[k + 1]
    cdef cnp.ndarray[double, ndim=1] grads
    cdef double* gp = NULL
    if want_params:
        grads = np.empty(pos)
        gp = &grads[0]
    cdef cnp.ndarray[double, ndim=1] buf_a = np.empty(B * dmax)
    cdef cnp.ndarray[double, ndim=1] buf_b = np.empty(B * dmax)
    cdef double* g = &buf_a[0]
    cdef double* gn = &buf_b[0]
    cdef double* tmp
    cdef const double* a
    cdef const double* inp
    cdef double t
    cdef double* bias
    cdef cnp.ndarray[double, ndim=2] gin = np.empty((B, d[0]))
    with nogil:
        dout = d[L]
        a = &work[apos[L - 1]]
        for i in range(B):
            for j in range(dout):
                if tanh_head:
                    t = a[i * dout + j] / scale
                    g[i * dout + j] = grad_out[i, j] * scale * (1.0 - t * t)
                else:
                    g[i * dout + j] = grad_out[i, j]
        for k in range(L - 1, -1, -1):
            din = d[k]
            dout = d[k + 1]
            if k < L - 1:
                a = &work[apos[k]]
                for i in range(B * dout):
                    if a[i] <= 0.0:
                        g[i] = 0.0
            inp = &x[0, 0] if k == 0 else &work[apos[k - 1]]
            if gp != NULL:
                _xt_g(inp, g, gp + ppos[k], B, din, dout)
                bias = gp + ppos[k] + din * dout
                for j in range(dout):
                    bias[j] = 0.0
                for i in range(B):
                    for j in range(dout):
                        bias[j] += g[i * dout + j]
            if k == 0:
                if want_input:
                    _g_wt(g, &params[ppos[k]], &gin[0, 0], B, din, dout)
            else:
                _g_wt(g, &params[ppos[k]], gn, B, din, dout)
                tmp = g
                g = gn
                gn = tmp
    return (grads if want_params else None), (gin if want_input else None)


def adam(double[::1] params, double[::1] m, double[::1] v, const double[::1] g,
         double lr, double beta1, double beta2, double eps, long t):
    cdef Py_ssize_t i, n = params.shape[0]
    cdef double c1 = 1.0 - beta1 ** t
    cdef double c2 = 1.0 - beta2 ** t
    cdef double step = lr * sqrt(c2) / c1
    cdef double e = eps * sqrt(c2)
    cdef double gi, acc = 0.0
    with nogil:
        for i in range(n):
            acc += g[i] * 0.0
    # any NaN or inf in g turns acc into NaN
    if acc != acc:
        raise FloatingPointError("NaN gradient")
    with nogil:
        for i in range(n):
            gi = g[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi
            v[i] = beta2 * v[i] + (gi * gi) * (1.0 - beta2)
            params[i] -= step * (m[i] / (sqrt(v[i]) + e))


def polyak(double[::1] target, const double[::1] source, double zeta):
    cdef Py_ssize_t i, n = target.shape[0]
    cdef double keep = 1.0 - zeta
    with nogil:
        for i in range(n):
            target[i] = keep * target[i] + zeta * source[i]


def twin_td(const double[::1] q1, const double[::1] q2, const double[::1] q1t,
            const double[::1] q2t, const double[::1] rewards, const double[::1] dones,
            const double[::1] weights, double gamma, int kind, double alpha, double xi):
    """Fused TD errors, critic loss and output gradients for twin critics.

    ``kind`` is 0 (MSE), 1 (Huber) or 2 (PAL); ``xi <= 0`` asks for the
    batch statistic over ``max(|d1|, |d2|)``.  Returns
    ``(d1, d2, dQ1, dQ2, mean_loss, xi)`` with the output gradients already
    scaled by ``weight / n``.
    """
    cdef Py_ssize_t i, k, n = q1.shape[0]
    cdef cnp.ndarray[double, ndim=1] d1 = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] d2 = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] g1 = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] g2 = np.empty(n)
    cdef double[::1] dv1 = d1, dv2 = d2, gv1 = g1, gv2 = g2
    cdef double y, qmin, a, d, l, g, sc, total = 0.0, inv
    cdef double ap1 = 1.0 + alpha
    with nogil:
        for i in range(n):
            qmin = q1t[i] if q1t[i] < q2t[i] else q2t[i]
            y = rewards[i] + (gamma * (1.0 - dones[i])) * qmin
            dv1[i] = y - q1[i]
            dv2[i] = y - q2[i]
        if kind == 2 and xi <= 0.0:
            xi = 0.0
            for i in range(n):
                a = fabs(dv1[i])
                if fabs(dv2[i]) > a:
                    a = fabs(dv2[i])
                a = pow(a, alpha)
                xi += a if a > 1.0 else 1.0
            xi = xi / n
        inv = 1.0 / xi if kind == 2 else 1.0
        for i in range(n):
            sc = weights[i] / n
            for k in range(2):
                d = dv1[i] if k == 0 else dv2[i]
                a = fabs(d)
                if kind == 0 or a <= 1.0:
                    l = 0.5 * d * d
                    g = d
                elif kind == 1:
                    l = a
                    g = 1.0 if d > 0.0 else -1.0
                else:
                    l = pow(a, ap1) / ap1
                    g = pow(a, alpha)
                    if d < 0.0:
                        g = -g
                if kind == 2:
                    l = l / xi
                    g = g / xi
                total += l * sc
                if k == 0:
                    gv1[i] = -g * sc
                else:
                    gv2[i] = -g * sc
    return d1, d2, g1, g2, total, (xi if kind == 2 else float("nan"))
