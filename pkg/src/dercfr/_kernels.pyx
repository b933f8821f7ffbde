# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels; see ``_kernels_py`` for the reference."""
import numpy as np

from libc.math cimport exp, sqrt


def elu_forward(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], i, j
    cdef double v, e
    out = np.empty((n, k))
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(k):
                v = x[i, j]
                e = exp(v if v < 0 else 0.0) - 1.0
                o[i, j] = v if v > 0 else e
    return out


def elu_backward(const double[:, ::1] g, const double[:, ::1] x, const double[:, ::1] y):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], i, j
    out = np.empty((n, k))
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(k):
                if x[i, j] > 0:
                    o[i, j] = g[i, j]
                else:
                    o[i, j] = g[i, j] * (y[i, j] + 1.0)
    return out


def sigmoid_forward(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], i, j
    cdef double v, e
    out = np.empty((n, k))
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(k):
                v = x[i, j]
                e = exp(-v if v >= 0 else v)
                o[i, j] = 1.0 / (1.0 + e) if v >= 0 else e / (1.0 + e)
    return out


def batchnorm_forward(const double[:, ::1] x, const double[::1] gamma,
                      const double[::1] beta, double eps):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], i, j
    cdef double d
    mean_arr = np.zeros(k)
    var_arr = np.zeros(k)
    inv_arr = np.empty(k)
    y_arr = np.empty((n, k))
    xhat_arr = np.empty((n, k))
    cdef double[::1] mean = mean_arr, var = var_arr, inv = inv_arr
    cdef double[:, ::1] y = y_arr, xhat = xhat_arr
    with nogil:
        for i in range(n):
            for j in range(k):
                mean[j] += x[i, j]
        for j in range(k):
            mean[j] /= n
        for i in range(n):
            for j in range(k):
                d = x[i, j] - mean[j]
                var[j] += d * d
        for j in range(k):
            var[j] /= n
            inv[j] = 1.0 / sqrt(var[j] + eps)
        for i in range(n):
            for j in range(k):
                d = (x[i, j] - mean[j]) * inv[j]
                xhat[i, j] = d
                y[i, j] = d * gamma[j] + beta[j]
    return y_arr, xhat_arr, mean_arr, var_arr, inv_arr


def batchnorm_backward(const double[:, ::1] g, const double[:, ::1] xhat,
                       const double[::1] inv_std, const double[::1] gamma):
    cdef Py_ssize_t n = g.shape[0], k = g.shape[1], i, j
    cdef double scale
    gbeta_arr = np.zeros(k)
    ggamma_arr = np.zeros(k)
    gx_arr = np.empty((n, k))
    cdef double[::1] gbeta = gbeta_arr, ggamma = ggamma_arr
    cdef double[:, ::1] gx = gx_arr
    with nogil:
        for i in range(n):
            for j in range(k):
                gbeta[j] += g[i, j]
                ggamma[j] += g[i, j] * xhat[i, j]
        for i in range(n):
            for j in range(k):
                scale = gamma[j] * inv_std[j] / n
                gx[i, j] = scale * (n * g[i, j] - gbeta[j] - xhat[i, j] * ggamma[j])
    return gx_arr, ggamma_arr, gbeta_arr


cdef inline double _sq(const double[:, ::1] p, Py_ssize_t i,
                       const double[:, ::1] q, Py_ssize_t j) noexcept nogil:
    cdef Py_ssize_t c
    cdef double s = 0.0, d
    for c in range(p.shape[1]):
        d = p[i, c] - q[j, c]
        s += d * d
    return s


def rbf_mmd(const double[:, ::1] a, const double[:, ::1] b,
            const double[::1] wa, const double[::1] wb, double bandwidth):
    """Weighted Gaussian MMD and its gradients without forming Gram matrices."""
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], dim = a.shape[1], i, j, c
    cdef double s2 = bandwidth * bandwidth, inv2s2 = 1.0 / (2.0 * s2)
    cdef double k, coef, taa = 0.0, tbb = 0.0, tab = 0.0
    ga_arr = np.zeros((na, dim))
    gb_arr = np.zeros((nb, dim))
    gwa_arr = np.zeros(na)
    gwb_arr = np.zeros(nb)
    cdef double[:, ::1] ga = ga_arr, gb = gb_arr
    cdef double[::1] gwa = gwa_arr, gwb = gwb_arr
    with nogil:
        for i in range(na):
            for j in range(na):
                k = exp(-_sq(a, i, a, j) * inv2s2)
                taa += wa[i] * wa[j] * k
                gwa[i] += 2.0 * wa[j] * k
                coef = -2.0 / s2 * wa[i] * wa[j] * k
                for c in range(dim):
                    ga[i, c] += coef * (a[i, c] - a[j, c])
        for i in range(nb):
            for j in range(nb):
                k = exp(-_sq(b, i, b, j) * inv2s2)
                tbb += wb[i] * wb[j] * k
                gwb[i] += 2.0 * wb[j] * k
                coef = -2.0 / s2 * wb[i] * wb[j] * k
                for c in range(dim):
                    gb[i, c] += coef * (b[i, c] - b[j, c])
        for i in range(na):
            for j in range(nb):
                k = exp(-_sq(a, i, b, j) * inv2s2)
                tab += wa[i] * wb[j] * k
                gwa[i] -= 2.0 * wb[j] * k
                gwb[j] -= 2.0 * wa[i] * k
                coef = 2.0 / s2 * wa[i] * wb[j] * k
                for c in range(dim):
                    ga[i, c] += coef * (a[i, c] - b[j, c])
                    gb[j, c] += coef * (b[j, c] - a[i, c])
    return taa + tbb - 2.0 * tab, ga_arr, gb_arr, gwa_arr, gwb_arr
