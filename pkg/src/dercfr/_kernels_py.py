"""Pure numpy implementations of the hot elementwise and pairwise kernels.

Used when the compiled ``_kernels`` extension is unavailable or when
``DERCFR_PURE_PYTHON=1`` is set. Signatures match the Cython module exactly.
"""
import numpy as np


def elu_forward(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_backward(g, x, y):
    # d/dx expm1(x) = y + 1 on the negative branch
    return np.where(x > 0, g, g * (y + 1.0))


def sigmoid_forward(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def batchnorm_forward(x, gamma, beta, eps):
    """Training-mode batch normalization over rows.

    Returns ``(y, xhat, mean, var, inv_std)``; ``gamma``/``beta`` are 1-D.
    """
    mean = x.mean(axis=0)
    centered = x - mean
    var = np.mean(centered * centered, axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    return xhat * gamma + beta, xhat, mean, var, inv_std


def batchnorm_backward(g, xhat, inv_std, gamma):
    n = g.shape[0]
    gbeta = g.sum(axis=0)
    ggamma = np.sum(g * xhat, axis=0)
    gx = (gamma * inv_std / n) * (n * g - gbeta - xhat * ggamma)
    return gx, ggamma, gbeta


def _sqdist(p, q):
    d = (p * p).sum(1)[:, None] + (q * q).sum(1)[None, :] - 2.0 * (p @ q.T)
    return np.maximum(d, 0.0)


def rbf_mmd(a, b, wa, wb, bandwidth):
    """Weighted Gaussian-kernel MMD with gradients.

    ``wa`` and ``wb`` are already normalized 1-D weight vectors. Returns
    ``(value, grad_a, grad_b, grad_wa, grad_wb)`` for the unclamped value.
    """
    s2 = bandwidth * bandwidth
    kaa = np.exp(-_sqdist(a, a) / (2.0 * s2))
    kbb = np.exp(-_sqdist(b, b) / (2.0 * s2))
    kab = np.exp(-_sqdist(a, b) / (2.0 * s2))
    kaa_wa = kaa @ wa
    kbb_wb = kbb @ wb
    kab_wb = kab @ wb
    kab_wa = kab.T @ wa
    value = wa @ kaa_wa + wb @ kbb_wb - 2.0 * (wa @ kab_wb)

    gwa = 2.0 * kaa_wa - 2.0 * kab_wb
    gwb = 2.0 * kbb_wb - 2.0 * kab_wa

    # d k(x, y) / dx = -k (x - y) / s2
    maa = kaa * wa[None, :]
    mab = kab * wb[None, :]
    ga = (-2.0 / s2) * wa[:, None] * (
        (maa.sum(1)[:, None] * a - maa @ a) - (mab.sum(1)[:, None] * a - mab @ b)
    )
    mbb = kbb * wb[None, :]
    mba = kab.T * wa[None, :]
    gb = (-2.0 / s2) * wb[:, None] * (
        (mbb.sum(1)[:, None] * b - mbb @ b) - (mba.sum(1)[:, None] * b - mba @ a)
    )
    return float(value), ga, gb, gwa, gwb
