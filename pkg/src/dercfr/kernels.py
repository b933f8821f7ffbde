"""Backend selection for the hot kernels.

The compiled extension is preferred; the numpy module is used when the
extension was not built or when ``DERCFR_PURE_PYTHON`` is set to a truthy
value before import. ``BACKEND`` names the module in use.
"""
import os

import numpy as np

from . import _kernels_py

if os.environ.get("DERCFR_PURE_PYTHON", "").strip().lower() in ("1", "true", "yes"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"


def _c(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def elu_forward(x):
    return _impl.elu_forward(_c(x))


def elu_backward(g, x, y):
    return _impl.elu_backward(_c(g), _c(x), _c(y))


def sigmoid_forward(x):
    return _impl.sigmoid_forward(_c(x))


def batchnorm_forward(x, gamma, beta, eps):
    return _impl.batchnorm_forward(_c(x), _c(gamma), _c(beta), float(eps))


def batchnorm_backward(g, xhat, inv_std, gamma):
    return _impl.batchnorm_backward(_c(g), _c(xhat), _c(inv_std), _c(gamma))


# Gram-matrix entries above which the streaming compiled rbf kernel is used;
# below it the BLAS-backed numpy version is faster.
RBF_GRAM_LIMIT = 4_000_000


def rbf_mmd(a, b, wa, wb, bandwidth):
    impl = _impl if (len(a) + len(b)) ** 2 > RBF_GRAM_LIMIT else _kernels_py
    return impl.rbf_mmd(_c(a), _c(b), _c(wa), _c(wb), float(bandwidth))
