"""Backend selection for the hot loops.

The compiled ``_ckernels`` extension is used when importable; otherwise (or
when the ``BAYESTENSOR_PURE_PYTHON`` environment variable is non-empty) the
numpy fallback in ``_pykernels`` takes over. Both expose identical functions.
"""

import os

import numpy as np

from . import _pykernels

if os.environ.get("BAYESTENSOR_PURE_PYTHON"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

entry_products = _impl.entry_products
predict_raw = _impl.predict
mode_gram_raw = _impl.mode_gram


def backend_module(name):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _pykernels
    from . import _ckernels

    return _ckernels


def global_indices(factors_or_shape, design):
    """Entry indices shifted into rows of ``CPFactors.packed_columns()``."""
    dims = getattr(factors_or_shape, "shape", factors_or_shape)
    offsets = np.concatenate(([0], np.cumsum(tuple(dims))[:-1])).astype(np.int64)
    return np.ascontiguousarray(design.entry_indices + offsets)


def predict(factors, design, gidx=None):
    """``<A_U, X_i>`` for every observation without composing ``A_U``."""
    if design.n == 0:
        return np.zeros(0)
    if factors.rank == 0:
        return np.zeros(design.n)
    if gidx is None:
        gidx = global_indices(factors, design)
    return predict_raw(factors.packed_columns(), gidx, design.entry_weights, design.ptr)
