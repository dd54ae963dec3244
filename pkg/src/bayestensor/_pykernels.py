"""Pure numpy implementations of the sampler's inner loops.

Same signatures and results as the compiled ``_ckernels`` module; used when
the extension is not built or ``BAYESTENSOR_PURE_PYTHON`` is set.

Conventions shared by both backends:

* ``cols`` is ``(sum M_k, d)``: row ``offset_k + j`` holds ``U^(k)[:, j]``.
* ``gidx`` is ``(nnz, K)`` int64 of *global* rows into ``cols``.
* ``ptr`` is the CSR row pointer mapping observations to entries.
"""

import numpy as np


def entry_products(cols, gidx, w, skip):
    """``w_e * prod_{k != skip} cols[gidx[e, k]]`` for every entry, ``(nnz, d)``."""
    nnz, K = gidx.shape
    out = np.repeat(w[:, None], cols.shape[1], axis=1)
    for k in range(K):
        if k != skip:
            out *= cols[gidx[:, k]]
    return out


def predict(cols, gidx, w, ptr):
    n = ptr.shape[0] - 1
    per_entry = entry_products(cols, gidx, w, -1).sum(axis=1)
    if per_entry.shape[0] == n:
        return per_entry
    obs = np.repeat(np.arange(n), np.diff(ptr))
    return np.bincount(obs, weights=per_entry, minlength=n)


def mode_gram(cols, gidx, w, ptr, y, k, offset, M):
    """Per-column Gram matrices and right-hand sides for mode ``k``.

    Requires every observation's entries to share one mode-``k`` index, so
    that observation ``i`` only touches column ``gidx[ptr[i], k] - offset``.
    """
    n = ptr.shape[0] - 1
    d = cols.shape[1]
    prods = entry_products(cols, gidx, w, k)
    if prods.shape[0] == n:
        b = prods
    else:
        obs = np.repeat(np.arange(n), np.diff(ptr))
        b = np.zeros((n, d))
        np.add.at(b, obs, prods)
    col = gidx[ptr[:-1], k] - offset if n else np.zeros(0, np.int64)
    gram = np.zeros((M, d, d))
    rhs = np.zeros((M, d))
    np.add.at(gram, col, b[:, :, None] * b[:, None, :])
    np.add.at(rhs, col, b * y[:, None])
    return gram, rhs
