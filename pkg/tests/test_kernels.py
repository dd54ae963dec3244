import numpy as np
import pytest

from bayestensor import kernels
from bayestensor.designs import DesignSet, Observation, SparseMeasurement
from bayestensor.tensor import cp_compose

from conftest import random_factors


def _design(rng, shape, n, per_obs):
    obs = []
    for _ in range(n):
        idx = np.column_stack([rng.integers(0, m, per_obs) for m in shape])
        w = rng.uniform(-1, 1, per_obs)
        obs.append(Observation(SparseMeasurement(shape, idx, w / np.abs(w).sum()), float(rng.normal())))
    return DesignSet.from_observations(shape, obs)


def _inputs(rng, shape=(4, 3, 5), rank=3, n=30, per_obs=2):
    f = random_factors(rng, shape, rank)
    d = _design(rng, shape, n, per_obs)
    return f, d, f.packed_columns(), kernels.global_indices(f, d)


class TestBackends:
    def test_backend_flag(self):
        assert kernels.BACKEND in ("cython", "python")

    def test_predict_matches_dense(self, rng, backend):
        f, d, cols, gidx = _inputs(rng)
        np.testing.assert_allclose(kernels.predict(f, d), d.project(cp_compose(f)), rtol=1e-12, atol=1e-13)

    def test_entry_products_vs_loop(self, rng, backend):
        f, d, cols, gidx = _inputs(rng)
        for skip in range(3):
            got = kernels.entry_products(cols, gidx, d.entry_weights, skip)
            ref = np.empty((d.entry_weights.size, f.rank))
            for e, idx in enumerate(d.entry_indices):
                for r in range(f.rank):
                    p = d.entry_weights[e]
                    for k, j in enumerate(idx):
                        if k != skip:
                            p *= f.factors[k][r, j]
                    ref[e, r] = p
            np.testing.assert_allclose(got, ref, rtol=1e-13, atol=1e-15)

    def test_mode_gram_vs_loop(self, rng, backend):
        f, d, cols, gidx = _inputs(rng, per_obs=1)
        offsets = f.offsets
        for k in range(3):
            M = f.shape[k]
            gram, rhs = kernels.mode_gram_raw(cols, gidx, d.entry_weights, d.ptr, d.y, k, int(offsets[k]), M)
            g_ref = np.zeros((M, f.rank, f.rank))
            r_ref = np.zeros((M, f.rank))
            for e, idx in enumerate(d.entry_indices):
                b = d.entry_weights[e] * np.prod([f.factors[q][:, idx[q]] for q in range(3) if q != k], axis=0)
                g_ref[idx[k]] += np.outer(b, b)
                r_ref[idx[k]] += b * d.y[e]
            np.testing.assert_allclose(gram, g_ref, rtol=1e-12, atol=1e-14)
            np.testing.assert_allclose(rhs, r_ref, rtol=1e-12, atol=1e-14)

    def test_backends_agree(self, rng):
        if kernels.BACKEND != "cython":
            pytest.skip("compiled extension not built")
        c, p = kernels.backend_module("cython"), kernels.backend_module("python")
        f, d, cols, gidx = _inputs(rng, shape=(6, 5, 7, 3), rank=4, n=200, per_obs=1)
        np.testing.assert_allclose(c.predict(cols, gidx, d.entry_weights, d.ptr),
                                   p.predict(cols, gidx, d.entry_weights, d.ptr), rtol=1e-13)
        for k in range(4):
            np.testing.assert_allclose(c.entry_products(cols, gidx, d.entry_weights, k),
                                       p.entry_products(cols, gidx, d.entry_weights, k), rtol=1e-13)
            args = (cols, gidx, d.entry_weights, d.ptr, d.y, k, int(f.offsets[k]), f.shape[k])
            for a, b in zip(c.mode_gram(*args), p.mode_gram(*args)):
                np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)

    def test_rank_zero_and_empty(self, rng, backend):
        f = random_factors(rng, (2, 3), 0)
        d = _design(rng, (2, 3), 4, 1)
        np.testing.assert_array_equal(kernels.predict(f, d), np.zeros(4))
        assert kernels.predict(random_factors(rng, (2, 3), 2), DesignSet.empty((2, 3))).size == 0
