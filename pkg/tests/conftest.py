import itertools

import numpy as np
import pytest

from bayestensor import kernels
from bayestensor.tensor import CPFactors


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical checks")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=["cython", "python"])
def backend(request, monkeypatch):
    """Route the sampler's kernels through one backend for the test."""
    if request.param == "cython" and kernels.BACKEND != "cython":
        pytest.skip("compiled extension not built")
    mod = kernels.backend_module(request.param)
    monkeypatch.setattr(kernels, "entry_products", mod.entry_products)
    monkeypatch.setattr(kernels, "predict_raw", mod.predict)
    monkeypatch.setattr(kernels, "mode_gram_raw", mod.mode_gram)
    return request.param


def random_factors(rng, dims, rank, integer=False):
    if integer:
        return CPFactors(tuple(rng.integers(-3, 4, size=(rank, m)).astype(float) for m in dims))
    return CPFactors(tuple(rng.standard_normal((rank, m)) for m in dims))


def brute_compose(factors):
    """Dense tensor from explicit loops over the rank and every index."""
    dims = factors.shape.dims
    out = np.zeros(dims)
    for idx in itertools.product(*(range(m) for m in dims)):
        total = 0.0
        for r in range(factors.rank):
            p = 1.0
            for k, j in enumerate(idx):
                p *= factors.factors[k][r, j]
            total += p
        out[idx] = total
    return out


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line; all lines print in the terminal summary."""

    def _report(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
