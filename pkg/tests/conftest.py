import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_cp(rng, dims, rank, lambdas=None):
    """Generic unit-column factors and the tensor they build."""
    m, n, k = dims
    A, B, C = (rng.standard_normal((d, rank)) for d in dims)
    A, B, C = (X / np.linalg.norm(X, axis=0) for X in (A, B, C))
    lam = rng.uniform(1.0, 3.0, rank) if lambdas is None else np.asarray(lambdas, float)
    return lam, A, B, C, np.einsum("r,ir,jr,sr->ijs", lam, A, B, C)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
