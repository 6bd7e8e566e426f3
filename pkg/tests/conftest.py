import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("qelab", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("qelab")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_unitary(rng, m):
    z = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    q, r = np.linalg.qr(z)
    q = q * (np.diag(r) / np.abs(np.diag(r)))
    return q / np.linalg.det(q) ** (1 / m)
