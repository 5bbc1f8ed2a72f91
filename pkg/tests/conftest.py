import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ordtrans import _backend, _kernels_py

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=100
)
settings.load_profile("default")

try:
    from ordtrans import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled


@pytest.fixture(params=["python", "compiled"])
def backend(request, monkeypatch):
    """Run the test once per likelihood kernel."""
    mod = BACKENDS.get(request.param)
    if mod is None:
        pytest.skip("compiled kernels not built")
    monkeypatch.setattr(_backend, "loglik_grad", mod.loglik_grad)
    monkeypatch.setattr(_backend, "probabilities", mod.probabilities)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
