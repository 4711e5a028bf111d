import numpy as np
import pytest

from evospace.instances import NAMES, InstanceSpec, make_instance
from evospace.space import SpaceFamily, TimeGrid


def scalar_family(weight, weight_dot=None, T=1.0, n=1, stiff=None):
    """``B(t) = w(t) I``; ``K`` defaults to ``B``."""
    eye = np.eye(n)
    K = (lambda t: weight(t) * eye) if stiff is None else stiff
    B_dot = None if weight_dot is None else (lambda t: weight_dot(t) * eye)
    return SpaceFamily(n, T, B=lambda t: weight(t) * eye, K=K, B_dot=B_dot)


def identity_family(n=2, T=1.0):
    eye = np.eye(n)
    return SpaceFamily(n, T, B=lambda t: eye, K=lambda t: eye, B_dot=lambda t: 0 * eye, name="identity")


@pytest.fixture
def grid():
    return TimeGrid.uniform(1.0, 20)


@pytest.fixture(params=NAMES)
def instance(request):
    return make_instance(InstanceSpec(request.param))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
