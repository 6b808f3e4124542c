import numpy as np
import pytest

from carroll_forge.carroll import CarrollStructure, EhresmannForm, boost_to_principal
from carroll_forge.geometry import Chart

UNIT_BOX = ((0.0, 2.0), (-1.0, 1.0), (-1.0, 1.0))
SPHERE_BOX = ((0.0, 2.0), (0.3, 2.8), (-1.0, 1.0))

# name -> (m11, m21, m22, w1, w2, domain)
GALLERY = {
    "flat": ("1", "0", "1", "0", "0", UNIT_BOX),
    "expanding": ("exp(u)", "0", "exp(u)", "0", "0", UNIT_BOX),
    "shear": ("1", "u", "1", "0", "0", UNIT_BOX),
    "twisted": ("1", "0", "1", "y", "0", UNIT_BOX),
    "drift": ("1", "0", "1", "0", "u", UNIT_BOX),
    "sphere": ("1", "0", "sin(x)", "0", "0", SPHERE_BOX),
}


class Case:
    def __init__(self, name, n=64, seed=0):
        m11, m21, m22, w1, w2, dom = GALLERY[name]
        self.name = name
        self.chart = Chart(domain=dom)
        self.points = self.chart.sample(n, seed)
        self.c = CarrollStructure.from_strings(self.chart, m11, m21, m22)
        self.omega = EhresmannForm.from_strings(self.chart, w1, w2)
        self.nu = boost_to_principal(self.omega, self.chart)

    def parse(self, text):
        return self.chart.parse(text)


def make_case(name, n=64, seed=0):
    return Case(name, n, seed)


@pytest.fixture(params=sorted(GALLERY))
def gallery_case(request):
    return make_case(request.param)


def values(arr, points):
    """Evaluate an expression array to shape arr.shape + (npts,)."""
    from carroll_forge.policy import evaluate_components

    arr = np.asarray(arr, dtype=object)
    v = evaluate_components([arr], points)[0]
    return v.reshape(arr.shape + (v.shape[1],))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
