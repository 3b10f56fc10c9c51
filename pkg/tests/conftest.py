"""Shared integrands, shapes and solved potentials for the test suite."""
import numpy as np
import pytest

from anisolab.integrand import make_integrand
from anisolab.torsion import solve_torsion
from anisolab.wulff import build_wulff

SQUARE_NORMALS = [[1, 0], [0, 1], [-1, 0], [0, -1]]

SPECS = {
    "isotropic": {"kind": "isotropic"},
    "ellipse": {"kind": "ellipse", "params": {"axes": [2.0, 1.0]}},
    "pnorm": {"kind": "pnorm", "params": {"p": 3.0}},
    "crystal": {"kind": "crystal", "params": {"normals": SQUARE_NORMALS, "eps": 0.2}},
    "tabulated": {"kind": "tabulated", "params": {
        "support": (1.0 + 0.1 * np.cos(3.0 * np.linspace(0.0, 2.0 * np.pi, 64,
                                                           endpoint=False))).tolist()}},
}


def integrand(name):
    return make_integrand(SPECS[name])


@pytest.fixture(scope="session")
def iso():
    return integrand("isotropic")


@pytest.fixture(scope="session")
def ellipse():
    return integrand("ellipse")


@pytest.fixture(scope="session")
def disk64(iso):
    """Unit disk at h = 1/64 with its torsion potential."""
    K = build_wulff(iso, 1 / 64)
    return K, solve_torsion(K.domain, iso)


@pytest.fixture(scope="session")
def ellipse_wulff64(ellipse):
    K = build_wulff(ellipse, 1 / 64)
    return K, solve_torsion(K.domain, ellipse)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
