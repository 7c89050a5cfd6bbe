from pathlib import Path

import numpy as np
import pytest

from hystflow.density import DecayFamily, UniformBox
from hystflow.grid import interval_mesh, rectangle_mesh
from hystflow.problem import BoundaryValue, Kappa, Problem

ROOT = Path(__file__).resolve().parents[1]
REFERENCE = ROOT / "scenarios" / "reference.json"


def hysteretic_problem(n=64, b_left=1.0, gravity=True, u_star=None, v0=0.0, u0=None,
                       kappa=(0.5, 1.5), K=64, Lambda=2.0):
    mesh = interval_mesh(0.0, 1.0, n)
    x = mesh.coords[:, 0]
    if u_star is None:
        u_star = BoundaryValue(times=[0.0, 0.25, 0.5, 0.75, 1.0],
                               values=[-0.5, 0.5, -0.8, 0.3, -0.2])
    return Problem.build(
        mesh, DecayFamily(4.0, 0.5, G_bar=0.5), Lambda=Lambda, K=K,
        u0=x - 0.5 if u0 is None else u0, v0=v0,
        kappa=Kappa(*kappa), nu=[-1.0] if gravity else [0.0],
        b_star={"left": b_left} if b_left else {}, u_star=u_star,
    )


@pytest.fixture
def reference_problem():
    return hysteretic_problem()


@pytest.fixture
def closed_problem():
    mesh = interval_mesh(0.0, 1.0, 64)
    x = mesh.coords[:, 0]
    return hysteretic_problem(b_left=0.0, v0=0.3 * np.cos(np.pi * x))


@pytest.fixture
def square_problem():
    mesh = rectangle_mesh((0.0, 1.0), (0.0, 1.0), 6, 5)
    y = mesh.coords[:, 1]
    return Problem.build(
        mesh, UniformBox((0.0, 1.0), (-1.0, 1.0), 0.25), Lambda=2.0, K=32,
        u0=0.3 - 0.6 * y, v0=0.1, kappa=Kappa(0.5, 1.5), nu=[0.0, -1.0],
        b_star={"bottom": 1.0, "right": 0.5}, u_star=BoundaryValue(0.2),
    )


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; returns ``ok`` so the test can assert on it."""
    def record(number, ok, detail):
        _CRITERIA[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
