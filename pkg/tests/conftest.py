"""Shared exact profiles and geometries for the test suite."""

import numpy as np
import pytest

from killingflow.ambient import EuclideanProduct, ExponentialWarp, Helicoidal
from killingflow.config import expression_geometry
from killingflow.graph_geometry import GraphState
from killingflow.grid import Chart


def order(errors):
    e = np.asarray(errors, dtype=float)
    return np.log2(e[:-1] / e[1:])


def grim_chart(m):
    return Chart((-1.0,), (1.0,), (m,))


def grim_state(geometry, chart):
    x = chart.points[..., 0]
    return GraphState.from_derivatives(geometry, chart, -np.log(np.cos(x)), np.tan(x),
                                       1.0 / np.cos(x) ** 2)


def helicoid_chart(m):
    return Chart((1.0, 0.0), (2.0, 1.0), (m, m))


def helicoid_state(geometry, chart):
    z = chart.points[..., 1]
    zero = np.zeros_like(z)
    return GraphState.from_derivatives(geometry, chart, z, np.stack([zero, zero + 1], -1),
                                       np.zeros(z.shape + (2, 2)))


PLANE_P = 0.5


def plane_profile(x):
    """u = arcsin(p/r): a minimal Killing graph of the Helicoidal geometry (a vertical plane)."""
    return np.arcsin(PLANE_P / x[..., 0])


def plane_state(geometry, chart):
    r = chart.points[..., 0]
    p = PLANE_P
    ur = -p / (r * np.sqrt(r * r - p * p))
    urr = p * (2 * r * r - p * p) / (r * r * (r * r - p * p) ** 1.5)
    zero = np.zeros_like(r)
    hess = np.stack([np.stack([urr, zero], -1), np.stack([zero, zero], -1)], -2)
    return GraphState.from_derivatives(geometry, chart, plane_profile(chart.points),
                                       np.stack([ur, zero], -1), hess)


class RandomProfile:
    """u = sum_k a_k sin(w_k . x + b_k) with exact derivatives."""

    def __init__(self, rng, dim, terms=3, amp=0.3, freq=2.0):
        self.a = rng.uniform(-amp, amp, terms)
        self.w = rng.uniform(-freq, freq, (terms, dim))
        self.b = rng.uniform(0, 2 * np.pi, terms)

    def _arg(self, x):
        return np.einsum("...i,ki->...k", x, self.w) + self.b

    def __call__(self, x):
        return np.sin(self._arg(x)) @ self.a

    def grad(self, x):
        return np.einsum("...k,ki->...i", np.cos(self._arg(x)) * self.a, self.w)

    def hess(self, x):
        return -np.einsum("...k,ki,kj->...ij", np.sin(self._arg(x)) * self.a, self.w, self.w)

    def state(self, geometry, chart):
        return GraphState.from_callables(geometry, chart, self, self.grad, self.hess)


def polar_geometry():
    """Curved leaf: sigma = dr^2 + r^2 dt^2 written in (r, t), gamma = 1 + r^2."""
    return expression_geometry(2, "1 + r^2", [["1", "0"], ["0", "r^2"]])


GEOMETRY_CASES = {
    "euclid1": (lambda: EuclideanProduct(1), lambda m: Chart((-1.0,), (1.0,), (m,))),
    "euclid2": (lambda: EuclideanProduct(2), lambda m: Chart((0.0, 0.0), (1.0, 1.0), (m, m))),
    "helicoidal": (lambda: Helicoidal(), helicoid_chart),
    "expwarp": (lambda: ExponentialWarp(0.5), lambda m: Chart((-1.0,), (1.0,), (m,))),
    "polar": (polar_geometry, lambda m: Chart((1.0, 0.0), (2.0, 1.0), (m, m))),
}


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# ---------------------------------------------------------------------------
# acceptance summary

ACCEPTANCE = {}


def record_criterion(number, ok, detail):
    """Store and print one PASS/FAIL line for an acceptance criterion."""
    line = f"CRITERION {number:2d} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
