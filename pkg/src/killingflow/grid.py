"""Structured rectangular charts, finite-difference stencils and quadrature.

Nodes are stored in C order, so a 2D field ``u`` of shape ``(m0, m1)`` is
flattened as ``u.ravel()`` with the second coordinate varying fastest.  All
difference operators are sparse matrices acting on flattened node vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DomainError


class Side(NamedTuple):
    """One edge of the chart.

    ``sign`` is the orientation of the inward normal along ``axis``: +1 on the
    lower edge, -1 on the upper edge.  ``index`` lists the flat node indices of
    the edge ordered along the tangential axis (a single node in 1D).
    """

    key: str
    axis: int
    sign: int
    index: np.ndarray


@dataclass(frozen=True)
class Chart:
    """Closed box ``[lower, upper]`` in R^n (n = 1 or 2) sampled by a uniform grid."""

    lower: tuple
    upper: tuple
    shape: tuple

    def __post_init__(self):
        lower = tuple(float(a) for a in np.atleast_1d(self.lower))
        upper = tuple(float(b) for b in np.atleast_1d(self.upper))
        shape = tuple(int(m) for m in np.atleast_1d(self.shape))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "shape", shape)
        problems = []
        if not (len(lower) == len(upper) == len(shape)):
            problems.append("lower, upper and shape must have the same length")
        elif len(shape) not in (1, 2):
            problems.append(f"only 1D and 2D charts are supported, got dim={len(shape)}")
        else:
            for k, (a, b, m) in enumerate(zip(lower, upper, shape)):
                if not b > a:
                    problems.append(f"axis {k}: empty interval [{a}, {b}]")
                if m < 4:
                    problems.append(f"axis {k}: need at least 4 nodes, got {m}")
        if problems:
            raise ConfigError("invalid chart", problems)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def h(self) -> tuple:
        return tuple((b - a) / (m - 1) for a, b, m in zip(self.lower, self.upper, self.shape))

    @cached_property
    def axes(self) -> tuple:
        return tuple(np.linspace(a, b, m) for a, b, m in zip(self.lower, self.upper, self.shape))

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(*shape, dim)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    @cached_property
    def sides(self) -> tuple:
        idx = np.arange(self.size).reshape(self.shape)
        out = []
        for axis in range(self.dim):
            for sign, pos, tag in ((1, 0, "-"), (-1, -1, "+")):
                nodes = np.take(idx, pos, axis=axis).ravel()
                out.append(Side(f"x{axis + 1}{tag}", axis, sign, nodes))
        return tuple(out)

    def side(self, key: str) -> Side:
        for s in self.sides:
            if s.key == key:
                return s
        raise KeyError(key)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        for s in self.sides:
            mask[s.index] = True
        return mask.reshape(self.shape)

    @cached_property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    def contains(self, x, atol: float = 1e-12) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo = np.asarray(self.lower) - atol
        hi = np.asarray(self.upper) + atol
        return np.all((x >= lo) & (x <= hi), axis=-1)

    def check_points(self, x):
        if not np.all(self.contains(x)):
            raise DomainError(f"point(s) outside the chart {self.lower}..{self.upper}")

    def refine(self, shape) -> "Chart":
        return Chart(self.lower, self.upper, shape)


# ---------------------------------------------------------------------------
# 1D building blocks


def _central1(m, h):
    """Centered first difference; rows at both ends are left empty."""
    lo = np.full(m - 1, -0.5 / h)
    up = np.full(m - 1, 0.5 / h)
    lo[-1] = 0.0
    up[0] = 0.0
    return sp.diags([lo, up], [-1, 1], shape=(m, m), format="lil")


def _onesided1(m, h):
    """Second-order first derivative everywhere (``np.gradient`` with edge_order=2)."""
    D = _central1(m, h)
    D[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    D[m - 1, m - 3:] = np.array([1.0, -4.0, 3.0]) / (2 * h)
    return D.tocsr()


def _central2_ghost(m, h):
    """Second difference with the ghost node eliminated through the normal slope."""
    D = sp.diags([np.ones(m - 1), -2.0 * np.ones(m), np.ones(m - 1)], [-1, 0, 1],
                 shape=(m, m), format="lil")
    D[0, 1] = 2.0
    D[m - 1, m - 2] = 2.0
    return (D / h**2).tocsr()


def _onesided2(m, h):
    D = sp.diags([np.ones(m - 1), -2.0 * np.ones(m), np.ones(m - 1)], [-1, 0, 1],
                 shape=(m, m), format="lil")
    D[0, :4] = [2.0, -5.0, 4.0, -1.0]
    D[m - 1, :] = 0.0
    D[m - 1, m - 4:] = [-1.0, 4.0, -5.0, 2.0]
    return (D / h**2).tocsr()


def _embed(chart, op1d, axis):
    if chart.dim == 1:
        return sp.csr_matrix(op1d)
    eye = [sp.identity(m, format="csr") for m in chart.shape]
    if axis == 0:
        return sp.kron(op1d, eye[1], format="csr")
    return sp.kron(eye[0], op1d, format="csr")


def _edge_vector(chart, axis, lo_value, hi_value):
    v = np.zeros(chart.shape)
    sl = [slice(None)] * chart.dim
    sl[axis] = 0
    v[tuple(sl)] = lo_value
    sl[axis] = -1
    v[tuple(sl)] = hi_value
    return v.ravel()


class Stencils(NamedTuple):
    """Sparse difference operators on a chart.

    ``first``/``second``/``mixed`` are second-order one-sided-at-the-boundary
    operators for arbitrary fields.  The ``*_closed`` operators leave the
    normal-direction boundary rows empty; the matching ``q_*`` maps inject a
    prescribed normal slope ``q[axis]`` (the ghost-node elimination).
    """

    first: tuple
    second: tuple
    mixed: object
    first_closed: tuple
    second_closed: tuple
    mixed_closed: object
    q_first: tuple
    q_second: tuple
    q_mixed: tuple


@lru_cache(maxsize=32)
def stencils(chart: Chart) -> Stencils:
    n = chart.dim
    first, second, first_c, second_c, q_first, q_second = [], [], [], [], [], []
    for axis in range(n):
        m, h = chart.shape[axis], chart.h[axis]
        first.append(_embed(chart, _onesided1(m, h), axis))
        second.append(_embed(chart, _onesided2(m, h), axis))
        first_c.append(_embed(chart, _central1(m, h).tocsr(), axis))
        second_c.append(_embed(chart, _central2_ghost(m, h), axis))
        q_first.append(sp.diags(_edge_vector(chart, axis, 1.0, 1.0), format="csr"))
        q_second.append(sp.diags(_edge_vector(chart, axis, -2.0 / h, 2.0 / h), format="csr"))
    if n == 1:
        return Stencils(tuple(first), tuple(second), None, tuple(first_c), tuple(second_c),
                        None, tuple(q_first), tuple(q_second), ())
    m0, m1 = chart.shape
    h0, h1 = chart.h
    mixed = sp.kron(_onesided1(m0, h0), _onesided1(m1, h1), format="csr")
    mixed_c = sp.kron(_central1(m0, h0).tocsr(), _central1(m1, h1).tocsr(), format="csr")
    # On an edge the mixed derivative is the tangential difference of the
    # prescribed normal slope; corners average the two edges.
    on0 = _edge_vector(chart, 0, 1.0, 1.0).astype(bool)
    on1 = _edge_vector(chart, 1, 1.0, 1.0).astype(bool)
    w0 = np.where(on0 & on1, 0.5, on0.astype(float))
    w1 = np.where(on0 & on1, 0.5, on1.astype(float))
    q_mixed = (sp.diags(w0) @ first[1], sp.diags(w1) @ first[0])
    return Stencils(tuple(first), tuple(second), mixed, tuple(first_c), tuple(second_c),
                    mixed_c, tuple(q_first), tuple(q_second),
                    tuple(sp.csr_matrix(q) for q in q_mixed))


# ---------------------------------------------------------------------------
# quadrature


def trapezoid_weights(chart: Chart) -> np.ndarray:
    """Composite trapezoid weights for the coordinate measure, shape ``chart.shape``."""
    ws = []
    for m, h in zip(chart.shape, chart.h):
        w = np.full(m, h)
        w[0] = w[-1] = 0.5 * h
        ws.append(w)
    if chart.dim == 1:
        return ws[0]
    return np.outer(ws[0], ws[1])


def side_weights(chart: Chart, side: Side) -> np.ndarray:
    """Trapezoid weights along one edge (coordinate length); a unit mass in 1D."""
    if chart.dim == 1:
        return np.ones(1)
    t = 1 - side.axis
    m, h = chart.shape[t], chart.h[t]
    w = np.full(m, h)
    w[0] = w[-1] = 0.5 * h
    return w
