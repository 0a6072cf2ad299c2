"""Pointwise extrinsic geometry of a Killing graph ``x -> theta(u(x), x)``.

All quantities are expressed through the leaf data (sigma, gamma) and the
derivatives of ``u``.  The normal is ``N = (gamma Y - grad u) / W`` and mean
curvature is reported as ``nH`` (n times the mean curvature) for that normal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ambient import AmbientGeometry, NodeGeometry
from .errors import NumericError, UnsupportedRegimeError
from .grid import Chart, stencils


@dataclass
class GraphState:
    """Height function on the nodes of a chart with its derivatives.

    ``du`` holds the partials u_i, ``d2u`` the covariant Hessian u_{i;j} with
    respect to sigma.  ``kind`` records where the derivatives came from:
    ``"analytic"``, ``"fd"`` (one-sided stencils at the boundary) or
    ``"closed"`` (ghost nodes set by the contact-angle closure).
    """

    chart: Chart
    u: np.ndarray
    du: np.ndarray
    d2u: np.ndarray
    t: float = 0.0
    kind: str = "fd"
    closure: Optional[object] = None

    @classmethod
    def from_derivatives(cls, geometry, chart, u, grad, hess, t=0.0):
        """Build a state from partial derivatives (``hess`` holds d_i d_j u)."""
        ng = geometry.on_chart(chart)
        n = chart.dim
        u = np.asarray(u, dtype=float).reshape(chart.shape)
        p = np.asarray(grad, dtype=float).reshape(-1, n)
        S = np.asarray(hess, dtype=float).reshape(-1, n, n)
        cov = S - np.einsum("pkij,pk->pij", ng.christoffel, p)
        return cls(chart, u, p.reshape(chart.shape + (n,)),
                   cov.reshape(chart.shape + (n, n)), float(t), "analytic")

    @classmethod
    def from_callables(cls, geometry, chart, f, grad, hess, t=0.0):
        """Sample ``f``, ``grad`` and ``hess`` (vectorized callables) on the nodes."""
        x = chart.points
        return cls.from_derivatives(geometry, chart, f(x), grad(x), hess(x), t)

    @classmethod
    def from_field(cls, geometry, chart, u, t=0.0):
        """Finite-difference derivatives, second order including the boundary."""
        ng = geometry.on_chart(chart)
        st = stencils(chart)
        u = np.asarray(u, dtype=float).reshape(chart.shape)
        p, S = fd_derivatives(st, u.ravel(), chart.dim)
        cov = S - np.einsum("pkij,pk->pij", ng.christoffel, p)
        n = chart.dim
        return cls(chart, u, p.reshape(chart.shape + (n,)),
                   cov.reshape(chart.shape + (n, n)), float(t), "fd")

    # flattened views
    @property
    def p(self):
        return self.du.reshape(-1, self.chart.dim)

    @property
    def S(self):
        n = self.chart.dim
        return self.d2u.reshape(-1, n, n)


def fd_derivatives(st, uf, n):
    p = np.stack([st.first[i] @ uf for i in range(n)], axis=-1)
    S = np.empty((uf.size, n, n))
    for i in range(n):
        S[:, i, i] = st.second[i] @ uf
    if n == 2:
        S[:, 0, 1] = S[:, 1, 0] = st.mixed @ uf
    return p, S


@dataclass
class ShapeData:
    W: np.ndarray
    g: np.ndarray
    g_inv: np.ndarray
    N_vertical: np.ndarray
    N_horizontal: np.ndarray
    a: np.ndarray
    H: np.ndarray
    normA2: np.ndarray


@dataclass
class DistanceData:
    """Extension ``d`` of the boundary distance with theta = <grad d, N> and kappa."""

    d: np.ndarray
    grad_d: np.ndarray
    hess_d: np.ndarray
    theta: np.ndarray
    kappa: np.ndarray


# ---------------------------------------------------------------------------
# nodewise algebra on flattened arrays


def raise_index(ng: NodeGeometry, p):
    return np.einsum("pij,pj->pi", ng.sigma_inv, p)


def _W(ng, p):
    grad2 = np.einsum("pi,pi->p", p, raise_index(ng, p))
    W = np.sqrt(ng.gamma + grad2)
    if not np.all(np.isfinite(W)):
        raise NumericError("non-finite derivatives of u")
    return W


def _g_inv(ng, p, W):
    up = raise_index(ng, p)
    return ng.sigma_inv - np.einsum("pi,pj->pij", up, up) / W[:, None, None] ** 2


def _a_eq12(ng, p, S, W):
    g = ng.gamma
    gi = ng.grad_gamma
    ug = np.einsum("pi,pi->p", raise_index(ng, p), gi)
    Wc = W[:, None, None]
    return (S / Wc
            - np.einsum("pi,pj->pij", p, gi) / (2 * g[:, None, None] * Wc)
            - np.einsum("pj,pi->pij", p, gi) / (2 * g[:, None, None] * Wc)
            - np.einsum("pi,pj->pij", p, p) * (ug / (2 * W * g**2))[:, None, None])


def _a_eq13(ng, p, S, W):
    # nabla_Y Y = grad(gamma) / (2 gamma^2) as a vector; lower it with sigma.
    acc = ng.grad_gamma_up / (2 * ng.gamma[:, None] ** 2)
    acc_lower = np.einsum("pij,pj->pi", ng.sigma, acc)
    g_acc = ng.gamma[:, None] * acc_lower  # gamma <nabla_Y Y, d/dx^j>
    acc_u = np.einsum("pi,pi->p", acc, p)  # <nabla_Y Y, grad u>
    Wc = W[:, None, None]
    return (S / Wc
            - np.einsum("pi,pj->pij", p, g_acc) / Wc
            - np.einsum("pj,pi->pij", p, g_acc) / Wc
            - np.einsum("pi,pj->pij", p, p) * (acc_u / W)[:, None, None])


def _trace_H(ng, p, S, W):
    return np.einsum("pij,pij->p", _g_inv(ng, p, W), _a_eq12(ng, p, S, W))


def _expanded_div_H(ng, p, S, W):
    up = raise_index(ng, p)
    g = ng.gamma
    # W_i = (gamma_i + 2 u^k u_{k;i}) / (2W)
    Wi = (ng.grad_gamma + 2 * np.einsum("pk,pki->pi", up, S)) / (2 * W[:, None])
    lap = np.einsum("pij,pij->p", ng.sigma_inv, S)
    div = lap / W - np.einsum("pi,pi->p", up, Wi) / W**2
    ug = np.einsum("pi,pi->p", up, ng.grad_gamma)
    return div - ug / (2 * g * W)


def _flux_div_H(ng, state, W):
    chart = state.chart
    st = stencils(chart)
    p = state.p
    flux = ng.sqrt_det[:, None] * raise_index(ng, p) / W[:, None]
    div = sum(st.first[i] @ flux[:, i] for i in range(chart.dim)) / ng.sqrt_det
    ug = np.einsum("pi,pi->p", ng.grad_gamma_up, p)
    return div - ug / (2 * ng.gamma * W)


# ---------------------------------------------------------------------------
# public operations


def _shape(state, arr, extra=()):
    return arr.reshape(state.chart.shape + extra)


def compute_W(geometry: AmbientGeometry, state: GraphState) -> np.ndarray:
    """Area factor W = sqrt(gamma + |grad u|^2) on every node."""
    ng = geometry.on_chart(state.chart)
    return _shape(state, _W(ng, state.p))


def induced_metric(geometry, state):
    """``(g, g_inv)`` with g_ij = sigma_ij + u_i u_j / gamma and its closed-form inverse."""
    ng = geometry.on_chart(state.chart)
    p = state.p
    W = _W(ng, p)
    g = ng.sigma + np.einsum("pi,pj->pij", p, p) / ng.gamma[:, None, None]
    n = state.chart.dim
    return _shape(state, g, (n, n)), _shape(state, _g_inv(ng, p, W), (n, n))


def second_fundamental_form(geometry, state, form: str = "eq12"):
    """Components a_ij, either with explicit gamma derivatives (``eq12``) or
    through the acceleration of the Killing field (``eq13``)."""
    ng = geometry.on_chart(state.chart)
    p, S = state.p, state.S
    W = _W(ng, p)
    if form == "eq12":
        a = _a_eq12(ng, p, S, W)
    elif form == "eq13":
        a = _a_eq13(ng, p, S, W)
    else:
        raise ValueError(f"unknown form {form!r}")
    n = state.chart.dim
    return _shape(state, a, (n, n))


def mean_curvature(geometry, state, form: str = "trace", discretization: str = "auto"):
    """nH for the normal N = (gamma Y - grad u)/W.

    ``form="trace"`` contracts a_ij with g^ij.  ``form="divergence"`` evaluates
    div(grad u / W) - <grad gamma, grad u>/(2 gamma W); with
    ``discretization="flux"`` the divergence is taken by differencing the
    nodal flux sqrt(det sigma) u^i / W, otherwise it is expanded algebraically.
    ``"auto"`` differences the flux unless the derivatives are analytic.
    """
    ng = geometry.on_chart(state.chart)
    p, S = state.p, state.S
    W = _W(ng, p)
    if form == "trace":
        H = _trace_H(ng, p, S, W)
    elif form == "divergence":
        if discretization == "auto":
            discretization = "expanded" if state.kind == "analytic" else "flux"
        if discretization == "expanded":
            H = _expanded_div_H(ng, p, S, W)
        elif discretization == "flux":
            H = _flux_div_H(ng, state, W)
        else:
            raise ValueError(f"unknown discretization {discretization!r}")
    else:
        raise ValueError(f"unknown form {form!r}")
    return _shape(state, H)


def shape_data(geometry, state) -> ShapeData:
    ng = geometry.on_chart(state.chart)
    p, S = state.p, state.S
    n = state.chart.dim
    W = _W(ng, p)
    g = ng.sigma + np.einsum("pi,pj->pij", p, p) / ng.gamma[:, None, None]
    gi = _g_inv(ng, p, W)
    a = _a_eq12(ng, p, S, W)
    H = np.einsum("pij,pij->p", gi, a)
    normA2 = np.einsum("pik,pjl,pij,pkl->p", gi, gi, a, a)
    return ShapeData(
        W=_shape(state, W),
        g=_shape(state, g, (n, n)),
        g_inv=_shape(state, gi, (n, n)),
        N_vertical=_shape(state, ng.gamma / W),
        N_horizontal=_shape(state, -raise_index(ng, p) / W[:, None], (n,)),
        a=_shape(state, a, (n, n)),
        H=_shape(state, H),
        normA2=_shape(state, normA2),
    )


def unit_normal_defect(geometry, state) -> float:
    """max |gamma + |grad u|^2 - W^2|, the algebraic content of |N| = 1."""
    ng = geometry.on_chart(state.chart)
    p = state.p
    W = _W(ng, p)
    grad2 = np.einsum("pi,pi->p", p, raise_index(ng, p))
    return float(np.max(np.abs(ng.gamma + grad2 - W**2)))


def distance_data(geometry, state, d, grad_d, hess_d) -> DistanceData:
    """Package an analytic distance extension (``hess_d`` holds partials d_i d_j d)."""
    chart = state.chart
    ng = geometry.on_chart(chart)
    n = chart.dim
    d = np.asarray(d, dtype=float).reshape(-1)
    gd = np.asarray(grad_d, dtype=float).reshape(-1, n)
    hd = np.asarray(hess_d, dtype=float).reshape(-1, n, n)
    hd = hd - np.einsum("pkij,pk->pij", ng.christoffel, gd)
    W = _W(ng, state.p)
    theta = -np.einsum("pi,pi->p", raise_index(ng, gd), state.p) / W
    kappa = np.einsum("pi,pi->p", ng.grad_gamma_up, gd) / (2 * ng.gamma)
    return DistanceData(_shape(state, d), _shape(state, gd, (n,)), _shape(state, hd, (n, n)),
                        _shape(state, theta), _shape(state, kappa))


def lemma1_rhs(geometry, state, dist: DistanceData, convention: str = "corrected"):
    """-a_i^j d_j + (d_{i;j} + s kappa sigma_ij) N^j with N^j = -u^j/W.

    ``convention="corrected"`` uses s = +1, which is what the identity
    theta_i = d(theta)/dx^i requires; ``"printed"`` uses s = -1.
    """
    sgn = {"corrected": 1.0, "printed": -1.0}[convention]
    ng = geometry.on_chart(state.chart)
    n = state.chart.dim
    p, S = state.p, state.S
    W = _W(ng, p)
    a = _a_eq12(ng, p, S, W)
    gi = _g_inv(ng, p, W)
    gd = dist.grad_d.reshape(-1, n)
    hd = dist.hess_d.reshape(-1, n, n)
    kappa = dist.kappa.reshape(-1)
    a_mixed = np.einsum("pjk,pik->pij", gi, a)  # a_i^j
    Nh = -raise_index(ng, p) / W[:, None]
    rhs = -np.einsum("pij,pj->pi", a_mixed, gd)
    rhs += np.einsum("pij,pj->pi", hd + sgn * kappa[:, None, None] * ng.sigma, Nh)
    return _shape(state, rhs, (n,))


def lemma1_theta_gradient_check(geometry, state, dist: DistanceData,
                                convention: str = "corrected") -> float:
    """Max over interior nodes of |d(theta)/dx^i - RHS_i|, theta differentiated by FD.

    Only flat leaf metrics are supported.
    """
    chart = state.chart
    ng = geometry.on_chart(chart)
    if not ng.flat:
        raise UnsupportedRegimeError("the theta-gradient identity check needs a flat leaf metric")
    st = stencils(chart)
    theta = dist.theta.reshape(-1)
    dtheta = np.stack([st.first[i] @ theta for i in range(chart.dim)], axis=-1)
    rhs = lemma1_rhs(geometry, state, dist, convention).reshape(-1, chart.dim)
    interior = chart.interior_mask.ravel()
    return float(np.max(np.abs(dtheta - rhs)[interior]))
