"""Nonparametric prescribed-mean-curvature flow of Killing graphs.

The height ``u`` evolves by

    u_t = W div(grad u / W) - <grad gamma, grad u> / (2 gamma) - W Hcal

with the contact-angle condition <N, nu> = phi on the boundary, nu being the
inward unit normal.  Because <Y, nu> = 0 the condition reads u_nu = -phi W,
which is solved in closed form for the normal slope and imposed through one
layer of ghost nodes.
"""

from __future__ import annotations

import inspect
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .ambient import AmbientGeometry
from .errors import ConfigError, NumericError, SolverError
from .graph_geometry import GraphState, _W, mean_curvature, raise_index
from .grid import Chart, side_weights, stencils, trapezoid_weights

log = logging.getLogger(__name__)

DIVERGENCE_W = 1e8


# ---------------------------------------------------------------------------
# boundary and node data


def inward_normal(geometry, chart, side):
    """Unit (w.r.t. sigma) inward normal vectors nu^i on the nodes of ``side``."""
    ng = geometry.on_chart(chart)
    si = ng.sigma_inv[side.index]
    d = side.axis
    return side.sign * si[:, :, d] / np.sqrt(si[:, d, d])[:, None]


def boundary_field(geometry, chart, phi) -> dict:
    """Normalize boundary data to ``{side_key: values along the side}``.

    ``phi`` may be a number, a dict keyed by side, a callable ``phi(x)`` or a
    callable ``phi(x, nu)`` receiving the inward unit normal as second argument.
    """
    out = {}
    if isinstance(phi, dict):
        for s in chart.sides:
            if s.key not in phi:
                raise ConfigError(f"boundary data missing side {s.key!r}")
            out[s.key] = np.broadcast_to(np.asarray(phi[s.key], dtype=float), s.index.shape).copy()
        return out
    pts = chart.points.reshape(-1, chart.dim)
    wants_nu = callable(phi) and len(inspect.signature(phi).parameters) >= 2
    for s in chart.sides:
        if callable(phi):
            x = pts[s.index]
            val = phi(x, inward_normal(geometry, chart, s)) if wants_nu else phi(x)
        else:
            val = phi
        out[s.key] = np.broadcast_to(np.asarray(val, dtype=float), s.index.shape).copy()
    return out


def check_contact_data(phi: dict) -> float:
    """Return phi_0 = sup|phi|, raising unless phi_0 < 1."""
    vals = np.concatenate([np.ravel(v) for v in phi.values()])
    if not np.all(np.isfinite(vals)):
        raise ConfigError("boundary data phi is not finite")
    phi0 = float(np.max(np.abs(vals))) if vals.size else 0.0
    if phi0 >= 1.0:
        raise ConfigError(f"contact data violates |phi| <= phi_0 < 1 (sup|phi| = {phi0:.17g})")
    return phi0


def node_field(chart, value) -> np.ndarray:
    """A scalar field on the nodes as a flat array (number, array or callable)."""
    if callable(value):
        value = value(chart.points)
    value = np.asarray(value, dtype=float)
    if value.size == chart.size:
        return value.ravel().copy()
    return np.broadcast_to(np.asarray(value, dtype=float), chart.shape).ravel().copy()


# ---------------------------------------------------------------------------
# closure


@dataclass
class Closure:
    """Normal slopes imposed on the edges.

    ``q[d]`` holds d_d u on the nodes of the two edges normal to axis ``d``
    (zero elsewhere); ``dq[d]`` is its sparse derivative with respect to u
    (``None`` when the slope does not depend on u, i.e. in 1D).
    """

    chart: Chart
    q: list
    dq: list
    u_nu: dict

    def ghosts(self, u) -> dict:
        """Ghost-node values one layer outside each edge."""
        chart = self.chart
        uf = np.asarray(u, dtype=float).ravel()
        strides = np.array([int(np.prod(chart.shape[k + 1:])) for k in range(chart.dim)])
        out = {}
        for s in chart.sides:
            h = chart.h[s.axis]
            inner = s.index + s.sign * strides[s.axis]
            out[s.key] = uf[inner] - s.sign * 2 * h * self.q[s.axis][s.index]
        return out


def boundary_closure(geometry, chart, u, phi, jacobian: bool = False) -> Closure:
    """Normal slopes with u_nu = -phi sqrt((gamma + |grad_T u|^2) / (1 - phi^2)).

    The tangential slope along an edge is taken with one-sided stencils at its
    ends, so corners carry one closure per adjacent edge.
    """
    ng = geometry.on_chart(chart)
    st = stencils(chart)
    n, N = chart.dim, chart.size
    uf = np.asarray(u, dtype=float).ravel()
    tang = [st.first[e] @ uf for e in range(n)] if n == 2 else None
    q = [np.zeros(N) for _ in range(n)]
    dq = [None] * n
    u_nu = {}
    for s in chart.sides:
        d, idx = s.axis, s.index
        ph = phi[s.key]
        gam = ng.gamma[idx]
        sdd = ng.sigma_inv[idx, d, d]
        if n == 1:
            ue = np.zeros_like(gam)
            T2 = 0.0
        else:
            e = 1 - d
            ue = tang[e][idx]
            T2 = ue**2 / ng.sigma[idx, e, e]
        root = np.sqrt((gam + T2) / (1.0 - ph**2))
        unu = -ph * root
        if not np.all(np.isfinite(unu)):
            raise NumericError(f"non-finite closure on side {s.key}")
        u_nu[s.key] = unu
        if n == 1:
            q[d][idx] = s.sign * unu / np.sqrt(sdd)
            continue
        sde = ng.sigma_inv[idx, d, e]
        q[d][idx] = (s.sign * unu * np.sqrt(sdd) - sde * ue) / sdd
        if jacobian:
            dunu = -ph * ue / (ng.sigma[idx, e, e] * (1.0 - ph**2) * root)
            coef = (s.sign * np.sqrt(sdd) * dunu - sde) / sdd
            block = sp.csr_matrix((coef, (idx, idx)), shape=(N, N)) @ st.first[e]
            dq[d] = block if dq[d] is None else dq[d] + block
    if jacobian and n == 2:
        dq = [m if m is not None else sp.csr_matrix((N, N)) for m in dq]
    return Closure(chart, q, dq, u_nu)


def closed_derivatives(geometry, chart, u, phi, jacobian: bool = False):
    """Partials ``p`` (N, n) and partial Hessian ``S`` (N, n, n) with the closure.

    With ``jacobian=True`` also returns sparse ``Jp[i]`` and ``JS[(i, j)]``
    (derivatives with respect to the flattened u, closure included).
    """
    st = stencils(chart)
    n = chart.dim
    uf = np.asarray(u, dtype=float).ravel()
    cl = boundary_closure(geometry, chart, uf, phi, jacobian=jacobian)
    p = np.empty((uf.size, n))
    S = np.empty((uf.size, n, n))
    for d in range(n):
        p[:, d] = st.first_closed[d] @ uf + st.q_first[d] @ cl.q[d]
        S[:, d, d] = st.second_closed[d] @ uf + st.q_second[d] @ cl.q[d]
    if n == 2:
        S[:, 0, 1] = S[:, 1, 0] = (st.mixed_closed @ uf + st.q_mixed[0] @ cl.q[0]
                                   + st.q_mixed[1] @ cl.q[1])
    if not jacobian:
        return p, S, cl
    Jp, JS = [], {}
    for d in range(n):
        if cl.dq[d] is None:
            Jp.append(st.first_closed[d])
            JS[(d, d)] = st.second_closed[d]
        else:
            Jp.append(st.first_closed[d] + st.q_first[d] @ cl.dq[d])
            JS[(d, d)] = st.second_closed[d] + st.q_second[d] @ cl.dq[d]
    if n == 2:
        JS[(0, 1)] = (st.mixed_closed + st.q_mixed[0] @ cl.dq[0] + st.q_mixed[1] @ cl.dq[1])
    return p, S, cl, Jp, JS


def closed_state(geometry, chart, u, phi, t: float = 0.0) -> GraphState:
    """GraphState whose derivatives use ghost nodes set by the contact-angle closure."""
    ng = geometry.on_chart(chart)
    if not isinstance(phi, dict):
        phi = boundary_field(geometry, chart, phi)
    u = np.asarray(u, dtype=float).reshape(chart.shape)
    p, S, cl = closed_derivatives(geometry, chart, u, phi)
    cov = S - np.einsum("pkij,pk->pij", ng.christoffel, p)
    n = chart.dim
    return GraphState(chart, u, p.reshape(chart.shape + (n,)), cov.reshape(chart.shape + (n, n)),
                      float(t), "closed", cl)


def contact_angles(geometry, state) -> dict:
    """Recompute <N, nu> on each edge from the state's normal slope and the
    edge's own tangential stencil."""
    chart = state.chart
    ng = geometry.on_chart(chart)
    st = stencils(chart)
    uf = state.u.ravel()
    p = state.p
    out = {}
    for s in chart.sides:
        idx, d = s.index, s.axis
        pp = p[idx].copy()
        if chart.dim == 2:
            e = 1 - d
            pp[:, e] = (st.first[e] @ uf)[idx]
        si = ng.sigma_inv[idx]
        W = np.sqrt(ng.gamma[idx] + np.einsum("pi,pij,pj->p", pp, si, pp))
        unu = s.sign * np.einsum("pi,pi->p", si[:, d, :], pp) / np.sqrt(si[:, d, d])
        out[s.key] = -unu / W
    return out


def contact_defect(geometry, state, phi: dict) -> float:
    ang = contact_angles(geometry, state)
    return float(max(np.max(np.abs(ang[k] - phi[k])) for k in ang))


# ---------------------------------------------------------------------------
# right-hand side


def flow_rhs(geometry, state, Hcal=0.0, speed: float = 0.0) -> np.ndarray:
    """u_t = W (nH - Hcal) - speed, with nH in trace form.

    ``speed`` is subtracted so that a soliton translating with that speed is
    stationary (co-moving frame); it is zero for the physical flow.
    """
    ng = geometry.on_chart(state.chart)
    W = _W(ng, state.p)
    nH = mean_curvature(geometry, state, "trace").ravel()
    H = node_field(state.chart, Hcal)
    return (W * (nH - H) - speed).reshape(state.chart.shape)


def frozen_coefficients(geometry, chart, p):
    """Coefficients of u_t = A^ij d_ij u - c^k d_k u - W Hcal frozen at ``state``.

    A^ij = sigma^ij - u^i u^j / W^2 and c^k = A^ij Gamma^k_ij + (1/2gamma + 1/2W^2) gamma^k.
    """
    ng = geometry.on_chart(chart)
    W = _W(ng, p)
    up = raise_index(ng, p)
    A = ng.sigma_inv - np.einsum("pi,pj->pij", up, up) / W[:, None, None] ** 2
    drift = (0.5 / ng.gamma + 0.5 / W**2)[:, None] * ng.grad_gamma_up
    c = np.einsum("pij,pkij->pk", A, ng.christoffel) + drift
    return A, c, W


def _apply_operator(A, c, p, S):
    return np.einsum("pij,pij->p", A, S) - np.einsum("pk,pk->p", c, p)


def _operator_matrix(A, c, Jp, JS, n):
    L = None
    for (i, j), M in JS.items():
        coef = A[:, i, j] if i == j else A[:, i, j] + A[:, j, i]
        term = sp.diags(coef) @ M
        L = term if L is None else L + term
    for k in range(n):
        L = L - sp.diags(c[:, k]) @ Jp[k]
    return sp.csr_matrix(L)


# ---------------------------------------------------------------------------
# configuration and results


@dataclass
class FlowConfig:
    """Time-stepping parameters.

    ``dt=None`` picks the explicit stability bound (explicit scheme) or half
    the smallest grid spacing (semi-implicit).  ``snapshot_every=0`` keeps
    only the first and last states.
    """

    scheme: str = "semi_implicit"
    dt: Optional[float] = None
    t_end: float = 1.0
    steady_tol: float = 1e-8
    Hcal: Any = 0.0
    phi: Any = 0.0
    snapshot_every: int = 0
    speed: float = 0.0
    closure_tol: float = 1e-10
    closure_max_iter: int = 50
    max_steps: Optional[int] = None

    def validate(self):
        problems = []
        if self.scheme not in ("explicit", "semi_implicit"):
            problems.append(f"scheme must be 'explicit' or 'semi_implicit', got {self.scheme!r}")
        if self.dt is not None and not self.dt > 0:
            problems.append(f"dt must be positive, got {self.dt}")
        if not self.steady_tol > 0:
            problems.append(f"steady_tol must be positive, got {self.steady_tol}")
        if not self.t_end >= 0:
            problems.append(f"t_end must be non-negative, got {self.t_end}")
        if self.snapshot_every < 0:
            problems.append("snapshot_every must be >= 0")
        if problems:
            raise ConfigError("invalid flow configuration", problems)


SERIES_FIELDS = ("t", "max_ut", "max_W", "min_W", "energy", "dissipation_residual",
                 "energy_weighted", "dissipation_residual_weighted", "energy_printed",
                 "dissipation_residual_printed", "max_u", "contact_defect")


@dataclass
class FlowResult:
    chart: Chart
    geometry: AmbientGeometry
    config: FlowConfig
    dt: float
    phi: dict
    snapshots: list = field(default_factory=list)
    series: dict = field(default_factory=dict)
    stop_reason: str = "reached_t_end"
    diagnostics: dict = field(default_factory=dict)
    final: Optional[GraphState] = None


def explicit_dt(geometry, state) -> float:
    """0.2 h^2 min(1, min W^2) / max trace(A)."""
    A, _, W = frozen_coefficients(geometry, state.chart, state.p)
    trA = np.einsum("pii->p", A)
    h = min(state.chart.h)
    return 0.2 * h**2 * min(1.0, float(np.min(W**2))) / float(np.max(trA))


def step(geometry, state, config: FlowConfig, dt: float, phi: dict, Hcal=None) -> GraphState:
    """Advance one time step; the returned state is re-closed exactly."""
    chart = state.chart
    H = node_field(chart, config.Hcal if Hcal is None else Hcal)
    uk = state.u.ravel()
    if config.scheme == "explicit":
        unew = uk + dt * flow_rhs(geometry, state, H, config.speed).ravel()
        if not np.all(np.isfinite(unew)):
            raise NumericError("non-finite explicit update")
        return closed_state(geometry, chart, unew, phi, state.t + dt)

    A, c, W = frozen_coefficients(geometry, state.chart, state.p)
    src = W * H + config.speed
    ng = geometry.on_chart(chart)
    n = chart.dim
    # Chord iteration for the nonlinear closure: the matrix (closure linearized
    # at u^k) is factored once; each pass re-closes at the latest iterate.
    p, S, cl, Jp, JS = closed_derivatives(geometry, chart, uk, phi, jacobian=True)
    L = _operator_matrix(A, c, Jp, JS, n)
    M = (sp.identity(chart.size, format="csr") - dt * L).tocsc()
    history = []
    try:
        lu = spla.splu(M)
    except RuntimeError as exc:  # singular factorization
        raise SolverError(f"linear solve failed: {exc}", history) from exc
    ustar = uk
    for it in range(config.closure_max_iter):
        if it:
            p, S, cl = closed_derivatives(geometry, chart, ustar, phi)
        # S is the partial Hessian; Christoffel terms are folded into c
        resid = _apply_operator(A, c, p, S) - L @ ustar
        unew = lu.solve(uk + dt * (resid - src))
        if not np.all(np.isfinite(unew)):
            raise SolverError("linear solve produced non-finite values", history)
        change = float(np.max(np.abs(unew - ustar)))
        history.append(change)
        ustar = unew
        if n == 1 or change <= config.closure_tol * max(1.0, float(np.max(np.abs(unew)))):
            break
    else:
        raise SolverError(f"boundary closure did not converge in {config.closure_max_iter} "
                          f"iterations", history)
    return closed_state(geometry, chart, ustar, phi, state.t + dt)


# ---------------------------------------------------------------------------
# energy


def _measure(geometry, chart):
    ng = geometry.on_chart(chart)
    return trapezoid_weights(chart).ravel() * ng.sqrt_det


def _boundary_integral(geometry, chart, values: dict, weight=None) -> float:
    """sum over edges of trapezoid quadrature of ``values`` w.r.t. sigma-length."""
    ng = geometry.on_chart(chart)
    total = 0.0
    for s in chart.sides:
        w = side_weights(chart, s)
        if chart.dim == 2:
            e = 1 - s.axis
            w = w * np.sqrt(ng.sigma[s.index, e, e])
        v = values[s.key]
        if weight is not None:
            v = v * weight[s.index]
        total += float(np.sum(w * v))
    return total


def energy(geometry, state, phi, Hcal=0.0, weighting: str = "unweighted") -> float:
    """Lyapunov functional of the flow.

    ``unweighted``: int W - int_bd u phi + int Hcal u (sigma measures).
    ``weighted``:   the same integrands divided by sqrt(gamma), i.e. the area
                    of the graph minus the wetting term; its time derivative is
                    exactly -int (u_t^2 / W) / sqrt(gamma).
    ``printed``:    int W + int_bd u phi (no Hcal term).
    """
    chart = state.chart
    ng = geometry.on_chart(chart)
    if not isinstance(phi, dict):
        phi = boundary_field(geometry, chart, phi)
    mu = _measure(geometry, chart)
    W = _W(ng, state.p)
    uf = state.u.ravel()
    H = node_field(chart, Hcal)
    u_phi = {s.key: uf[s.index] * phi[s.key] for s in chart.sides}
    if weighting == "unweighted":
        return float(np.sum(mu * (W + H * uf))) - _boundary_integral(geometry, chart, u_phi)
    if weighting == "weighted":
        rg = 1.0 / np.sqrt(ng.gamma)
        return (float(np.sum(mu * (W + H * uf) * rg))
                - _boundary_integral(geometry, chart, u_phi, rg))
    if weighting == "printed":
        return float(np.sum(mu * W)) + _boundary_integral(geometry, chart, u_phi)
    raise ValueError(f"unknown weighting {weighting!r}")


def identity_terms(geometry, state, ut, phi: dict, Hcal=0.0, speed: float = 0.0) -> dict:
    """Integrals entering the energy identities, evaluated on one state."""
    ng = geometry.on_chart(state.chart)
    mu = _measure(geometry, state.chart)
    p = state.p
    W = _W(ng, p)
    ug = np.einsum("pi,pi->p", ng.grad_gamma_up, p)
    grad2 = np.einsum("pi,pi->p", p, raise_index(ng, p))
    ut = np.asarray(ut, dtype=float).ravel()
    rg = 1.0 / np.sqrt(ng.gamma)
    return {
        "energy": energy(geometry, state, phi, Hcal, "unweighted"),
        "energy_weighted": energy(geometry, state, phi, Hcal, "weighted"),
        "energy_printed": energy(geometry, state, phi, weighting="printed"),
        "diss": float(np.sum(mu * (ut + speed) * ut / W)),
        "diss_w": float(np.sum(mu * (ut + speed) * ut / W * rg)),
        "corr": float(np.sum(mu * ut * ug / (2 * ng.gamma * W))),
        "diss_printed": float(np.sum(mu * ut**2 / W)),
        "corr_printed": float(np.sum(mu * ug / (2 * W**3))
                              + np.sum(mu * grad2 * ug / (2 * ng.gamma * W**2))),
    }


def residual_from_terms(ta: dict, tb: dict, dt: float, form: str = "unweighted") -> float:
    """Identity residual between two states from their :func:`identity_terms`."""
    avg = {k: 0.5 * (ta[k] + tb[k]) for k in ta}
    if form == "unweighted":
        dE = (tb["energy"] - ta["energy"]) / dt
        return abs(-avg["diss"] - (dE + avg["corr"]))
    if form == "weighted":
        return abs(-avg["diss_w"] - (tb["energy_weighted"] - ta["energy_weighted"]) / dt)
    if form == "printed":
        dE = (tb["energy_printed"] - ta["energy_printed"]) / dt
        return abs(-avg["diss_printed"] - (dE + avg["corr_printed"]))
    raise ValueError(f"unknown form {form!r}")


def dissipation_residual(geometry, prev, state, phi, Hcal=0.0, speed: float = 0.0,
                         form: str = "unweighted") -> float:
    """|LHS - RHS| of the energy identity between two consecutive states.

    ``unweighted``: -int (u_t + C) u_t / W = dE/dt + int u_t <grad gamma, grad u> / (2 gamma W)
    ``weighted``:   -int (u_t + C) u_t / (W sqrt(gamma)) = dE_w/dt
    ``printed``:    -int u_t^2/W = d/dt(int W + int_bd u phi) + int <grad u, grad gamma>/(2W^3)
                    + int |grad u|^2 <grad u, grad gamma>/(2 gamma W^2)
    Time integrands are averaged over the two states, d/dt is the difference quotient.
    """
    if not isinstance(phi, dict):
        phi = boundary_field(geometry, state.chart, phi)
    dt = state.t - prev.t
    if not dt > 0:
        raise ValueError("states must be consecutive in time")
    ta = identity_terms(geometry, prev, flow_rhs(geometry, prev, Hcal, speed), phi, Hcal, speed)
    tb = identity_terms(geometry, state, flow_rhs(geometry, state, Hcal, speed), phi, Hcal, speed)
    return residual_from_terms(ta, tb, dt, form)


# ---------------------------------------------------------------------------
# driver


def compatibility_defect(geometry, chart, u0, phi) -> float:
    """Max mismatch between the one-sided normal slope of u0 and the closure slope."""
    st = stencils(chart)
    uf = np.asarray(u0, dtype=float).ravel()
    cl = boundary_closure(geometry, chart, uf, phi)
    worst = 0.0
    for s in chart.sides:
        slope = (st.first[s.axis] @ uf)[s.index]
        worst = max(worst, float(np.max(np.abs(slope - cl.q[s.axis][s.index]))))
    return worst


def run_flow(geometry, chart, u0, config: FlowConfig) -> FlowResult:
    """Integrate from ``u0`` until t_end, steadiness (max|u_t| < steady_tol) or divergence."""
    config.validate()
    phi = config.phi if isinstance(config.phi, dict) else boundary_field(geometry, chart, config.phi)
    phi0 = check_contact_data(phi)
    H = node_field(chart, config.Hcal)
    u0 = node_field(chart, u0)
    state = closed_state(geometry, chart, u0, phi, 0.0)
    if config.dt is None:
        dt = explicit_dt(geometry, state) if config.scheme == "explicit" else 0.5 * min(chart.h)
    else:
        dt = float(config.dt)
    result = FlowResult(chart, geometry, config, dt, phi)
    series = {k: [] for k in SERIES_FIELDS}

    terms = [None]

    def record(st, ut, dt_prev):
        W = _W(geometry.on_chart(chart), st.p)
        series["t"].append(st.t)
        series["max_ut"].append(float(np.max(np.abs(ut))))
        series["max_W"].append(float(np.max(W)))
        series["min_W"].append(float(np.min(W)))
        series["max_u"].append(float(np.max(np.abs(st.u))))
        series["contact_defect"].append(contact_defect(geometry, st, phi))
        tb = identity_terms(geometry, st, ut, phi, H, config.speed)
        for key in ("energy", "energy_weighted", "energy_printed"):
            series[key].append(tb[key])
        for form, key in (("unweighted", "dissipation_residual"),
                          ("weighted", "dissipation_residual_weighted"),
                          ("printed", "dissipation_residual_printed")):
            series[key].append(math.nan if terms[0] is None else
                               residual_from_terms(terms[0], tb, dt_prev, form))
        terms[0] = tb

    ut = flow_rhs(geometry, state, H, config.speed)
    record(state, ut, None)
    result.snapshots.append((state.t, state.u.copy()))
    n_steps = int(math.ceil(config.t_end / dt - 1e-9))
    if config.max_steps is not None:
        n_steps = min(n_steps, config.max_steps)
    stop = "reached_t_end"
    if float(np.max(np.abs(ut))) < config.steady_tol:
        stop = "steady"
        n_steps = 0
    k = 0
    for k in range(1, n_steps + 1):
        prev = state
        try:
            state = step(geometry, prev, config, dt, phi, H)
        except NumericError:
            stop = "diverged"
            state = prev
            break
        state.t = k * dt
        W = _W(geometry.on_chart(chart), state.p) if np.all(np.isfinite(state.u)) else None
        if W is None or not np.all(np.isfinite(W)) or float(np.max(W)) > DIVERGENCE_W:
            stop = "diverged"
            break
        ut = flow_rhs(geometry, state, H, config.speed)
        record(state, ut, state.t - prev.t)
        if config.snapshot_every and k % config.snapshot_every == 0:
            result.snapshots.append((state.t, state.u.copy()))
        if series["max_ut"][-1] < config.steady_tol:
            stop = "steady"
            break
    if result.snapshots[-1][0] != state.t:
        result.snapshots.append((state.t, state.u.copy()))
    result.series = {key: np.asarray(v, dtype=float) for key, v in series.items()}
    result.stop_reason = stop
    result.final = state
    result.diagnostics = run_diagnostics(result, u0, phi0)
    log.info("flow finished: %s after %d steps (t=%.6g)", stop, k, state.t)
    return result


def run_diagnostics(result: FlowResult, u0, phi0: float) -> dict:
    """Discrete counterparts of the a priori bounds, evaluated on the series."""
    s = result.series
    chart = result.chart
    h2 = max(chart.h) ** 2
    m0 = float(s["max_ut"][0])
    tol_mp = 10.0 * (h2 + result.dt) * (m0 if m0 > 0 else 1.0)
    t = s["t"]
    height_bound = float(np.max(np.abs(u0))) + t * m0 + tol_mp * t
    n10 = max(1, int(0.1 * len(t)))
    early_max = float(np.max(s["max_W"][:n10]))
    compat = compatibility_defect(result.geometry, chart, u0, result.phi)
    return {
        "phi0": phi0,
        "max_ut_initial": m0,
        "max_ut_run": float(np.max(s["max_ut"])),
        "tol_mp": tol_mp,
        "max_principle_ok": bool(np.max(s["max_ut"]) <= m0 + tol_mp),
        "height_bound_ok": bool(np.all(s["max_u"] <= height_bound)),
        "max_W_run": float(np.max(s["max_W"])),
        "gradient_bound_ok": bool(np.max(s["max_W"]) <= 2.0 * early_max),
        "max_contact_defect": float(np.max(s["contact_defect"])),
        "initial_compatibility_defect": compat,
        "initial_data_compatible": bool(compat <= 100.0 * h2 * (1.0 + float(np.max(np.abs(u0))))),
        "final_max_ut": float(s["max_ut"][-1]),
    }
