"""Steady and translating solutions v + C t of the flow.

A translating soliton satisfies

    div(grad v / W) - <grad gamma, grad v> / (2 gamma W) = Hcal + C / W

with the same contact-angle condition as the flow.  Because the equation
only sees derivatives of v, solutions are defined up to an additive
constant; they are reported with zero nodal mean.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, SolverError
from .flow import (FlowConfig, _boundary_integral, _measure, boundary_field, check_contact_data,
                   closed_derivatives, closed_state, contact_defect, flow_rhs, frozen_coefficients,
                   node_field, step, _operator_matrix)
from .graph_geometry import _W, raise_index
from .grid import Chart

log = logging.getLogger(__name__)


@dataclass
class SolitonProblem:
    """Data of the soliton problem; ``C`` is the target speed (0: steady problem)."""

    geometry: Any
    chart: Chart
    Hcal: Any = 0.0
    phi: Any = 0.0
    C: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.C):
            raise ConfigError("soliton speed C must be finite")
        if not isinstance(self.phi, dict):
            self.phi = boundary_field(self.geometry, self.chart, self.phi)
        self.phi0 = check_contact_data(self.phi)
        self.H = node_field(self.chart, self.Hcal)


@dataclass
class SolitonSolution:
    """Result of :func:`solve_soliton`.

    ``residual_pde`` is the max of |nH - Hcal - C/W| over interior nodes,
    ``residual_bc`` the max contact-angle mismatch, ``flux_residual`` the
    integrated balance at the returned speed.  ``compatibility_defect`` is
    the gap between the requested and the discretely admissible speed
    (zero in free-speed mode).
    """

    v: np.ndarray
    C: float
    residual_pde: float
    residual_bc: float
    flux_residual: float
    compatibility_defect: float
    method: str
    iterations: int
    history: list = field(default_factory=list)
    chart: Optional[Chart] = None


# ---------------------------------------------------------------------------
# residual and Jacobian


def soliton_residual(problem, v, C) -> np.ndarray:
    """Flat residual R = W (nH - Hcal) - C; zero on an exact discrete soliton."""
    st = closed_state(problem.geometry, problem.chart, v, problem.phi)
    return flow_rhs(problem.geometry, st, problem.H, C).ravel()


def soliton_jacobian(problem, v):
    """Sparse dR/dv, boundary closure included (analytic)."""
    geometry, chart = problem.geometry, problem.chart
    ng = geometry.on_chart(chart)
    n = chart.dim
    p, S, cl, Jp, JS = closed_derivatives(geometry, chart, v, problem.phi, jacobian=True)
    cov = S - np.einsum("pkij,pk->pij", ng.christoffel, p)
    A, c, W = frozen_coefficients(geometry, chart, p)
    J = _operator_matrix(A, c, Jp, JS, n)
    up = raise_index(ng, p)
    W2 = W**2
    gp = np.einsum("pk,pk->p", ng.grad_gamma_up, p)
    for m in range(n):
        si_m = ng.sigma_inv[:, :, m]
        dA = (-(np.einsum("pi,pj->pij", si_m, up) + np.einsum("pi,pj->pij", up, si_m))
              / W2[:, None, None]
              + 2 * np.einsum("pi,pj,p->pij", up, up, up[:, m]) / (W2**2)[:, None, None])
        T = (np.einsum("pij,pij->p", dA, cov) + gp * up[:, m] / W2**2
             - up[:, m] * problem.H / W)
        J = J + sp.diags(T) @ Jp[m]
    return sp.csr_matrix(J)


def fd_jacobian(problem, v, C=0.0, eps: float = 1e-6) -> np.ndarray:
    """Dense forward-difference Jacobian (test oracle)."""
    v = np.asarray(v, dtype=float).ravel()
    R0 = soliton_residual(problem, v, C)
    J = np.empty((v.size, v.size))
    for k in range(v.size):
        vk = v.copy()
        vk[k] += eps
        J[:, k] = (soliton_residual(problem, vk, C) - R0) / eps
    return J


def _has_constant_kernel(J, tol=1e-8) -> bool:
    ones = np.ones(J.shape[0])
    scale = max(1.0, float(abs(J).max()))
    return float(np.max(np.abs(J @ ones))) <= tol * scale


# ---------------------------------------------------------------------------
# solvers


def _newton(problem, v0, C0, speed, tol, max_iter):
    N = problem.chart.size
    v = np.asarray(v0, dtype=float).ravel().copy()
    v -= v.mean()
    C = float(C0)
    lam = 0.0
    ones = np.ones((N, 1))
    mean_row = sp.csr_matrix(np.full((1, N), 1.0 / N))

    def full_residual(v, C, lam):
        return soliton_residual(problem, v, C) + lam

    R = full_residual(v, C, lam)
    history = [float(np.max(np.abs(R)))]
    for it in range(1, max_iter + 1):
        if history[-1] <= tol:
            return v, C, lam, it - 1, history
        J = soliton_jacobian(problem, v)
        if not _has_constant_kernel(J):
            raise SolverError("Jacobian is not singular along constants; unexpected kernel "
                              "structure", history)
        # free speed: unknown C enters with -1; fixed speed: slack lam with +1
        col = -ones if speed == "free" else ones
        K = sp.bmat([[J, sp.csr_matrix(col)], [mean_row, None]], format="csc")
        rhs = np.concatenate([-R, [-v.mean()]])
        try:
            sol = spla.spsolve(K, rhs)
        except RuntimeError as exc:
            raise SolverError(f"bordered Newton system is singular: {exc}", history) from exc
        if not np.all(np.isfinite(sol)):
            raise SolverError("bordered Newton system is singular", history)
        dv, dextra = sol[:N], sol[N]
        t = 1.0
        for _ in range(31):
            vt = v + t * dv
            Ct, lt = (C + t * dextra, lam) if speed == "free" else (C, lam + t * dextra)
            try:
                Rt = full_residual(vt, Ct, lt)
                ok = np.all(np.isfinite(Rt)) and np.max(np.abs(Rt)) < history[-1]
            except Exception:  # noqa: BLE001 - any evaluation failure counts as a rejected step
                ok = False
            if ok:
                break
            t *= 0.5
        else:
            raise SolverError("damped Newton failed after 30 step halvings", history)
        v, C, lam, R = vt, Ct, lt, Rt
        history.append(float(np.max(np.abs(R))))
        log.debug("newton %d: residual %.3e step %.3g", it, history[-1], t)
    if history[-1] <= tol:
        return v, C, lam, max_iter, history
    raise SolverError(f"Newton did not converge in {max_iter} iterations", history)


def _pseudo_time(problem, v0, C0, speed, tol, max_iter, dt):
    geometry, chart = problem.geometry, problem.chart
    cfg = FlowConfig(scheme="semi_implicit", dt=dt, Hcal=problem.H, phi=problem.phi,
                     speed=float(C0))
    st = closed_state(geometry, chart, v0, problem.phi)
    history = []
    for it in range(1, max_iter + 1):
        st = step(geometry, st, cfg, dt, problem.phi, problem.H)
        ut = flow_rhs(geometry, st, problem.H, cfg.speed).ravel()
        spread = float(np.max(ut) - np.min(ut))
        history.append(spread)
        if not np.isfinite(spread):
            raise SolverError("pseudo-time iteration diverged", history)
        if spread < tol:
            v = st.u.ravel()
            return v - v.mean(), cfg.speed + float(ut.mean()), it, history
    raise SolverError(f"pseudo-time did not reach steadiness in {max_iter} steps", history)


def solve_soliton(problem: SolitonProblem, method: str = "newton", tol: float = 1e-9,
                  max_iter: Optional[int] = None, speed: str = "free", v0=None,
                  dt: float = 0.05) -> SolitonSolution:
    """Solve for a soliton profile v (mean zero) and its speed.

    ``speed="free"`` treats C as an unknown, which is what makes the discrete
    problem solvable: the admissible speed is fixed by the flux balance.
    ``speed="fixed"`` keeps ``problem.C`` and absorbs the incompatibility in a
    constant slack, reported as ``compatibility_defect``.
    """
    if method not in ("newton", "pseudo_time"):
        raise ConfigError(f"unknown soliton method {method!r}")
    if speed not in ("free", "fixed"):
        raise ConfigError(f"speed must be 'free' or 'fixed', got {speed!r}")
    chart = problem.chart
    v0 = np.zeros(chart.size) if v0 is None else node_field(chart, v0)
    if method == "newton":
        v, C, lam, iters, history = _newton(problem, v0, problem.C, speed, tol,
                                            max_iter or 50)
        defect = abs(lam) if speed == "fixed" else 0.0
    else:
        v, C, iters, history = _pseudo_time(problem, v0, problem.C, speed, tol,
                                            max_iter or 20000, dt)
        defect = abs(C - problem.C) if speed == "fixed" else 0.0
        if speed == "fixed":
            C = problem.C
    return _package(problem, v, C, defect, method, iters, history)


def _package(problem, v, C, defect, method, iters, history):
    geometry, chart = problem.geometry, problem.chart
    st = closed_state(geometry, chart, v, problem.phi)
    ng = geometry.on_chart(chart)
    W = _W(ng, st.p)
    pde = np.abs(flow_rhs(geometry, st, problem.H, C).ravel() / W)
    interior = chart.interior_mask.ravel()
    return SolitonSolution(
        v=st.u.copy(), C=float(C),
        residual_pde=float(np.max(pde[interior])),
        residual_bc=contact_defect(geometry, st, problem.phi),
        flux_residual=flux_balance_residual(geometry, st, problem.H, problem.phi, C),
        compatibility_defect=float(defect), method=method, iterations=int(iters),
        history=list(history), chart=chart)


# ---------------------------------------------------------------------------
# integral identities


def _weight(ng, weight):
    if weight == "killing":
        return 1.0 / np.sqrt(ng.gamma)
    if weight == "printed":
        return np.sqrt(ng.gamma)
    raise ValueError(f"unknown weight {weight!r}")


def _speed_integrals(geometry, state, Hcal, phi, weight):
    chart = state.chart
    ng = geometry.on_chart(chart)
    if not isinstance(phi, dict):
        phi = boundary_field(geometry, chart, phi)
    w = _weight(ng, weight)
    mu = _measure(geometry, chart)
    W = _W(ng, state.p)
    H = node_field(chart, Hcal)
    bdry = _boundary_integral(geometry, chart, phi, w)
    return bdry, float(np.sum(mu * w * H)), float(np.sum(mu * w / W))


def soliton_speed(geometry, state, Hcal=0.0, phi=0.0, weight: str = "killing") -> float:
    """C = (int_bd phi w - int Hcal w) / int w / W.

    ``weight="killing"`` uses w = 1/sqrt(gamma), the density that turns the
    soliton equation into an exact divergence; ``"printed"`` uses sqrt(gamma).
    Both coincide when gamma = 1.
    """
    bdry, hint, den = _speed_integrals(geometry, state, Hcal, phi, weight)
    if den < 1e-14:
        raise SolverError("degenerate speed quotient (denominator below 1e-14)")
    return (bdry - hint) / den


def flux_balance_residual(geometry, state, Hcal=0.0, phi=0.0, C=0.0,
                          weight: str = "killing") -> float:
    """|int (C w / W + w Hcal) - int_bd phi w| by quadrature."""
    bdry, hint, den = _speed_integrals(geometry, state, Hcal, phi, weight)
    return abs(C * den + hint - bdry)


def measures(geometry, chart):
    """(|Omega|, |Gamma|) as sigma-measures; |Gamma| counts endpoints in 1D."""
    mu = _measure(geometry, chart)
    ones = {s.key: np.ones(s.index.size) for s in chart.sides}
    return float(np.sum(mu)), _boundary_integral(geometry, chart, ones)


def speed_bound(geometry, chart, Hcal, W_max) -> float:
    """(|Gamma| + sup|Hcal| |Omega|)/|Omega| * W_max * sqrt(gamma_max / gamma_min).

    The observed W_max stands in for the a priori gradient bound.
    """
    ng = geometry.on_chart(chart)
    area, length = measures(geometry, chart)
    Hsup = float(np.max(np.abs(node_field(chart, Hcal))))
    return (length + Hsup * area) / area * W_max * float(
        np.sqrt(np.max(ng.gamma) / np.min(ng.gamma)))


def speed_bound_check(geometry, chart, C, Hcal, W_max) -> bool:
    return bool(abs(C) <= speed_bound(geometry, chart, Hcal, W_max))


def sandwich_check(flow_result, soliton: SolitonSolution, C: Optional[float] = None,
                   C_s: float = 10.0) -> float:
    """Largest violation of v1 + C t - tol <= u(t) <= v2 + C t + tol over all snapshots.

    v1 = v + inf(u0 - v), v2 = v + sup(u0 - v) and tol = C_s (h^2 + dt) t.
    Returns 0 when the ordering holds everywhere.
    """
    chart = flow_result.chart
    if soliton.chart is not None and (soliton.chart != chart):
        raise ConfigError("flow result and soliton live on different grids")
    C = soliton.C if C is None else C
    v = np.asarray(soliton.v, dtype=float).reshape(chart.shape)
    t0, u0 = flow_result.snapshots[0]
    diff = u0 - v
    v1, v2 = v + diff.min(), v + diff.max()
    h2 = max(chart.h) ** 2
    worst = 0.0
    for t, u in flow_result.snapshots:
        tol = C_s * (h2 + flow_result.dt) * t
        low = np.max(v1 + C * t - tol - u)
        high = np.max(u - v2 - C * t - tol)
        worst = max(worst, float(low), float(high))
    return worst
