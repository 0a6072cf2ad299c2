import numpy as np
import pytest

from killingflow import flow
from killingflow.ambient import EuclideanProduct, ExponentialWarp, Helicoidal
from killingflow.config import scenario_from
from killingflow.errors import ConfigError
from killingflow.flow import FlowConfig, boundary_field, closed_state, run_flow
from killingflow.graph_geometry import GraphState
from killingflow.grid import Chart

from conftest import grim_chart, grim_state, helicoid_chart, helicoid_state, plane_profile

SIN1 = np.sin(1.0)


def grim_u0(x):
    return -np.log(np.cos(x[..., 0]))


# ---------------------------------------------------------------------------
# closure


def test_closure_orthogonal_contact_is_neumann():
    E = EuclideanProduct(2)
    ch = Chart((0.0, 0.0), (1.0, 1.0), (9, 9))
    u = np.sin(3 * ch.points[..., 0]) * np.cos(2 * ch.points[..., 1])
    cl = flow.boundary_closure(E, ch, u, boundary_field(E, ch, 0.0))
    assert all(np.all(v == 0) for v in cl.u_nu.values())


def test_closure_grim_reaper_slope():
    E = EuclideanProduct(1)
    ch = grim_chart(17)
    cl = flow.boundary_closure(E, ch, grim_u0(ch.points), boundary_field(E, ch, SIN1))
    assert cl.u_nu["x1+"][0] == pytest.approx(-np.tan(1.0), rel=1e-14)
    assert cl.q[0][-1] == pytest.approx(np.tan(1.0), rel=1e-14)
    assert cl.q[0][0] == pytest.approx(-np.tan(1.0), rel=1e-14)


def test_closure_flat_tangential_value():
    E = EuclideanProduct(2)
    ch = Chart((0.0, 0.0), (1.0, 1.0), (9, 9))
    cl = flow.boundary_closure(E, ch, np.zeros(ch.shape), boundary_field(E, ch, 0.6))
    for v in cl.u_nu.values():
        np.testing.assert_allclose(v, -0.75, rtol=1e-14)


@pytest.mark.parametrize("phi", [1.0, -1.2, np.nan])
def test_contact_data_out_of_range(phi):
    E = EuclideanProduct(1)
    ch = grim_chart(9)
    with pytest.raises(ConfigError):
        flow.check_contact_data(boundary_field(E, ch, phi))


def test_closure_self_consistency_2d(rng):
    g = Helicoidal()
    ch = helicoid_chart(17)
    phi = boundary_field(g, ch, lambda x: 0.3 * np.sin(3 * x[:, 0] + x[:, 1]))
    u = 0.2 * np.sin(2 * ch.points[..., 0]) * np.cos(ch.points[..., 1]) + ch.points[..., 1]
    s = closed_state(g, ch, u, phi)
    assert flow.contact_defect(g, s, phi) <= 1e-12


def test_boundary_field_with_normal():
    E = EuclideanProduct(1)
    ch = grim_chart(9)
    phi = boundary_field(E, ch, lambda x, nu: -x[:, 0] * nu[:, 0] * 0.5)
    assert phi["x1-"][0] == pytest.approx(0.5) and phi["x1+"][0] == pytest.approx(0.5)
    with pytest.raises(ConfigError):
        boundary_field(E, ch, {"x1-": 0.1})


# ---------------------------------------------------------------------------
# right-hand side and one step


def test_rhs_constant_is_zero():
    g = Helicoidal()
    ch = helicoid_chart(9)
    s = closed_state(g, ch, np.full(ch.shape, 1.3), 0.0)
    assert np.abs(flow.flow_rhs(g, s)).max() < 1e-12


def test_rhs_grim_reaper_analytic_and_fd():
    E = EuclideanProduct(1)
    ch = grim_chart(129)
    np.testing.assert_allclose(flow.flow_rhs(E, grim_state(E, ch)), 1.0, atol=1e-13)
    s = closed_state(E, ch, grim_u0(ch.points), SIN1)
    ut = flow.flow_rhs(E, s)
    assert np.abs(ut[ch.interior_mask] - 1).max() < 5e-4


def test_rhs_helicoid_is_zero():
    g = Helicoidal()
    ch = helicoid_chart(9)
    assert np.abs(flow.flow_rhs(g, helicoid_state(g, ch))).max() < 1e-13


def test_rhs_prescribed_curvature_shifts():
    E = EuclideanProduct(1)
    ch = grim_chart(17)
    s = grim_state(E, ch)
    ut = flow.flow_rhs(E, s, Hcal=0.5, speed=1.0)
    np.testing.assert_allclose(ut, -0.5 / np.cos(ch.axes[0]), atol=1e-13)


@pytest.mark.parametrize("scheme", ["explicit", "semi_implicit"])
def test_step_constant_unchanged(scheme):
    E = EuclideanProduct(2)
    ch = Chart((0.0, 0.0), (1.0, 1.0), (9, 9))
    phi = boundary_field(E, ch, 0.0)
    s = closed_state(E, ch, np.full(ch.shape, 0.25), phi)
    s2 = flow.step(E, s, FlowConfig(scheme=scheme), 0.01, phi)
    np.testing.assert_allclose(s2.u, 0.25, atol=1e-14)


def test_explicit_step_half_parabola():
    E = EuclideanProduct(1)
    ch = Chart((-1.0,), (1.0,), (21,))
    x = ch.axes[0]
    phi = boundary_field(E, ch, 0.0)
    s = closed_state(E, ch, 0.5 * x**2, phi)
    dt = 1e-4
    s2 = flow.step(E, s, FlowConfig(scheme="explicit"), dt, phi)
    assert s2.u[10] == pytest.approx(dt, rel=1e-12)


@pytest.mark.parametrize("scheme", ["explicit", "semi_implicit"])
def test_grim_reaper_translates(scheme):
    E = EuclideanProduct(1)
    ch = grim_chart(65)
    phi = boundary_field(E, ch, SIN1)
    u0 = grim_u0(ch.points)
    s = closed_state(E, ch, u0, phi)
    cfg = FlowConfig(scheme=scheme)
    dt = flow.explicit_dt(E, s) if scheme == "explicit" else 1e-3
    k = 50
    for _ in range(k):
        s = flow.step(E, s, cfg, dt, phi)
    h = ch.h[0]
    assert np.abs(s.u - (u0 + k * dt)).max() <= 20 * (h**2 + dt) * k * dt


# ---------------------------------------------------------------------------
# runs


def test_run_relaxes_to_constant():
    E = EuclideanProduct(1)
    ch = Chart((0.0,), (1.0,), (33,))
    res = run_flow(E, ch, lambda x: 0.1 * np.cos(np.pi * x[..., 0]),
                   FlowConfig(dt=0.01, t_end=20.0, steady_tol=1e-10))
    assert res.stop_reason == "steady"
    assert np.abs(res.final.p).max() <= 1e-6
    assert np.ptp(res.final.u) <= 1e-6


def test_run_grim_reaper():
    E = EuclideanProduct(1)
    ch = grim_chart(65)
    res = run_flow(E, ch, grim_u0, FlowConfig(dt=1e-3, t_end=0.2, phi=SIN1, snapshot_every=50))
    assert res.stop_reason == "reached_t_end"
    h = ch.h[0]
    # interior nodes ride at unit speed; the boundary row carries an O(h) consistency error
    t, u = res.snapshots[-1]
    assert t == pytest.approx(0.2)
    assert np.abs(u - grim_u0(ch.points) - t).max() <= 20 * (h**2 + 1e-3) * t
    assert np.all(np.diff(res.series["t"]) > 0)
    assert res.diagnostics["max_principle_ok"]
    assert res.diagnostics["initial_data_compatible"]
    assert len(res.snapshots) == 5


def test_run_snapshots_closed_2d():
    g = Helicoidal()
    ch = helicoid_chart(17)
    phi = lambda x: 0.2 * np.cos(np.pi * x[:, 1])
    res = run_flow(g, ch, plane_profile, FlowConfig(dt=0.01, t_end=0.1, phi=phi,
                                                   snapshot_every=2))
    assert res.series["contact_defect"].max() <= 1e-10
    for t, u in res.snapshots:
        s = closed_state(g, ch, u, res.phi, t)
        assert flow.contact_defect(g, s, res.phi) <= 1e-10


def test_run_max_principle_random_2d(rng):
    g = Helicoidal()
    ch = helicoid_chart(17)
    a = rng.uniform(-0.3, 0.3, 3)
    u0 = lambda x: (a[0] * np.cos(np.pi * x[..., 1]) + a[1] * np.cos(np.pi * (x[..., 0] - 1))
                    * np.cos(np.pi * x[..., 1]) + a[2] * np.cos(2 * np.pi * x[..., 0]))
    res = run_flow(g, ch, u0, FlowConfig(dt=0.005, t_end=0.2))
    d = res.diagnostics
    assert d["max_principle_ok"] and d["height_bound_ok"] and d["gradient_bound_ok"]


def test_run_diverges_with_huge_explicit_step():
    E = EuclideanProduct(1)
    ch = Chart((0.0,), (1.0,), (33,))
    res = run_flow(E, ch, lambda x: 0.3 * np.cos(np.pi * x[..., 0]),
                   FlowConfig(scheme="explicit", dt=0.5, t_end=200.0))
    assert res.stop_reason == "diverged"


def test_config_validation():
    with pytest.raises(ConfigError):
        FlowConfig(dt=-1.0).validate()
    with pytest.raises(ConfigError):
        FlowConfig(scheme="rk4").validate()


def test_explicit_vs_semi_implicit_first_order():
    E = EuclideanProduct(1)
    ch = Chart((-1.0,), (1.0,), (33,))
    u0 = lambda x: 0.2 * np.cos(np.pi * x[..., 0]) - 0.1 * x[..., 0] ** 2

    def final(scheme, dt):
        return run_flow(E, ch, u0, FlowConfig(scheme=scheme, dt=dt, t_end=0.1)).final.u

    ref = final("explicit", flow.explicit_dt(E, closed_state(E, ch, u0(ch.points), 0.0)) / 4)
    e1 = np.abs(final("semi_implicit", 0.01) - ref).max()
    e2 = np.abs(final("semi_implicit", 0.005) - ref).max()
    assert 1.6 <= e1 / e2 <= 2.4


# ---------------------------------------------------------------------------
# energy and dissipation


def test_energy_trivial_values():
    E1 = EuclideanProduct(1)
    ch1 = Chart((0.0,), (1.0,), (9,))
    assert flow.energy(E1, closed_state(E1, ch1, np.zeros(9), 0.0), 0.0) == pytest.approx(1.0)
    E2 = EuclideanProduct(2)
    ch2 = Chart((0.0, 0.0), (1.0, 1.0), (9, 9))
    s = closed_state(E2, ch2, np.zeros(ch2.shape), 0.0)
    assert flow.energy(E2, s, 0.0) == pytest.approx(1.0)


def test_energy_grim_reaper_values():
    E = EuclideanProduct(1)
    errs = {}
    for m in (129, 257):
        ch = grim_chart(m)
        s = grim_state(E, ch)
        area = 2 * np.log(1 / np.cos(1) + np.tan(1))
        bd = 2 * -np.log(np.cos(1)) * SIN1
        errs[m] = (abs(flow.energy(E, s, SIN1) - (area - bd)),
                   abs(flow.energy(E, s, SIN1, weighting="printed") - (area + bd)))
    assert area - bd == pytest.approx(1.4163, abs=1e-4)
    assert area + bd == pytest.approx(3.4884, abs=1e-4)
    assert max(errs[129]) < 5e-4
    assert errs[129][0] / errs[257][0] > 3.5


def test_energy_unknown_weighting():
    E = EuclideanProduct(1)
    with pytest.raises(ValueError):
        flow.energy(E, grim_state(E, grim_chart(9)), 0.0, weighting="other")


def test_dissipation_grim_reaper_rate():
    E = EuclideanProduct(1)
    ch = grim_chart(129)
    res = run_flow(E, ch, grim_u0, FlowConfig(dt=1e-3, t_end=0.05, phi=SIN1))
    rate = np.diff(res.series["energy"]) / np.diff(res.series["t"])
    np.testing.assert_allclose(rate, -2 * SIN1, atol=5e-3)
    assert np.nanmax(res.series["dissipation_residual"]) < 5e-3


def test_dissipation_general_gamma_forms():
    sc = scenario_from("exp_warp_1d")
    res = run_flow(sc.geometry, sc.chart, sc.u0, sc.flow_config())
    h = max(sc.chart.h)
    budget = 20 * (h**2 + res.dt)
    assert np.nanmax(res.series["dissipation_residual"]) <= budget
    assert np.nanmax(res.series["dissipation_residual_weighted"]) <= budget
    assert np.nanmax(res.series["dissipation_residual_printed"]) > 10 * budget


def test_dissipation_steady_state_small():
    g = ExponentialWarp(0.5)
    ch = Chart((-1.0,), (1.0,), (65,))
    s0 = closed_state(g, ch, np.zeros(65), 0.0)
    s1 = GraphState(ch, s0.u, s0.du, s0.d2u, 0.01, "closed")
    assert flow.dissipation_residual(g, s0, s1, 0.0) < 1e-12
    with pytest.raises(ValueError):
        flow.dissipation_residual(g, s1, s0, 0.0)


def test_energy_monotone_product_case(rng):
    E = EuclideanProduct(2)
    ch = Chart((0.0, 0.0), (1.0, 1.0), (17, 17))
    u0 = lambda x: 0.2 * np.cos(np.pi * x[..., 0]) * np.cos(np.pi * x[..., 1])
    res = run_flow(E, ch, u0, FlowConfig(dt=0.01, t_end=0.5, phi=0.2))
    h, dt = ch.h[0], res.dt
    assert np.all(np.diff(res.series["energy"]) <= (h**2 + dt) * dt)


def test_compatibility_flag():
    E = EuclideanProduct(1)
    ch = Chart((0.0,), (1.0,), (33,))
    res = run_flow(E, ch, lambda x: x[..., 0], FlowConfig(dt=0.01, t_end=0.02))
    assert not res.diagnostics["initial_data_compatible"]
