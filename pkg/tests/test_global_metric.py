"""Blending, potential and final-metric tests.

Radial closed forms drive most checks: the flow has rho' = rho(1 - rho^2),
the identity-metric rate is

    L_I(rho) = [(1 - 3 rho^2) + (1 - rho^2)^3] / (1 + (1 - rho^2)^2),

and far from the orbit M1 = I, r = -mu, so L_M = -mu exactly.
"""

import dataclasses

import numpy as np
import pytest
from oracles import brute_force_lm, radial_l_i, radial_tau, radial_v, radial_vloc, smooth_step

from lcmetric.errors import (
    BadInterval,
    NeverReachesLevel,
    NoDecayDetected,
    OutsideBasin,
    SingularF,
)
from lcmetric.global_metric import bump, bump_prime
from lcmetric.ode_core import integrate, orbital_derivative
from lcmetric.projection_sync import sample_tube


def _radial_point(d):
    return np.array([1.0 + np.sqrt(d), 0.0])


# -- bump ----------------------------------------------------------------


def test_bump_plateaus_and_midpoint():
    a, b = 0.2, 0.8
    assert bump(0.0, a, b) == 1.0
    assert bump(a, a, b) == 1.0
    assert bump(b, a, b) == 0.0
    assert bump(2.0, a, b) == 0.0
    assert bump(0.5 * (a + b), a, b) == pytest.approx(0.5, abs=1e-15)
    # flat to machine precision at the edges, strictly decreasing inside
    s = np.linspace(a, b, 200)
    assert np.all(np.diff(bump(s, a, b)) <= 0.0)
    mid = np.linspace(a + 0.1 * (b - a), b - 0.1 * (b - a), 50)
    assert np.all(np.diff(bump(mid, a, b)) < 0.0)


def test_bump_matches_independent_step():
    a, b = 0.1, 0.7
    for s in np.linspace(-0.2, 1.0, 97):
        assert bump(s, a, b) == pytest.approx(smooth_step(s, a, b), abs=1e-14)


def test_bump_prime_matches_difference_quotient():
    a, b = 0.2, 0.8
    h = 1e-6
    for s in (0.3, 0.45, 0.5, 0.62, 0.75):
        fd = (bump(s + h, a, b) - bump(s - h, a, b)) / (2.0 * h)
        assert bump_prime(s, a, b) == pytest.approx(fd, rel=1e-6, abs=1e-10)
    assert bump_prime(a, a, b) == 0.0
    assert bump_prime(b, a, b) == 0.0


def test_bump_rejects_empty_interval():
    with pytest.raises(BadInterval):
        bump(0.5, 1.0, 1.0)
    with pytest.raises(BadInterval):
        bump_prime(0.5, 2.0, 1.0)


# -- blended metric and target rate ---------------------------------------


def test_far_field_is_identity_metric(radial_stage):
    gm = radial_stage.gm
    x = np.array([1.5, 0.0])
    assert np.allclose(gm.m1_at(x), np.eye(2), atol=1e-14)
    assert np.allclose(gm.m1_prime_many(x[None, :])[0], 0.0, atol=1e-14)
    assert gm.r_at(x) == pytest.approx(-gm.mu, abs=1e-15)
    got = gm.l_m1_many(x[None, :])[0]
    assert got == pytest.approx(radial_l_i(1.5), rel=1e-8)


def test_v_prime_far_field_closed_form(radial_stage):
    gm = radial_stage.gm
    for rho in (1.5, 2.0):
        x = np.array([rho, 0.0])
        got = gm.v_prime_many(x[None, :])[0]
        assert got == pytest.approx(-(radial_l_i(rho) + gm.mu), rel=1e-8)


def test_rate_interpolates_in_band(radial_stage):
    gm = radial_stage.gm
    a1, b1 = gm.levels["h1"]
    x = _radial_point(0.5 * (a1 + b1))
    r = gm.r_at(x)
    assert r <= -gm.mu + 1e-12
    assert r >= -gm.nu - 1e-6


def test_on_orbit_rate_is_orbit_rate(radial_stage):
    gm = radial_stage.gm
    x = radial_stage.orbit.points(np.array([1.3]))[0]
    assert gm.r_at(x) == pytest.approx(-2.0, abs=1e-6)
    assert abs(gm.v_prime_many(x[None, :])[0]) < 1e-6


def test_levels_layout(radial_stage):
    gm = radial_stage.gm
    i = gm.iota
    assert gm.levels["h1"] == (i / 3.0, 2.0 * i / 3.0)
    assert gm.levels["h2"] == (4.0 * i / 3.0, 5.0 * i / 3.0)
    assert gm.levels["iota_u"] == gm.chart.iota_u
    assert i == pytest.approx(gm.chart.iota_u / 4.0)


def test_m1_prime_analytic_vs_fd_vdp(vdp_stage):
    gm = vdp_stage.gm
    rng = np.random.default_rng(13)
    # points inside the h2 transition, where M1' has both bump and
    # rotation terms
    xs = sample_tube(vdp_stage.om, gm.chart.iota_u, 3, rng, radial_fraction=0.375)
    ana = gm.m1_prime_many(xs)
    fd = gm.m1_prime_many(xs, method="fd")
    scale = 1.0 + np.max(np.abs(ana))
    assert np.max(np.abs(ana - fd)) < 1e-3 * scale
    with pytest.raises(ValueError):
        gm.m1_prime_many(xs, method="spectral")


def test_assemble_rejects_equilibrium(radial_stage):
    with pytest.raises(SingularF):
        radial_stage.gm.l_m1_many(np.array([[0.0, 0.0]]))


# -- local potential -------------------------------------------------------


def test_v_loc_matches_quadrature_oracle(radial_stage):
    gm = radial_stage.gm
    got = gm.v_loc(np.array([1.1, 0.0]))
    assert got == pytest.approx(radial_vloc(1.1), abs=1e-7)


def test_v_loc_report_and_orbit_snap(radial_stage):
    gm = radial_stage.gm
    rep = gm.v_loc(np.array([1.1, 0.0]), report=True)
    assert rep.tail_bound <= gm.tail_tol
    assert rep.windows >= 1
    assert rep.t_horizon == pytest.approx(rep.windows * gm.period)
    x_orbit = radial_stage.orbit.points(np.array([0.7]))[0]
    rep0 = gm.v_loc(x_orbit, report=True)
    assert rep0.value == 0.0
    assert rep0.windows == 0


def test_v_loc_equals_v_inside_inner_level(radial_stage):
    # below d = iota/3 the rate r equals the orbit rate, so the two
    # integrands coincide up to the pointwise-vs-constant route gap
    gm = radial_stage.gm
    x = _radial_point(gm.iota / 4.0)
    assert gm.v_loc(x) == pytest.approx(gm.v_at(x), abs=1e-7)


# -- crossing time ----------------------------------------------------------


def test_tau_forward_closed_form(radial_stage):
    gm = radial_stage.gm
    level = gm.iota / 3.0
    got = gm.tau_crossing(np.array([1.2, 0.0]))
    assert got == pytest.approx(radial_tau(1.2, level), rel=1e-7)
    assert got > 0.0


def test_tau_backward_closed_form(radial_stage):
    gm = radial_stage.gm
    level = gm.iota / 3.0
    x = _radial_point(gm.iota / 12.0)
    got = gm.tau_crossing(x)
    assert got < 0.0
    assert got == pytest.approx(radial_tau(x[0], level), rel=1e-6)


def test_tau_shifts_by_flow_time(radial_stage):
    gm = radial_stage.gm
    x = np.array([1.2, 0.0])
    tau0 = gm.tau_crossing(x)
    s = 0.3
    y = integrate(gm.system, x, (0.0, s)).state(s)
    assert gm.tau_crossing(y) == pytest.approx(tau0 - s, rel=1e-8)


def test_tau_backward_lands_on_level_vdp(vdp_stage):
    gm = vdp_stage.gm
    rng = np.random.default_rng(17)
    x = sample_tube(vdp_stage.om, gm.iota / 6.0, 1, rng, radial_fraction=1.0)[0]
    tau = gm.tau_crossing(x)
    assert tau < 0.0
    rev = dataclasses.replace(
        gm.system,
        name="rev",
        f=lambda z: -gm.system.f(z),
        jac=lambda z: -gm.system.jac(z),
    )
    y = integrate(rev, x, (0.0, -tau)).state(-tau)
    assert gm.chart.distance_d(y) == pytest.approx(gm.iota / 3.0, rel=1e-6)


def test_tau_never_reaches_level_at_equilibrium(vdp_stage):
    gm = vdp_stage.gm
    with pytest.raises(NeverReachesLevel):
        gm.tau_crossing(np.array([0.0, 0.0]))


# -- potential and final metric ---------------------------------------------


def test_v_matches_quadrature_oracle(radial_stage):
    gm = radial_stage.gm
    got = gm.v_at(np.array([2.0, 0.0]))
    want = radial_v(2.0, gm.iota, gm.mu)
    assert got == pytest.approx(want, abs=1e-7)


def test_v_difference_is_integral_of_rate_gap(radial_stage):
    # V(x) - V(S_s x) = int_0^s q(S_t x) dt with q = L_{M1} - r
    gm = radial_stage.gm
    x = np.array([1.5, 0.0])
    s = 0.4
    traj = integrate(gm.system, x, (0.0, s))
    xg, wg = np.polynomial.legendre.leggauss(64)
    ts = 0.5 * s * (xg + 1.0)
    q = -gm.v_prime_many(traj.states(ts))
    integral = float(np.sum(0.5 * s * wg * q))
    diff = gm.v_at(x) - gm.v_at(traj.state(s))
    assert diff == pytest.approx(integral, abs=1e-8)


def test_v_zero_on_orbit(radial_stage):
    gm = radial_stage.gm
    x = radial_stage.orbit.points(np.array([2.2]))[0]
    assert gm.v_at(x) == 0.0


def test_v_sweep_twin_quadrature(radial_stage):
    # independent discretization must agree on the converged integral
    gm = radial_stage.gm
    twin = dataclasses.replace(
        gm, gl_nodes=16, panels_per_period=12, _v_cache={}
    )
    x = np.array([1.3, 0.2])
    assert twin.v_at(x) == pytest.approx(gm.v_at(x), abs=1e-9)


def test_v_outside_basin_when_horizon_too_short(radial_stage):
    gm = dataclasses.replace(radial_stage.gm, t_max_factor=1.0, _v_cache={})
    with pytest.raises(OutsideBasin):
        gm.v_at(np.array([2.0, 0.0]))
    # inside the tube the same failure keeps its integration meaning
    with pytest.raises(NoDecayDetected):
        gm.v_at(_radial_point(gm.iota / 4.0))


def test_final_metric_far_field_rate(radial_stage):
    # M = e^{2V} I far out, so the certified rate collapses to -mu
    gm = radial_stage.gm
    x = np.array([1.5, 0.0])
    got = gm.l_m_many(x[None, :])[0]
    assert got == pytest.approx(-gm.mu, rel=1e-6)


def test_final_metric_on_orbit(radial_stage):
    gm = radial_stage.gm
    theta = np.array([0.9])
    x = radial_stage.orbit.points(theta)[0]
    assert np.allclose(gm.m_at(x), radial_stage.om.m0_at(theta)[0], atol=1e-8)


def test_m_prime_matches_flow_difference(radial_stage):
    gm = radial_stage.gm
    x = np.array([1.5, 0.0])
    ana = gm.m_prime_at(x)
    fd = orbital_derivative(gm.m_at, x, gm.system, order=4)
    assert np.max(np.abs(ana - fd)) < 1e-6 * (1.0 + np.max(np.abs(ana)))


def test_l_m_against_brute_force(radial_stage):
    gm = radial_stage.gm
    pts = [
        np.array([1.5, 0.0]),
        _radial_point(1.5 * gm.iota),
        _radial_point(gm.iota / 5.0),
    ]
    vals = gm.l_m_many(np.stack(pts))
    bound = -gm.nu + gm.eps
    for x, val in zip(pts, vals):
        ref = brute_force_lm(
            gm.m_at(x), gm.m_prime_at(x), gm.system.f(x), gm.system.jac(x)
        )
        assert val == pytest.approx(ref, abs=2e-6)
        assert val <= bound + 1e-6


def test_handle_exposes_pipeline_metric(radial_stage):
    gm = radial_stage.gm
    h = gm.handle()
    x = np.array([1.4, 0.3])
    assert np.allclose(h.m(x), gm.m_at(x))
    assert np.allclose(h.m_prime(x), gm.m_prime_at(x))
    assert h.provenance == "pipeline"


def test_build_diagnostics(radial_stage):
    gm = radial_stage.gm
    d = gm.diagnostics
    assert d["mu"] == pytest.approx(gm.nu - gm.eps)
    assert d["m1_min_eig"] > 0.0
    assert d["r_plus_mu_max"] <= 1e-12
    assert d["m1_orbit_gap"] <= 1e-9
