"""Integration, dense output, event roots, and orbital derivatives."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from lcmetric.errors import NoSignChange, StepSizeUnderflow
from lcmetric.ode_core import (
    OdeSystem,
    Tolerances,
    event_root,
    integrate,
    integrate_linear_periodic,
    integrate_variational,
    orbital_derivative,
)
from lcmetric.systems import make_radial, make_vdp

from oracles import radial_rho


def _reversed(system):
    return OdeSystem(
        name=system.name + "-rev",
        n=system.n,
        f=lambda x: -system.f(x),
        jac=lambda x: -system.jac(x),
    )


def test_zero_field_variational_is_identity():
    sys_ = OdeSystem(
        name="still", n=3,
        f=lambda x: np.zeros(3),
        jac=lambda x: np.zeros((3, 3)),
    )
    var = integrate_variational(sys_, np.array([1.0, -2.0, 0.5]), (0.0, 4.0))
    for t in (0.0, 1.7, 4.0):
        assert_allclose(var.phi(t), np.eye(3), atol=1e-14)
        assert_allclose(var.base.state(t), [1.0, -2.0, 0.5], atol=1e-14)


def test_dense_output_matches_polar_closed_form():
    traj = integrate(make_radial(), np.array([2.0, 0.0]), (0.0, 5.0))
    ts = np.linspace(0.0, 5.0, 37)
    states = traj.states(ts)
    rho = radial_rho(2.0, ts)
    assert_allclose(np.linalg.norm(states, axis=1), rho, atol=1e-9)
    # the polar angle advances at unit rate from phase 0
    ang = np.unwrap(np.arctan2(states[:, 1], states[:, 0]))
    assert_allclose(ang, ts, atol=1e-9)


def test_event_root_zero_at_left_endpoint():
    traj = integrate(make_radial(), np.array([1.0, 0.0]), (0.0, 3.0))
    t = event_root(traj, lambda s: s[1], bracket=(0.0, 0.5))
    assert t == 0.0


def test_event_root_bracketed():
    # x-coordinate cos(t) crosses zero at pi/2 on the unit orbit
    traj = integrate(make_radial(), np.array([1.0, 0.0]), (0.0, 3.0))
    t = event_root(traj, lambda s: s[0], bracket=(1.2, 1.8))
    assert abs(t - np.pi / 2.0) < 1e-10


def test_event_root_scan_finds_first_crossing():
    traj = integrate(make_radial(), np.array([1.0, 0.0]), (0.0, 12.0))
    # cos crosses at pi/2, 3pi/2, ...; the scan must return the first
    t = event_root(traj, lambda s: s[0])
    assert abs(t - np.pi / 2.0) < 1e-10


def test_event_root_no_sign_change():
    traj = integrate(make_radial(), np.array([1.0, 0.0]), (0.0, 2.0))
    with pytest.raises(NoSignChange):
        event_root(traj, lambda s: s[0] + 10.0, bracket=(0.1, 0.4))


def test_orbital_derivative_constant_field():
    sys_ = make_vdp()
    x = np.array([1.3, -0.4])
    val = orbital_derivative(lambda y: np.array(2.5), x, sys_)
    assert abs(float(val)) < 1e-9


def test_orbital_derivative_identity_matrix_field():
    sys_ = make_vdp()
    x = np.array([0.7, 1.1])
    val = orbital_derivative(lambda y: np.eye(2), x, sys_)
    assert np.max(np.abs(val)) < 1e-9


def test_orbital_derivative_matches_analytic_on_vdp():
    # field F(x) = |x|^2 has orbital derivative 2 x . f(x)
    sys_ = make_vdp()
    rng = np.random.default_rng(3)
    for x in rng.uniform(-2.0, 2.0, size=(5, 2)):
        fd = float(orbital_derivative(lambda y: np.dot(y, y), x, sys_, h=1e-5))
        exact = 2.0 * float(np.dot(x, sys_.f(x)))
        assert abs(fd - exact) <= 1e-5 * max(1.0, abs(exact))


def test_blowup_raises_step_size_underflow():
    # the reversed radial field escapes to infinity in finite time
    rev = _reversed(make_radial())
    with pytest.raises(StepSizeUnderflow):
        integrate(rev, np.array([1.5, 0.0]), (0.0, 5.0))


def test_linear_periodic_matches_closed_form():
    from lcmetric.systems import make_linear_periodic

    lp = make_linear_periodic()
    var = integrate_linear_periodic(lp.F, lp.n, (0.0, lp.period))
    for t in (0.3, 1.9, lp.period):
        assert_allclose(var.phi(t), lp.phi_closed(t), atol=1e-9)


def test_trajectory_state_out_of_range():
    from lcmetric.errors import BadInterval

    traj = integrate(make_radial(), np.array([1.0, 0.0]), (0.0, 1.0))
    with pytest.raises(BadInterval):
        traj.state(1.5)
