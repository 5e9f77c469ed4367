"""Shooting, minimal period, and the Floquet spectrum."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from lcmetric.errors import EquilibriumFound, NotExponentiallyStable
from lcmetric.ode_core import OdeSystem
from lcmetric.periodic_orbit import find_orbit, floquet_spectrum
from lcmetric.systems import make_radial, make_vdp

from oracles import multiplier_product_oracle, vdp_orbit_oracle


def test_exact_guess_converges_immediately():
    orb = find_orbit(make_radial(), np.array([1.0, 0.0]), 2.0 * np.pi)
    assert_allclose(orb.q, [1.0, 0.0], atol=1e-9)
    assert abs(orb.period - 2.0 * np.pi) < 1e-9
    assert orb.residual < 1e-9


def test_vdp_period_matches_independent_shooting(vdp_stage):
    a_ref, t_ref = vdp_orbit_oracle(mu=1.0)
    assert abs(vdp_stage.orbit.period - t_ref) < 1e-7
    # same section convention (x2 = 0 at the anchor, x1 > 0)
    assert abs(vdp_stage.orbit.q[0] - a_ref) < 1e-6


def test_multiplier_product_abel_liouville(radial_stage, vdp_stage):
    for stage in (radial_stage, vdp_stage):
        prod = float(np.prod(stage.spectrum.multipliers).real)
        ref = multiplier_product_oracle(
            stage.system, stage.orbit.q, stage.orbit.period
        )
        assert abs(prod - ref) <= 1e-6 * abs(ref)


def test_doubled_period_guess_returns_minimal_period():
    orb = find_orbit(make_radial(), np.array([1.0, 0.0]), 4.0 * np.pi)
    assert abs(orb.period - 2.0 * np.pi) < 1e-6


def test_radial_spectrum(radial_stage):
    spec = radial_stage.spectrum
    mults = sorted(np.abs(spec.multipliers))
    assert abs(mults[-1] - 1.0) < 1e-8
    assert abs(mults[0] - np.exp(-4.0 * np.pi)) < 1e-10
    assert abs(spec.nu - 2.0) < 1e-6


def test_cylinder3d_spectrum(cyl_stage):
    spec = cyl_stage.spectrum
    assert len(spec.multipliers) == 3
    assert abs(spec.nu - 1.0) < 1e-6
    mods = sorted(np.abs(spec.multipliers))
    assert_allclose(
        mods,
        [np.exp(-4.0 * np.pi), np.exp(-2.0 * np.pi), 1.0],
        atol=1e-8,
    )


def test_equilibrium_guess_rejected():
    with pytest.raises(EquilibriumFound):
        find_orbit(make_vdp(), np.array([0.0, 0.0]), 6.5)


def test_unstable_orbit_rejected():
    base = make_radial()
    rev = OdeSystem(
        name="radial-rev", n=2,
        f=lambda x: -base.f(x),
        jac=lambda x: -base.jac(x),
    )
    # the reversed field shares the cycle but repels from it
    orb = find_orbit(rev, np.array([1.0, 0.0]), 2.0 * np.pi)
    with pytest.raises(NotExponentiallyStable):
        floquet_spectrum(orb)


def test_orbit_point_velocity_consistency(vdp_stage):
    orb = vdp_stage.orbit
    thetas = np.array([0.0, 1.0, 3.7])
    pts = orb.points(thetas)
    for th, p in zip(thetas, pts):
        assert_allclose(orb.point(th), p, atol=1e-12)
        assert_allclose(orb.velocity(th), orb.system.f(p), atol=1e-8)
    # closure
    assert_allclose(orb.point(orb.period), orb.q, atol=1e-8)
