"""Shared fixtures: each test system's pipeline built once per session."""

from types import SimpleNamespace

import numpy as np
import pytest

from lcmetric.floquet import assemble, eps_prime_for, modified_real_jordan
from lcmetric.global_metric import build_global_metric
from lcmetric.ode_core import integrate_linear_periodic
from lcmetric.orbit_metric import build_orbit_metric
from lcmetric.periodic_orbit import find_orbit, floquet_spectrum
from lcmetric.projection_sync import build_chart
from lcmetric.systems import (
    default_orbit_guess,
    make_linear_periodic,
    make_system,
)


def _build_stage(name, eps=None, eps_rel=None, params=None):
    system = make_system(name, params)
    x0, t0 = default_orbit_guess(name)
    orbit = find_orbit(system, x0, t0)
    spectrum = floquet_spectrum(orbit)
    if eps is None:
        eps = eps_rel * spectrum.nu
    om = build_orbit_metric(orbit, eps, spectrum=spectrum)
    chart = build_chart(om)
    gm = build_global_metric(chart)
    return SimpleNamespace(
        system=system,
        orbit=orbit,
        spectrum=spectrum,
        eps=eps,
        om=om,
        chart=chart,
        gm=gm,
    )


@pytest.fixture(scope="session")
def radial_stage():
    return _build_stage("radial", eps=0.2)


@pytest.fixture(scope="session")
def vdp_stage():
    return _build_stage("vdp", eps_rel=0.3)


@pytest.fixture(scope="session")
def cyl_stage():
    return _build_stage("cylinder3d", eps=0.2)


@pytest.fixture(scope="session")
def linper_dec():
    """Floquet decomposition for the orbit-free linear-periodic system,
    whose monodromy has two negative real multipliers."""
    lp = make_linear_periodic()
    eps = 0.05
    phi = integrate_linear_periodic(lp.F, lp.n, (0.0, lp.period))
    C = phi.phi(lp.period)
    jordan = modified_real_jordan(C, eps_prime_for(eps, lp.period))
    dec = assemble(jordan, phi, lp.period, eps)
    return SimpleNamespace(lp=lp, eps=eps, dec=dec, monodromy=C)
