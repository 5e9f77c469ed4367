"""Built-in test systems and the name -> factory registry.

Each factory returns either an :class:`~lcmetric.ode_core.OdeSystem`
(autonomous fields with a known attracting cycle) or a
:class:`LinearPeriodicSystem` (directly specified periodic coefficient
matrix, used for Floquet analysis without an orbit).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .ode_core import OdeSystem

__all__ = [
    "LinearPeriodicSystem",
    "make_radial",
    "make_vdp",
    "make_cylinder3d",
    "make_linear_periodic",
    "REGISTRY",
    "make_system",
    "default_orbit_guess",
]


@dataclass(frozen=True)
class LinearPeriodicSystem:
    """T-periodic coefficient matrix F(t) for y' = F(t) y.

    ``phi_closed`` gives the exact fundamental matrix where one is known
    (used as an oracle by tests and never by the pipeline).
    """

    name: str
    n: int
    period: float
    F: Callable[[float], np.ndarray]
    params: Mapping[str, float] = field(default_factory=dict)
    phi_closed: Callable[[float], np.ndarray] | None = None


def make_radial() -> OdeSystem:
    """Planar field with the unit circle as attracting cycle.

    x' = -y + x (1 - x^2 - y^2),  y' = x + y (1 - x^2 - y^2).
    In polar form r' = r (1 - r^2), angle' = 1, so the cycle has period
    2*pi and nontrivial multiplier exp(-4*pi).
    """

    def f(x):
        g = 1.0 - x[0] ** 2 - x[1] ** 2
        return np.array([-x[1] + x[0] * g, x[0] + x[1] * g])

    def jac(x):
        g = 1.0 - x[0] ** 2 - x[1] ** 2
        return np.array(
            [
                [g - 2.0 * x[0] ** 2, -1.0 - 2.0 * x[0] * x[1]],
                [1.0 - 2.0 * x[0] * x[1], g - 2.0 * x[1] ** 2],
            ]
        )

    return OdeSystem(name="radial", n=2, f=f, jac=jac)


def make_vdp(mu: float = 1.0) -> OdeSystem:
    """Van der Pol oscillator in Lienard-free form: x' = y, y' = mu (1 - x^2) y - x."""

    def f(x):
        return np.array([x[1], mu * (1.0 - x[0] ** 2) * x[1] - x[0]])

    def jac(x):
        return np.array(
            [
                [0.0, 1.0],
                [-2.0 * mu * x[0] * x[1] - 1.0, mu * (1.0 - x[0] ** 2)],
            ]
        )

    return OdeSystem(name="vdp", n=2, f=f, jac=jac, params={"mu": mu})


def make_cylinder3d() -> OdeSystem:
    """Radial system crossed with z' = -z; multipliers {1, e^{-4 pi}, e^{-2 pi}}."""

    def f(x):
        g = 1.0 - x[0] ** 2 - x[1] ** 2
        return np.array([-x[1] + x[0] * g, x[0] + x[1] * g, -x[2]])

    def jac(x):
        g = 1.0 - x[0] ** 2 - x[1] ** 2
        return np.array(
            [
                [g - 2.0 * x[0] ** 2, -1.0 - 2.0 * x[0] * x[1], 0.0],
                [1.0 - 2.0 * x[0] * x[1], g - 2.0 * x[1] ** 2, 0.0],
                [0.0, 0.0, -1.0],
            ]
        )

    return OdeSystem(name="cylinder3d", n=3, f=f, jac=jac)


def _rot(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s], [s, c]])


def make_linear_periodic(
    period: float = 2.0 * np.pi,
    mult1: float = -0.5,
    mult2: float = -0.2,
) -> LinearPeriodicSystem:
    """Periodic linear system whose monodromy has two negative real multipliers.

    Built from the exact fundamental matrix Phi(t) = R(w t) e^{D t} with
    w = pi/T and D = diag(ln|mult_i| / T): then F(t) = w J + R(w t) D R(-w t)
    is T-periodic and Phi(T) = -e^{D T} = diag(mult1, mult2).  Negative
    multipliers force a genuinely complex periodic factor, which is what
    this system exists to exercise.
    """
    if not (mult1 < 0 and mult2 < 0):
        raise ValueError("multipliers must be negative reals")
    T = float(period)
    w = np.pi / T
    d = np.array([np.log(abs(mult1)) / T, np.log(abs(mult2)) / T])
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    D = np.diag(d)

    def F(t: float) -> np.ndarray:
        R = _rot(w * t)
        return w * J + R @ D @ R.T

    def phi_closed(t: float) -> np.ndarray:
        return _rot(w * t) @ np.diag(np.exp(d * t))

    return LinearPeriodicSystem(
        name="linear-periodic",
        n=2,
        period=T,
        F=F,
        params={"period": T, "mult1": mult1, "mult2": mult2},
        phi_closed=phi_closed,
    )


REGISTRY: dict[str, Callable] = {
    "radial": make_radial,
    "vdp": make_vdp,
    "cylinder3d": make_cylinder3d,
    "linear-periodic": make_linear_periodic,
}

# shooting seeds for the autonomous systems
_GUESSES: dict[str, tuple[list[float], float]] = {
    "radial": ([1.0, 0.0], 2.0 * np.pi),
    "vdp": ([2.0, 0.0], 6.5),
    "cylinder3d": ([1.0, 0.0, 0.0], 2.0 * np.pi),
}


def make_system(name: str, params: Mapping | None = None):
    """Instantiate a registered system by name with optional parameters."""
    if name not in REGISTRY:
        known = ", ".join(sorted(REGISTRY))
        raise KeyError(f"unknown system {name!r}; known systems: {known}")
    return REGISTRY[name](**dict(params or {}))


def default_orbit_guess(name: str) -> tuple[np.ndarray, float]:
    if name not in _GUESSES:
        raise KeyError(f"no default orbit guess for system {name!r}")
    x, T = _GUESSES[name]
    return np.array(x, dtype=float), T
