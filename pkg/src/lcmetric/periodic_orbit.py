"""Locating periodic orbits by Newton shooting and analysing their multipliers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AmbiguousTrivialMultiplier,
    EquilibriumFound,
    NoConvergence,
    NotExponentiallyStable,
    OrbitError,
    SingularShootingJacobian,
)
from .ode_core import OdeSystem, Tolerances, Trajectory, VariationalTrajectory, integrate, integrate_variational

__all__ = ["PeriodicOrbit", "FloquetSpectrum", "find_orbit", "floquet_spectrum"]


@dataclass(frozen=True)
class PeriodicOrbit:
    """A closed trajectory x' = f(x), S_T q = q, with dense flow data.

    ``variational`` spans one period from the anchor point ``q`` and
    carries both the orbit states and the fundamental matrix, so the
    monodromy and all phase evaluations come from a single integration.
    """

    system: OdeSystem
    q: np.ndarray
    period: float
    residual: float
    variational: VariationalTrajectory

    @property
    def orbit(self) -> Trajectory:
        return self.variational.base

    @property
    def monodromy(self) -> np.ndarray:
        return self.variational.monodromy

    def point(self, theta: float) -> np.ndarray:
        """Orbit state at phase ``theta`` (reduced modulo the period)."""
        return self.orbit.state(float(np.mod(theta, self.period)))

    def points(self, thetas: np.ndarray) -> np.ndarray:
        return self.orbit.states(np.mod(np.asarray(thetas, dtype=float), self.period))

    def velocity(self, theta: float) -> np.ndarray:
        return np.asarray(self.system.f(self.point(theta)), dtype=float)


@dataclass(frozen=True)
class FloquetSpectrum:
    """Clustered monodromy eigenvalues with the trivial multiplier snapped to 1.

    ``multipliers`` lists one entry per eigenvalue, trivial first, the
    rest ordered by descending modulus.  ``nu`` is the orbital
    contraction rate -max(ln|lambda|)/T over the nontrivial part.
    """

    period: float
    multipliers: np.ndarray
    nu: float
    clusters: tuple[tuple[complex, int], ...]
    tol_cluster: float

    @property
    def nontrivial(self) -> np.ndarray:
        return self.multipliers[1:]


def _full_residual(system: OdeSystem, x: np.ndarray, T: float, x_anchor, f_anchor, tol):
    traj = integrate(system, x, (0.0, T), tol)
    xT = traj.state(T)
    r = xT - x
    c = float(f_anchor @ (x - x_anchor))
    return np.concatenate([r, [c]]), xT


def find_orbit(
    system: OdeSystem,
    x_guess: np.ndarray,
    period_guess: float,
    tol: Tolerances = Tolerances(),
    max_iter: int = 30,
) -> PeriodicOrbit:
    """Newton shooting for a periodic orbit near ``(x_guess, period_guess)``.

    Solves ``S_T x = x`` together with the phase condition
    ``f(x_guess) . (x - x_guess) = 0`` for the unknowns ``(x, T)``.  The
    Newton matrix couples the monodromy with the terminal velocity:

        [ Phi(T) - I   f(S_T x) ] [dx]   [ x - S_T x ]
        [ f(x_guess)^T     0    ] [dT] = [    -c     ]

    Steps are damped by halving until the residual norm drops.  The
    accepted orbit must close up to ``1e-9 * (1 + |q|)``; the period is
    made minimal by restarting from ``T/k`` when ``S_{T/k} q`` already
    returns to ``q`` for k in {2, 3}.

    Raises
    ------
    NoConvergence, SingularShootingJacobian, EquilibriumFound
    """
    x = np.asarray(x_guess, dtype=float).copy()
    T = float(period_guess)
    if T <= 0:
        raise ValueError("period guess must be positive")
    x_anchor = x.copy()
    f_anchor = np.asarray(system.f(x_anchor), dtype=float)
    if np.linalg.norm(f_anchor) <= 1e-12 * (1.0 + np.linalg.norm(x_anchor)):
        raise EquilibriumFound(f"guess {x_anchor} is an equilibrium of {system.name!r}")

    res_vec, _ = _full_residual(system, x, T, x_anchor, f_anchor, tol)
    res = float(np.linalg.norm(res_vec))
    n = system.n

    for _ in range(max_iter):
        scale = 1.0 + float(np.linalg.norm(x))
        if res <= 5e-13 * scale:
            break
        vt = integrate_variational(system, x, (0.0, T), tol)
        xT = vt.base.state(T)
        fT = np.asarray(system.f(xT), dtype=float)
        if np.linalg.norm(fT) <= 1e-10 * scale:
            raise EquilibriumFound(
                f"shooting for {system.name!r} collapsed onto an equilibrium near {xT}"
            )
        J = np.zeros((n + 1, n + 1))
        J[:n, :n] = vt.monodromy - np.eye(n)
        J[:n, n] = fT
        J[n, :n] = f_anchor
        try:
            step = np.linalg.solve(J, -res_vec)
        except np.linalg.LinAlgError as exc:
            raise SingularShootingJacobian(
                f"shooting Jacobian singular for {system.name!r}"
            ) from exc
        if np.linalg.cond(J) > 1e14:
            raise SingularShootingJacobian(
                f"shooting Jacobian numerically singular for {system.name!r} "
                f"(cond {np.linalg.cond(J):.2e})"
            )

        lam, accepted = 1.0, False
        for _ in range(7):
            x_new = x + lam * step[:n]
            T_new = T + lam * step[n]
            if T_new > 0.1 * T:
                r_new, _ = _full_residual(system, x_new, T_new, x_anchor, f_anchor, tol)
                if np.linalg.norm(r_new) < res:
                    x, T, res_vec, res = x_new, T_new, r_new, float(np.linalg.norm(r_new))
                    accepted = True
                    break
            lam *= 0.5
        if not accepted:
            break

    scale = 1.0 + float(np.linalg.norm(x))
    if res > 1e-9 * scale:
        raise NoConvergence(
            f"shooting for {system.name!r} stalled at residual {res:.3e} "
            f"(target {1e-9 * scale:.3e})"
        )

    # enforce minimality: a k-fold cover returns to q after T/k already
    for k in (2, 3):
        sub = integrate(system, x, (0.0, T / k), tol).state(T / k)
        if np.linalg.norm(sub - x) <= 1e-8 * scale:
            return find_orbit(system, x, T / k, tol=tol, max_iter=max_iter)

    vt = integrate_variational(system, x, (0.0, T), tol)
    closure = float(np.linalg.norm(vt.base.state(T) - x))
    return PeriodicOrbit(system=system, q=x, period=T, residual=closure, variational=vt)


def _cluster(values: np.ndarray, tol: float) -> list[list[int]]:
    k = len(values)
    parent = list(range(k))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    scale = max(1.0, float(np.max(np.abs(values))))
    for i in range(k):
        for j in range(i + 1, k):
            if abs(values[i] - values[j]) <= tol * scale:
                parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for i in range(k):
        groups.setdefault(find(i), []).append(i)
    return list(groups.values())


def floquet_spectrum(
    orbit: PeriodicOrbit,
    tol_cluster: float = 1e-6,
) -> FloquetSpectrum:
    """Eigenvalues of the monodromy, clustered and stability-checked.

    The eigenvalue nearest 1 is the trivial multiplier (eigenvector
    f(q)); it is snapped to exactly 1.  Every nontrivial cluster must
    sit strictly inside the unit circle, by at least ``tol_cluster``.

    Raises
    ------
    AmbiguousTrivialMultiplier
        If the cluster containing the value nearest 1 has more than one
        member, i.e. a second multiplier lies within ``tol_cluster`` of 1.
    NotExponentiallyStable
        If any nontrivial multiplier has modulus >= 1 - tol_cluster.
    """
    lam = np.linalg.eigvals(orbit.monodromy)
    groups = _cluster(lam, tol_cluster)

    near_one = int(np.argmin(np.abs(lam - 1.0)))
    if abs(lam[near_one] - 1.0) > 1e-5:
        raise OrbitError(
            f"no multiplier near 1 (closest: {lam[near_one]:.6g}); "
            "orbit data is inconsistent"
        )
    trivial_group = next(g for g in groups if near_one in g)
    if len(trivial_group) > 1:
        raise AmbiguousTrivialMultiplier(
            f"{len(trivial_group)} multipliers within {tol_cluster:g} of 1: "
            f"{lam[trivial_group]}"
        )

    nontrivial_idx = [i for i in range(len(lam)) if i != near_one]
    nontrivial = lam[nontrivial_idx]
    if len(nontrivial):
        worst = float(np.max(np.abs(nontrivial)))
        if worst >= 1.0 - tol_cluster:
            raise NotExponentiallyStable(
                f"nontrivial multiplier of modulus {worst:.6g} >= 1 - {tol_cluster:g}"
            )
        nu = -np.log(worst) / orbit.period
    else:
        raise NotExponentiallyStable("orbit has no transverse directions")

    order = np.argsort(-np.abs(nontrivial))
    multipliers = np.concatenate([[1.0 + 0.0j], nontrivial[order]])

    clusters: list[tuple[complex, int]] = [(1.0 + 0.0j, 1)]
    for g in groups:
        if near_one in g:
            continue
        clusters.append((complex(np.mean(lam[g])), len(g)))

    return FloquetSpectrum(
        period=orbit.period,
        multipliers=multipliers,
        nu=float(nu),
        clusters=tuple(clusters),
        tol_cluster=tol_cluster,
    )
