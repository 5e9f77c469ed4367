"""Metric on the periodic orbit built from the Floquet normal form.

With W(theta) = e^{A theta} S^{-1} Phi(theta)^{-1} the orbit metric is

    M0(theta) = Re( W(theta)^H W(theta) ),

which is smooth, T-periodic and positive definite.  Differentiating
along the orbit (Phi' = Df Phi) gives the closed form

    M0'(theta) = Re( W^H (A + A^H) W ) - Df' M0 - M0 Df,

so the symmetrized contraction form collapses to Re(W^H (A + A^H) W)
and the constrained maximum L_{M0} can be computed two independent
ways: the generic reduced eigenproblem at each phase, or the constant

    lambda_max( H_A[1:, 1:] ),   H_A = Re(A + A^H) / 2,

obtained by pushing the constraint set through W (the first coordinate
of W f is identically e_1 once the trivial block leads).  Both routes
are exposed; their agreement is one of the build invariants.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvariantViolation
from .floquet import (
    FloquetDecomposition,
    assemble,
    eps_prime_for,
    modified_real_jordan,
    reorder_for_orbit,
)
from .lm_eval import _core_many
from .periodic_orbit import FloquetSpectrum, PeriodicOrbit, floquet_spectrum

__all__ = ["OrbitMetric", "build_orbit_metric"]


def _phase_derivative(
    fun: Callable[[np.ndarray], np.ndarray],
    thetas: np.ndarray,
    period: float,
    h: float | None = None,
) -> np.ndarray:
    # 4th-order central stencil in the phase; periodicity makes wrap-around safe
    if h is None:
        h = 1e-3 * period
    f1 = fun(thetas + h)
    f_1 = fun(thetas - h)
    f2 = fun(thetas + 2.0 * h)
    f_2 = fun(thetas - 2.0 * h)
    return (8.0 * (f1 - f_1) - (f2 - f_2)) / (12.0 * h)


@dataclass(frozen=True)
class OrbitMetric:
    """M0 along the orbit, its orbital derivative, and L_{M0} routes."""

    orbit: PeriodicOrbit
    spectrum: FloquetSpectrum
    dec: FloquetDecomposition
    eps: float
    invariants: dict

    @property
    def period(self) -> float:
        return self.orbit.period

    @property
    def nu(self) -> float:
        return self.spectrum.nu

    def w_at(self, thetas: np.ndarray) -> np.ndarray:
        return self.dec.w_at(np.mod(np.asarray(thetas, dtype=float), self.period))

    def m0_at(self, thetas: np.ndarray) -> np.ndarray:
        W = self.w_at(thetas)
        M = np.real(W.conj().swapaxes(-1, -2) @ W)
        return 0.5 * (M + M.swapaxes(-1, -2))

    def sym_form_at(self, thetas: np.ndarray) -> np.ndarray:
        """M0 Df + Df' M0 + M0' at each phase, via the W-frame identity."""
        W = self.w_at(thetas)
        A = self.dec.A
        AH = A + A.conj().T
        G = np.real(W.conj().swapaxes(-1, -2) @ AH @ W)
        return 0.5 * (G + G.swapaxes(-1, -2))

    def _jacobians(self, thetas: np.ndarray) -> np.ndarray:
        pts = self.orbit.points(np.asarray(thetas, dtype=float))
        return np.stack([self.orbit.system.jac(p) for p in pts])

    def matrices_at(
        self, thetas: np.ndarray, jac: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(M0, M0', sym form, Df) sharing one frame evaluation per phase."""
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
        W = self.w_at(thetas)
        WH = W.conj().swapaxes(-1, -2)
        M = np.real(WH @ W)
        M = 0.5 * (M + M.swapaxes(-1, -2))
        A = self.dec.A
        G = np.real(WH @ (A + A.conj().T) @ W)
        G = 0.5 * (G + G.swapaxes(-1, -2))
        Df = self._jacobians(thetas) if jac is None else jac
        Mp = G - Df.swapaxes(-1, -2) @ M - M @ Df
        return M, Mp, G, Df

    def m0_prime_at(self, thetas: np.ndarray, method: str = "analytic") -> np.ndarray:
        """Orbital derivative of M0; ``method`` is "analytic" or "fd".

        The finite-difference route exists to keep the analytic identity
        honest and is what the build invariants compare against.
        """
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
        if method == "fd":
            return _phase_derivative(self.m0_at, thetas, self.period)
        if method != "analytic":
            raise ValueError(f"unknown m0_prime method {method!r}")
        G = self.sym_form_at(thetas)
        M = self.m0_at(thetas)
        Df = self._jacobians(thetas)
        return G - Df.swapaxes(-1, -2) @ M - M @ Df

    def l_m0_at(self, thetas: np.ndarray, m0_prime_method: str = "analytic") -> np.ndarray:
        """L_{M0} at each phase by the reduced constrained eigenproblem."""
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
        if m0_prime_method == "analytic":
            M, Mp, _, Df = self.matrices_at(thetas)
        else:
            M = self.m0_at(thetas)
            Mp = self.m0_prime_at(thetas, method=m0_prime_method)
            Df = self._jacobians(thetas)
        pts = self.orbit.points(thetas)
        f = np.stack([self.orbit.system.f(p) for p in pts])
        vals, _, _, _ = _core_many(M, Mp, f, Df)
        return vals

    @property
    def l_m0_constant(self) -> float:
        """Phase-independent value of L_{M0} straight from A."""
        A = self.dec.A
        H = 0.5 * np.real(A + A.conj().T)
        if H.shape[0] == 1:
            raise InvariantViolation("l_m0_constant", 0.0, 0.0)
        sub = H[1:, 1:]
        return float(np.linalg.eigvalsh(0.5 * (sub + sub.T))[-1])


def build_orbit_metric(
    orbit: PeriodicOrbit,
    eps: float,
    spectrum: FloquetSpectrum | None = None,
    mesh_size: int = 512,
    n_check: int = 129,
) -> OrbitMetric:
    """Construct M0 for an exponentially stable orbit.

    Runs the full chain: Floquet spectrum, modified real Jordan form of
    the monodromy matrix at sharpening parameter derived from ``eps``,
    block logarithms, and the frame reorder that puts the trivial
    direction first.  Build invariants checked on ``n_check`` phases:

    * M0 positive definite (least eigenvalue recorded),
    * both L_{M0} routes agree to 1e-6 absolute.
    """
    if spectrum is None:
        spectrum = floquet_spectrum(orbit)
    T = orbit.period
    ep = eps_prime_for(eps, T)
    jordan = modified_real_jordan(orbit.monodromy, ep)
    dec = assemble(jordan, orbit.variational, T, eps, mesh_size=mesh_size)
    dec = reorder_for_orbit(dec, orbit.velocity(0.0))

    om = OrbitMetric(orbit=orbit, spectrum=spectrum, dec=dec, eps=eps, invariants={})
    thetas = np.linspace(0.0, T, n_check, endpoint=False)
    M = om.m0_at(thetas)
    eigs = np.linalg.eigvalsh(M)
    min_eig = float(eigs[:, 0].min())
    max_eig = float(eigs[:, -1].max())
    if min_eig <= 0.0:
        raise InvariantViolation("m0 least eigenvalue", min_eig, 0.0)

    route1 = om.l_m0_at(thetas)
    route2 = om.l_m0_constant
    gap = float(np.max(np.abs(route1 - route2)))
    if gap > 1e-6:
        raise InvariantViolation("l_m0 route agreement", gap, 1e-6)

    fd_gap = float(
        np.max(
            np.abs(
                om.m0_prime_at(thetas[:: max(1, n_check // 16)], method="fd")
                - om.m0_prime_at(thetas[:: max(1, n_check // 16)], method="analytic")
            )
        )
    )

    invariants = {
        "m0_min_eig": min_eig,
        "m0_max_eig": max_eig,
        "l_m0_constant": route2,
        "l_m0_route_gap": gap,
        "m0_prime_fd_gap": fd_gap,
        "nu": spectrum.nu,
        "eps": eps,
        "eps_prime": ep,
    }
    invariants.update(dec.diagnostics)
    return OrbitMetric(
        orbit=orbit, spectrum=spectrum, dec=dec, eps=eps, invariants=invariants
    )
