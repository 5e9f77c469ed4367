"""Independent reference computations for the test suite.

Everything here is built from closed forms or scipy primitives alone so
that comparisons against the package are genuine dual routes.  The
radial system decouples in polar coordinates: with u = rho^2,

    u' = 2 u (1 - u)

is logistic with a closed-form solution, and the polar angle advances
at unit rate at every radius.
"""

import numpy as np
from scipy.integrate import quad, solve_ivp


# -- radial system, polar closed forms ----------------------------------

def radial_rho(rho0, t):
    """Radius along the flow started at rho0 (t may be an array)."""
    u0 = rho0 * rho0
    e = np.exp(2.0 * np.asarray(t, dtype=float))
    return np.sqrt(u0 * e / (1.0 + u0 * (e - 1.0)))


def radial_l_i(rho):
    """L_M for the identity metric on the radial system, as a function
    of the radius only (the angular direction is neutral)."""
    r2 = np.asarray(rho, dtype=float) ** 2
    return ((1.0 - 3.0 * r2) + (1.0 - r2) ** 3) / (1.0 + (1.0 - r2) ** 2)


def radial_tau(rho0, level):
    """Time at which (rho(t) - 1)^2 crosses ``level`` (negative when the
    start is already below the level).  Inverts the logistic solution."""
    if rho0 <= 0.0:
        raise ValueError("rho0 must be positive")
    side = 1.0 if rho0 >= 1.0 else -1.0
    rho_t = 1.0 + side * np.sqrt(level)
    u0 = rho0 * rho0
    ut = rho_t * rho_t
    return 0.5 * np.log(ut * (u0 - 1.0) / (u0 * (ut - 1.0)))


def smooth_step(s, a, b):
    """The exponential-ratio mollifier: 1 for s <= a, 0 for s >= b."""
    u = (s - a) / (b - a)
    if u <= 0.0:
        return 1.0
    if u >= 1.0:
        return 0.0
    ga = np.exp(-1.0 / (1.0 - u))
    gb = np.exp(-1.0 / u)
    return ga / (ga + gb)


def radial_vloc(rho0, horizon=60.0):
    """The local potential in its orbit-referenced form: the integrand
    is L_I(rho(t)) + 2, with no bump blending (L_{M0} = -2 exactly)."""
    val, err = quad(
        lambda t: radial_l_i(radial_rho(rho0, t)) + 2.0,
        0.0,
        horizon,
        epsabs=1e-13,
        epsrel=1e-13,
        limit=400,
    )
    return val


def radial_v(rho0, iota, mu, horizon=60.0):
    """The potential V as the single forward integral of
    q = L_I - r, with r blended by the inner bump on d = (rho-1)^2."""
    a, b = iota / 3.0, 2.0 * iota / 3.0

    def integrand(t):
        rho = radial_rho(rho0, t)
        dd = (rho - 1.0) ** 2
        h1 = smooth_step(dd, a, b)
        r = -mu * (1.0 - h1) + h1 * (-2.0)
        return radial_l_i(rho) - r

    # breakpoints where the trajectory enters the bump band
    pts = []
    for lev in (b, a):
        if (rho0 - 1.0) ** 2 > lev:
            pts.append(radial_tau(rho0, lev))
    val, err = quad(
        integrand, 0.0, horizon,
        points=pts or None, epsabs=1e-13, epsrel=1e-13, limit=400,
    )
    return val


# -- van der Pol, independent shooting at tight tolerance ----------------

def vdp_orbit_oracle(mu=1.0, a0=2.0, t0=6.5):
    """Periodic orbit of the van der Pol oscillator by plain Newton on
    (a, T) with x0 = (a, 0), using scipy directly at rtol 1e-12."""

    def f(t, x):
        return [x[1], mu * (1.0 - x[0] ** 2) * x[1] - x[0]]

    def flow(a, T):
        sol = solve_ivp(
            f, (0.0, T), [a, 0.0], method="DOP853",
            rtol=1e-12, atol=1e-14, dense_output=False,
        )
        return sol.y[:, -1]

    def residual(z):
        a, T = z
        return flow(a, T) - np.array([a, 0.0])

    z = np.array([a0, t0])
    for _ in range(25):
        F = residual(z)
        if np.linalg.norm(F) < 1e-11:
            break
        J = np.empty((2, 2))
        h = 1e-6
        for j in range(2):
            dz = np.zeros(2)
            dz[j] = h
            J[:, j] = (residual(z + dz) - residual(z - dz)) / (2.0 * h)
        z = z - np.linalg.solve(J, F)
    return float(z[0]), float(z[1])


def multiplier_product_oracle(system, q, period):
    """Abel-Liouville: the product of the Floquet multipliers equals
    exp of the integrated Jacobian trace along the orbit."""

    def rhs(t, z):
        x = z[:-1]
        return np.append(system.f(x), np.trace(system.jac(x)))

    z0 = np.append(np.asarray(q, dtype=float), 0.0)
    sol = solve_ivp(
        rhs, (0.0, period), z0, method="DOP853", rtol=1e-12, atol=1e-14
    )
    return float(np.exp(sol.y[-1, -1]))


# -- brute-force constrained maximization --------------------------------

def brute_force_lm(M, Mp, f, Df, n_dirs=100_000):
    """max of (1/2) v^T (M Df + Df^T M + Mp) v over v^T M v = 1,
    v^T M f = 0, by enumerating the constraint set.

    In 2-D the set is a two-point pair {+v, -v}; in 3-D it is an
    ellipse, meshed with n_dirs angles.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    S = 0.5 * (M @ Df + Df.T @ M + Mp)
    w = M @ f
    # orthogonal complement of w, then M-orthonormalize it
    _, _, vt = np.linalg.svd(w[None, :])
    U = vt[1:].T
    G = U.T @ M @ U
    L = np.linalg.cholesky(G)
    A = U @ np.linalg.inv(L).T
    if n == 2:
        v = A[:, 0]
        return float(v @ S @ v)
    H = A.T @ S @ A
    phis = np.linspace(0.0, 2.0 * np.pi, n_dirs, endpoint=False)
    c = np.stack([np.cos(phis), np.sin(phis)])
    vals = np.einsum("ik,ij,jk->k", c, H, c)
    return float(vals.max())
