"""Projection onto the periodic orbit and phase synchronization.

The working neighborhood is the tube U = {x : d(x) <= iota_u} around
the orbit, where the phase theta*(x) solves the orthogonality condition

    G(x, theta) = (x - p(theta))' M0(theta) f(p(theta)) = 0

and d(x) = (x - p)' M0(p) (x - p) with p = p(theta*).  Roots are found
by Newton iteration seeded from a dense phase mesh; the derivative

    G_theta = -f'M0 f + (x - p)' (M0' f + M0 Df f)

is analytic, so no differencing enters the solve, and -G_theta is the
denominator whose positivity the chart guarantees.

The level iota_u is calibrated rather than assumed: starting from
(0.05 min |f| on the orbit)^2 it is halved until the projection
residual, positive-denominator, phase-rate band and boundary-decay
checks all pass on a seeded sample of the tube.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import BranchJump, ChartError, DegenerateDenominator, OutsideChart
from .ode_core import Tolerances, Trajectory, integrate
from .orbit_metric import OrbitMetric

__all__ = [
    "ProjectionResult",
    "ProjectionChart",
    "SyncPath",
    "DecayReport",
    "build_chart",
    "g_eval",
    "project",
    "distance_d",
    "synchronize",
    "theta_dot",
    "verify_decay",
]

_G_RTOL = 1e-13  # Newton residual, relative to the local G scale
_DENOM_FLOOR = 1e-12


@dataclass(frozen=True)
class ProjectionResult:
    theta: np.ndarray
    p: np.ndarray
    residual: np.ndarray
    d: np.ndarray
    g_theta: np.ndarray
    ok: np.ndarray


@dataclass(frozen=True)
class SyncPath:
    """Synchronized phase along one trajectory; theta is unwound and
    relative, so theta[0] = 0 and p(theta0 + theta[k]) tracks the
    projection of the flow."""

    x0: np.ndarray
    theta0: float
    t: np.ndarray
    theta: np.ndarray
    d: np.ndarray
    traj: Trajectory
    _theta_of_t: PchipInterpolator
    _t_of_theta: PchipInterpolator

    def theta_at(self, t: float | np.ndarray) -> np.ndarray:
        return self._theta_of_t(t)

    def t_of_theta(self, theta: float | np.ndarray) -> np.ndarray:
        return self._t_of_theta(theta)


@dataclass(frozen=True)
class DecayReport:
    d_ok: bool
    d_worst_ratio: float
    c_slope: float
    slope_violations: int
    c_dist: float
    dist_violations: int
    nodes: int


@dataclass(frozen=True)
class ProjectionChart:
    orbit: object
    om: OrbitMetric
    iota_u: float
    eps0: float
    seed_thetas: np.ndarray
    seed_points: np.ndarray
    seed_m0: np.ndarray
    diagnostics: dict

    @property
    def period(self) -> float:
        return self.om.period

    @property
    def n(self) -> int:
        return self.orbit.system.n

    # -- frame helpers ------------------------------------------------

    def _frame(self, thetas: np.ndarray):
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
        p = self.orbit.points(thetas)
        f = np.stack([self.orbit.system.f(q) for q in p])
        M0, M0p, _, Df = self.om.matrices_at(thetas)
        return p, f, M0, M0p, Df

    def _g_gt(self, xs: np.ndarray, thetas: np.ndarray):
        p, f, M0, M0p, Df = self._frame(thetas)
        r = xs - p
        M0f = np.einsum("bij,bj->bi", M0, f)
        G = np.einsum("bi,bi->b", r, M0f)
        fM0f = np.einsum("bi,bi->b", f, M0f)
        drift = np.einsum("bij,bj->bi", M0p, f) + np.einsum(
            "bij,bjk,bk->bi", M0, Df, f
        )
        Gt = -fM0f + np.einsum("bi,bi->b", r, drift)
        scale = 1.0 + np.linalg.norm(r, axis=1) * np.linalg.norm(M0f, axis=1)
        return G, Gt, scale, p, M0

    def g_eval(self, x: np.ndarray, thetas: float | np.ndarray) -> np.ndarray:
        """G(x, theta) for one state at one or more phases."""
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
        xs = np.broadcast_to(np.asarray(x, dtype=float), (thetas.size, self.n))
        G, _, _, _, _ = self._g_gt(xs, thetas)
        return G if G.size > 1 else G[0]

    def seed_phases(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest seed-mesh phase in the M0 quadratic form, and that form value."""
        r = xs[:, None, :] - self.seed_points[None, :, :]
        q = np.einsum("bsi,sij,bsj->bs", r, self.seed_m0, r)
        idx = np.argmin(q, axis=1)
        return self.seed_thetas[idx], q[np.arange(len(xs)), idx]

    # -- projection ----------------------------------------------------

    def project_many(
        self, xs: np.ndarray, strict: bool = True, max_iter: int = 40
    ) -> ProjectionResult:
        """Safeguarded Newton on theta -> G(x, theta) from mesh seeds.

        With ``strict`` every point must converge with negative G_theta;
        otherwise ``ok`` flags the failures and their ``d`` falls back to
        the seed-mesh minimum (useful to classify far-field points where
        the metric blend is identity anyway).
        """
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if xs.ndim != 2 or xs.shape[1] != self.n:
            raise ValueError(f"expected states of shape (B, {self.n}), got {xs.shape}")
        T = self.period
        theta, d_seed = self.seed_phases(xs)
        theta = theta.copy()
        B = len(xs)
        active = np.ones(B, dtype=bool)
        G = np.zeros(B)
        Gt = np.full(B, -1.0)
        scale = np.ones(B)
        p = np.zeros_like(xs)
        M0 = np.zeros((B, self.n, self.n))
        step_cap = T / 8.0
        for _ in range(max_iter):
            Ga, Gta, sca, pa, M0a = self._g_gt(xs[active], theta[active])
            G[active], Gt[active], scale[active] = Ga, Gta, sca
            p[active], M0[active] = pa, M0a
            conv = np.abs(G) <= _G_RTOL * scale
            active = active & ~conv & (Gt < -_DENOM_FLOOR)
            if not active.any():
                break
            step = np.clip(-G[active] / Gt[active], -step_cap, step_cap)
            theta[active] = theta[active] + step
        resid_ok = np.abs(G) <= 10.0 * _G_RTOL * scale
        # the root can fall inside the orbit-closure gap at the mod-T
        # seam, where G jumps by ~closure and its zero is unreachable;
        # accept a stalled iterate once the proposed step pins theta to
        # a 1e-9 fraction of the period
        step_ok = np.abs(G) <= 1e-9 * T * np.abs(Gt)
        ok = (resid_ok | step_ok) & (Gt < -_DENOM_FLOOR)
        theta = np.mod(theta, T)
        r = xs - p
        d = np.einsum("bi,bij,bj->b", r, M0, r)
        d = np.where(ok, d, d_seed)
        if strict and not ok.all():
            nbad = int((~ok).sum())
            if (Gt >= -_DENOM_FLOOR).any():
                raise DegenerateDenominator(
                    f"{nbad} point(s) hit a nonnegative G_theta; "
                    "outside the projection tube"
                )
            raise OutsideChart(f"projection failed to converge at {nbad} point(s)")
        return ProjectionResult(theta=theta, p=p, residual=G, d=d, g_theta=Gt, ok=ok)

    def project(self, x: np.ndarray) -> tuple[float, np.ndarray, float]:
        res = self.project_many(np.asarray(x, dtype=float)[None, :])
        return float(res.theta[0]), res.p[0], float(res.residual[0])

    def distance_many(self, xs: np.ndarray, res: ProjectionResult | None = None):
        if res is None:
            res = self.project_many(xs)
        return res.d

    def distance_d(self, x: np.ndarray) -> float:
        return float(self.distance_many(np.asarray(x, dtype=float)[None, :])[0])

    # -- synchronization ------------------------------------------------

    def theta_dot_many(
        self, xs: np.ndarray, res: ProjectionResult | None = None
    ) -> np.ndarray:
        """Phase speed of the synchronized time along the flow through x:

        theta_dot = f(x)' M0 f(p) / (f'M0 f - (x-p)'(M0' f + M0 Df f))
        """
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if res is None:
            res = self.project_many(xs)
        p, f, M0, _, _ = self._frame(res.theta)
        fx = np.stack([self.orbit.system.f(x) for x in xs])
        M0f = np.einsum("bij,bj->bi", M0, f)
        num = np.einsum("bi,bi->b", fx, M0f)
        denom = -res.g_theta
        if (denom <= _DENOM_FLOOR).any():
            raise DegenerateDenominator("nonpositive synchronization denominator")
        return num / denom

    def theta_dot(self, x: np.ndarray) -> float:
        return float(self.theta_dot_many(np.asarray(x, dtype=float)[None, :])[0])

    def d_prime_many(
        self, xs: np.ndarray, res: ProjectionResult | None = None
    ) -> np.ndarray:
        """Orbital derivative of d, analytic through the projection:

        d' = 2 (f(x) - theta_dot f(p))' M0 (x - p)
             + theta_dot (x - p)' M0' (x - p)
        """
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if res is None:
            res = self.project_many(xs)
        p, f, M0, M0p, _ = self._frame(res.theta)
        td = self.theta_dot_many(xs, res)
        fx = np.stack([self.orbit.system.f(x) for x in xs])
        r = xs - p
        rel = fx - td[:, None] * f
        t1 = 2.0 * np.einsum("bi,bij,bj->b", rel, M0, r)
        t2 = td * np.einsum("bi,bij,bj->b", r, M0p, r)
        return t1 + t2

    def synchronize(
        self,
        x: np.ndarray,
        t_end: float,
        nodes_per_period: int = 64,
        max_refine: int = 4,
        tol: Tolerances = Tolerances(),
    ) -> SyncPath:
        """Project the flow from x and unwind the phase by continuity.

        Consecutive mesh phases must stay within T/4 of each other (after
        mod-T reduction to the nearest branch); the mesh is refined up to
        ``max_refine`` doublings before BranchJump is raised.
        """
        x = np.asarray(x, dtype=float)
        T = self.period
        traj = integrate(self.orbit.system, x, (0.0, float(t_end)), tol=tol)
        nodes = max(8, int(np.ceil(nodes_per_period * t_end / T)))
        for _ in range(max_refine + 1):
            ts = np.linspace(0.0, float(t_end), nodes + 1)
            states = traj.states(ts)
            res = self.project_many(states)
            raw = res.theta
            delta = np.mod(np.diff(raw) + T / 2.0, T) - T / 2.0
            if np.max(np.abs(delta)) <= T / 4.0:
                break
            nodes *= 2
        else:
            raise BranchJump(
                "synchronized phase jumped by more than a quarter period "
                f"between mesh nodes (mesh {nodes // 2} nodes)"
            )
        theta = np.concatenate([[0.0], np.cumsum(delta)])
        if np.any(np.diff(theta) <= 0.0):
            raise BranchJump("synchronized phase is not strictly increasing")
        return SyncPath(
            x0=x,
            theta0=float(raw[0]),
            t=ts,
            theta=theta,
            d=res.d,
            traj=traj,
            _theta_of_t=PchipInterpolator(ts, theta),
            _t_of_theta=PchipInterpolator(theta, ts),
        )

    # -- decay verification ----------------------------------------------

    def verify_decay(
        self,
        x: np.ndarray,
        t_grid: np.ndarray,
        nu: float | None = None,
        eps: float | None = None,
        tol: float = 0.05,
    ) -> DecayReport:
        """Check d(S_t x) <= e^{2(-nu+2 eps) t} d(x) (1 + tol) on the grid
        and fit the exponential envelopes of |t_dot - 1| and of the
        distance to the synchronized orbit point.  Report-only."""
        x = np.asarray(x, dtype=float)
        nu = self.om.nu if nu is None else nu
        eps = self.om.eps if eps is None else eps
        t_grid = np.asarray(t_grid, dtype=float)
        t_end = float(np.max(t_grid))
        sp = self.synchronize(x, t_end)
        states = sp.traj.states(t_grid)
        res = self.project_many(states)
        d0 = self.distance_d(x)
        bound = np.exp(2.0 * (-nu + 2.0 * eps) * t_grid) * d0 * (1.0 + tol) + 1e-18
        ratios = res.d / np.maximum(bound, 1e-300)
        d_ok = bool(np.all(res.d <= bound))

        # envelope fits on the sync mesh, rate -nu + eps0
        rate = -nu + self.eps0
        mesh_states = sp.traj.states(sp.t)
        td = self.theta_dot_many(mesh_states)
        thetas = sp.theta
        c_slope, slope_violations = _fit_envelope(
            thetas, np.abs(1.0 / td - 1.0), rate, floor=1e-9
        )

        p0 = self.orbit.points(np.array([sp.theta0]))[0]
        base = np.linalg.norm(x - p0)
        orbit_pts = self.orbit.points(sp.theta0 + thetas)
        dist = np.linalg.norm(mesh_states - orbit_pts, axis=1)
        if base > 1e-14:
            # the trajectory and orbit interpolants carry absolute
            # position noise at the integration tolerance; below that
            # the normalized distance has no rate information, however
            # small the starting offset was
            scale = float(np.max(np.linalg.norm(mesh_states, axis=1)))
            tol_i = Tolerances()
            noise = 100.0 * (tol_i.rtol * scale + tol_i.atol)
            c_dist, dist_violations = _fit_envelope(
                thetas, dist / base, rate, floor=max(1e-8, noise / base)
            )
        else:
            c_dist = 0.0
            dist_violations = 0
        return DecayReport(
            d_ok=d_ok,
            d_worst_ratio=float(np.max(ratios)),
            c_slope=c_slope,
            slope_violations=slope_violations,
            c_dist=c_dist,
            dist_violations=dist_violations,
            nodes=len(sp.t),
        )


def _fit_envelope(
    thetas: np.ndarray, s: np.ndarray, rate: float, floor: float
) -> tuple[float, int]:
    """Smallest C with s <= C e^{rate theta} on the first half of the
    path, and the count of later nodes escaping that envelope with x1.5
    headroom.  Nodes at the noise floor carry no rate information and
    are excluded from both fit and count."""
    above = s > floor
    if not above.any():
        return 0.0, 0
    half = thetas <= 0.5 * (thetas[0] + thetas[-1])
    fit = above & half
    if not fit.any():
        # signal appears only late: no admissible constant from the
        # leading window, every above-floor node is a violation
        return 0.0, int(above.sum())
    c = float(np.max(s[fit] * np.exp(-rate * thetas[fit])))
    violations = int(np.sum(s[above] > 1.5 * c * np.exp(rate * thetas[above])))
    return c, violations


# -- calibration --------------------------------------------------------


def sample_tube(
    om: OrbitMetric,
    level: float,
    count: int,
    rng: np.random.Generator,
    radial_fraction: float | None = None,
) -> np.ndarray:
    """Random states near the orbit with quadratic-form distance about
    level * u, u uniform in (0, 1] (or fixed radial_fraction)."""
    T = om.period
    n = om.orbit.system.n
    thetas = rng.uniform(0.0, T, size=count)
    u = rng.normal(size=(count, n))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    if radial_fraction is None:
        frac = rng.uniform(0.0, 1.0, size=count)
    else:
        frac = np.full(count, radial_fraction)
    M0 = om.m0_at(thetas)
    quad = np.einsum("bi,bij,bj->b", u, M0, u)
    scale = np.sqrt(level * frac / quad)
    return om.orbit.points(thetas) + scale[:, None] * u


def build_chart(
    om: OrbitMetric,
    n_sample: int = 500,
    seed: int = 0,
    eps0: float | None = None,
    seed_mesh: int = 512,
    max_halvings: int = 24,
    tol: Tolerances = Tolerances(),
) -> ProjectionChart:
    """Calibrate the tube level and return an immutable chart.

    A candidate level passes when, on ``n_sample`` points drawn inside
    the tube, projections converge with |G| <= 1e-10 scale and positive
    denominator, the phase rate stays within [1-eps0, 1+eps0], and d
    decays over a short flow step at boundary points.
    """
    eps0 = om.eps if eps0 is None else eps0
    orbit = om.orbit
    T = om.period
    thetas = np.linspace(0.0, T, seed_mesh, endpoint=False)
    points = orbit.points(thetas)
    m0 = om.m0_at(thetas)
    fmin = min(np.linalg.norm(orbit.system.f(p)) for p in points)
    iota_u = (0.05 * fmin) ** 2

    rng = np.random.default_rng(seed)
    chart = None
    halvings = 0
    diag: dict = {}
    for halvings in range(max_halvings):
        chart = ProjectionChart(
            orbit=orbit,
            om=om,
            iota_u=iota_u,
            eps0=eps0,
            seed_thetas=thetas,
            seed_points=points,
            seed_m0=m0,
            diagnostics={},
        )
        xs = sample_tube(om, iota_u, n_sample, rng)
        try:
            res = chart.project_many(xs)
        except (OutsideChart, DegenerateDenominator):
            iota_u *= 0.5
            continue
        keep = res.d <= iota_u
        if keep.sum() < n_sample // 2:
            iota_u *= 0.5
            continue
        g_max = float(np.max(np.abs(res.residual[keep])))
        scale = 1.0 + np.linalg.norm(xs[keep], axis=1)
        if np.any(np.abs(res.residual[keep]) > 1e-10 * scale):
            iota_u *= 0.5
            continue
        try:
            td = chart.theta_dot_many(xs[keep], _subset(res, keep))
        except DegenerateDenominator:
            iota_u *= 0.5
            continue
        band = float(np.max(np.abs(td - 1.0)))
        if band > eps0:
            iota_u *= 0.5
            continue
        # boundary decay: short flow step from d = iota_u must not grow d
        nb = min(40, n_sample)
        xb = sample_tube(om, iota_u, nb, rng, radial_fraction=1.0)
        db0 = chart.distance_many(xb)
        inside = db0 <= iota_u
        if inside.sum() == 0:
            iota_u *= 0.5
            continue
        delta = 0.02 * T
        moved = np.stack(
            [
                integrate(orbit.system, xi, (0.0, delta), tol=tol).state(delta)
                for xi in xb[inside]
            ]
        )
        db1 = chart.distance_many(moved)
        if np.any(db1 > db0[inside] * (1.0 + 1e-9)):
            iota_u *= 0.5
            continue
        diag = {
            "iota_u": iota_u,
            "halvings": halvings,
            "g_residual_max": g_max,
            "band_max_dev": band,
            "boundary_checked": int(inside.sum()),
            "sample_kept": int(keep.sum()),
            "eps0": eps0,
        }
        break
    else:
        raise ChartError(
            f"no admissible tube level found after {max_halvings} halvings"
        )
    return ProjectionChart(
        orbit=orbit,
        om=om,
        iota_u=iota_u,
        eps0=eps0,
        seed_thetas=thetas,
        seed_points=points,
        seed_m0=m0,
        diagnostics=diag,
    )


def _subset(res: ProjectionResult, mask: np.ndarray) -> ProjectionResult:
    return ProjectionResult(
        theta=res.theta[mask],
        p=res.p[mask],
        residual=res.residual[mask],
        d=res.d[mask],
        g_theta=res.g_theta[mask],
        ok=res.ok[mask],
    )


# module-level wrappers matching the operation signatures


def g_eval(chart: ProjectionChart, x: np.ndarray, theta) -> np.ndarray:
    return chart.g_eval(x, theta)


def project(chart: ProjectionChart, x: np.ndarray):
    return chart.project(x)


def distance_d(chart: ProjectionChart, x: np.ndarray) -> float:
    return chart.distance_d(x)


def synchronize(chart: ProjectionChart, x: np.ndarray, t_end: float) -> SyncPath:
    return chart.synchronize(x, t_end)


def theta_dot(chart: ProjectionChart, x: np.ndarray) -> float:
    return chart.theta_dot(x)


def verify_decay(chart, x, t_grid, nu=None, eps=None, tol=0.05) -> DecayReport:
    return chart.verify_decay(x, t_grid, nu=nu, eps=eps, tol=tol)
