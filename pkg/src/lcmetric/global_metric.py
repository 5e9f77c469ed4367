"""Blended metric, potential V, and the final contraction metric.

Around the orbit the metric is M0 pulled back through the projection;
far away it is the identity; in between a smooth bump in the distance
d(x) blends the two:

    M1(x) = (1 - h2(d)) I + h2(d) M0(pi(x)),

with h2 = 1 on d <= 4 iota/3 and 0 on d >= 5 iota/3.  The target rate

    r(x) = -mu (1 - h1(d)) + h1(d) L_{M1}(pi(x)),   mu = nu - eps,

uses the inner bump h1 (1 on d <= iota/3, 0 on d >= 2 iota/3).  The
potential V solves V' = -L_{M1} + r along the flow: near the orbit it
is the convergent integral

    V_loc(x) = int_0^inf [L_{M1}(S_t x) - L_{M1}(pi(S_t x))] dt

(the synchronization identity S_{theta_x(t)} pi(x) = pi(S_t x) puts the
orbit-side term at the projected phase of the flow point, and on the
orbit L_{M1} equals the phase-independent constant L_{M0}), and
elsewhere

    V(x) = int_0^tau q(S_t x) dt + V_loc(S_tau x),   q = L_{M1} - r,

where tau is the crossing time of the level d = iota/3.  Since h1 = 1
below that level, r collapses to L_{M0} there and the V_loc integrand
is q as well, so V is the single forward integral of q in period-long
quadrature windows; the same sweep accumulates the V_loc integrand
alongside (the two differ only while h1 < 1).  The final metric is
M = e^{2V} M1 with the analytic orbital derivative

    M' = e^{2V} (2 V' M1 + M1'),   V' = -L_{M1} + r.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadInterval,
    InvariantViolation,
    NeverReachesLevel,
    NoDecayDetected,
    OutsideBasin,
    OutsideChart,
    SingularF,
    StepSizeUnderflow,
)
from .lm_eval import MetricFieldHandle, _core_many
from .ode_core import OdeSystem, Tolerances, event_root, integrate, orbital_derivative
from .projection_sync import ProjectionChart, ProjectionResult, sample_tube

__all__ = [
    "bump",
    "bump_prime",
    "GlobalMetric",
    "VlocReport",
    "build_global_metric",
]

_SNAP_D = 1e-14


def _mollifier(u: np.ndarray) -> np.ndarray:
    out = np.zeros_like(u)
    pos = u > 0.0
    out[pos] = np.exp(-1.0 / u[pos])
    return out


def _mollifier_prime(u: np.ndarray) -> np.ndarray:
    out = np.zeros_like(u)
    pos = u > 0.0
    out[pos] = np.exp(-1.0 / u[pos]) / u[pos] ** 2
    return out


def bump(s, a: float, b: float):
    """C-infinity transition: 1 for s <= a, 0 for s >= b."""
    if not a < b:
        raise BadInterval(f"bump needs a < b, got a={a}, b={b}")
    s = np.asarray(s, dtype=float)
    u = (s - a) / (b - a)
    out = np.empty_like(u)
    out[u <= 0.0] = 1.0
    out[u >= 1.0] = 0.0
    mid = (u > 0.0) & (u < 1.0)
    um = u[mid]
    ga = _mollifier(1.0 - um)
    gb = _mollifier(um)
    out[mid] = ga / (ga + gb)
    return out if out.ndim else float(out)


def bump_prime(s, a: float, b: float):
    """Derivative of bump with respect to s; identically 0 on the plateaus."""
    if not a < b:
        raise BadInterval(f"bump needs a < b, got a={a}, b={b}")
    s = np.asarray(s, dtype=float)
    u = (s - a) / (b - a)
    out = np.zeros_like(u)
    mid = (u > 0.0) & (u < 1.0)
    um = u[mid]
    ga = _mollifier(1.0 - um)
    gb = _mollifier(um)
    gpa = _mollifier_prime(1.0 - um)
    gpb = _mollifier_prime(um)
    D = ga + gb
    out[mid] = (-(gpa * gb) - ga * gpb) / (D * D) / (b - a)
    return out if out.ndim else float(out)


@dataclass
class _PointData:
    """Batched per-point quantities shared by the evaluators."""

    xs: np.ndarray
    res: ProjectionResult
    d: np.ndarray
    near: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    M1: np.ndarray
    M1p: np.ndarray
    f: np.ndarray
    Df: np.ndarray
    l_m1: np.ndarray
    r: np.ndarray
    q: np.ndarray


@dataclass(frozen=True)
class VlocReport:
    value: float
    tail_bound: float
    t_horizon: float
    windows: int


@dataclass(frozen=True)
class _SweepResult:
    """Both potentials from one forward sweep: V (integrand q) and the
    orbit-referenced local form (integrand L_{M1} - L_{M0})."""

    value_q: float
    value_loc: float
    tail_bound: float
    t_horizon: float
    windows: int


@dataclass(frozen=True)
class GlobalMetric:
    chart: ProjectionChart
    iota: float
    mu: float
    eps: float
    tail_tol: float = 1e-9
    t_max_factor: float = 50.0
    gl_nodes: int = 12
    panels_per_period: int = 8
    tol: Tolerances = Tolerances()
    diagnostics: dict = field(default_factory=dict)
    _v_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def om(self):
        return self.chart.om

    @property
    def system(self) -> OdeSystem:
        return self.chart.orbit.system

    @property
    def nu(self) -> float:
        return self.om.nu

    @property
    def period(self) -> float:
        return self.chart.period

    @property
    def lm0_const(self) -> float:
        return self.om.l_m0_constant

    @property
    def levels(self) -> dict:
        i = self.iota
        return {
            "h1": (i / 3.0, 2.0 * i / 3.0),
            "h2": (4.0 * i / 3.0, 5.0 * i / 3.0),
            "iota": i,
            "iota_u": self.chart.iota_u,
        }

    # -- batched assembly ------------------------------------------------

    def _assemble(self, xs: np.ndarray) -> _PointData:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        B, n = xs.shape
        f = np.stack([self.system.f(x) for x in xs])
        nf = np.linalg.norm(f, axis=1)
        if np.any(nf <= 1e-12 * (1.0 + np.linalg.norm(xs, axis=1))):
            bad = int(np.argmin(nf))
            raise SingularF(f"vector field vanishes near sample {xs[bad]}")
        Df = np.stack([self.system.jac(x) for x in xs])

        res = self.chart.project_many(xs, strict=False)
        d = res.d
        a2, b2 = self.levels["h2"]
        a1, b1 = self.levels["h1"]
        near = d < b2
        if np.any(near & ~res.ok):
            raise OutsideChart(
                "projection failed inside the blending region "
                f"({int(np.sum(near & ~res.ok))} point(s))"
            )
        h1 = np.where(near, bump(d, a1, b1), 0.0)
        h2 = np.where(near, bump(d, a2, b2), 0.0)

        M1 = np.broadcast_to(np.eye(n), (B, n, n)).copy()
        M1p = np.zeros((B, n, n))
        lm0 = np.zeros(B)
        if near.any():
            idx = np.flatnonzero(near)
            th = res.theta[idx]
            M0, M0p, _, Dfp = self.om.matrices_at(th)
            p = self.chart.orbit.points(th)
            fp = np.stack([self.system.f(pt) for pt in p])
            rvec = xs[idx] - p
            M0f = np.einsum("bij,bj->bi", M0, fp)
            num = np.einsum("bi,bi->b", f[idx], M0f)
            td = num / (-res.g_theta[idx])
            rel = f[idx] - td[:, None] * fp
            dprime = 2.0 * np.einsum("bi,bij,bj->b", rel, M0, rvec) + td * np.einsum(
                "bi,bij,bj->b", rvec, M0p, rvec
            )
            h2p = bump_prime(d[idx], a2, b2)
            blend = h2[idx][:, None, None]
            M1[idx] = (1.0 - blend) * np.eye(n) + blend * M0
            M1p[idx] = (h2p * dprime)[:, None, None] * (M0 - np.eye(n)) + (
                h2[idx] * td
            )[:, None, None] * M0p
            lm0[idx], _, _, _ = _core_many(M0, M0p, fp, Dfp)

        l_m1, _, _, _ = _core_many(M1, M1p, f, Df)
        r = -self.mu * (1.0 - h1) + h1 * lm0
        q = l_m1 - r
        return _PointData(
            xs=xs, res=res, d=d, near=near, h1=h1, h2=h2,
            M1=M1, M1p=M1p, f=f, Df=Df, l_m1=l_m1, r=r, q=q,
        )

    # -- pointwise/batched evaluators -------------------------------------

    def m1_many(self, xs: np.ndarray) -> np.ndarray:
        return self._assemble(xs).M1

    def m1_at(self, x: np.ndarray) -> np.ndarray:
        return self.m1_many(np.asarray(x, dtype=float)[None, :])[0]

    def m1_prime_many(self, xs: np.ndarray, method: str = "analytic") -> np.ndarray:
        if method == "analytic":
            return self._assemble(xs).M1p
        if method != "fd":
            raise ValueError(f"unknown m1_prime method {method!r}")
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        return np.stack(
            [
                orbital_derivative(self.m1_at, x, self.system, tol=self.tol)
                for x in xs
            ]
        )

    def l_m1_many(self, xs: np.ndarray) -> np.ndarray:
        return self._assemble(xs).l_m1

    def r_many(self, xs: np.ndarray) -> np.ndarray:
        return self._assemble(xs).r

    def r_at(self, x: np.ndarray) -> float:
        return float(self.r_many(np.asarray(x, dtype=float)[None, :])[0])

    def v_prime_many(self, xs: np.ndarray) -> np.ndarray:
        """V' = -L_{M1} + r, the defining identity of the potential."""
        pd = self._assemble(xs)
        return -pd.q

    # -- local potential ---------------------------------------------------

    def _window_nodes(self, length: float, panels: int):
        xg, wg = np.polynomial.legendre.leggauss(self.gl_nodes)
        edges = np.linspace(0.0, length, panels + 1)
        mid = 0.5 * (edges[:-1] + edges[1:])
        half = 0.5 * np.diff(edges)
        ts = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
        ws = (half[:, None] * wg[None, :]).ravel()
        return ts, ws

    def _band_flags(self, d_nodes: np.ndarray) -> np.ndarray:
        """Panels whose d-range meets the blending bands, shape (panels,).

        The bump transitions have features narrower than a base panel;
        those panels get h-refined.
        """
        lo, hi = self.iota / 6.0, 2.5 * self.iota
        dmat = d_nodes.reshape(-1, self.gl_nodes)
        return (dmat.min(axis=1) <= hi) & (dmat.max(axis=1) >= lo)

    def _refine_panel(self, traj, a: float, b: float, depth: int) -> tuple[float, float]:
        """Integrals of q and of L_{M1} - L_{M0} over [a, b] of a stored
        trajectory, splitting into 8 sub-panels and recursing where the
        bands remain."""
        ts, ws = self._window_nodes(b - a, 8)
        ts = ts + a
        pd = self._assemble(traj.states(ts))
        contrib = (ws * pd.q).reshape(8, self.gl_nodes).sum(axis=1)
        contrib_loc = (ws * (pd.l_m1 - self.lm0_const)).reshape(
            8, self.gl_nodes
        ).sum(axis=1)
        if depth > 1:
            flags = self._band_flags(pd.d)
            edges = np.linspace(a, b, 9)
            for j in np.flatnonzero(flags):
                contrib[j], contrib_loc[j] = self._refine_panel(
                    traj, edges[j], edges[j + 1], depth - 1
                )
        return float(contrib.sum()), float(contrib_loc.sum())

    def _v_sweep(self, x: np.ndarray) -> _SweepResult:
        """Windowed quadrature along the forward flow, accumulating both
        q = L_{M1} - r (the orbital derivative of -V) and the local form
        L_{M1} - L_{M0}; they coincide wherever h1 = 1.

        Integration stops once the flow sits inside d <= iota/3 and the
        measured integrand envelope times the exponential tail bound at
        rate -(nu - 2 eps) drops below ``tail_tol``; the tail bound is
        reported, not added to the value.
        """
        T = self.period
        rate = self.nu - 2.0 * self.eps
        ts, ws = self._window_nodes(T, self.panels_per_period)
        total = 0.0
        total_loc = 0.0
        prev_env = np.inf
        stale = 0
        y = x
        tail = np.inf
        windows = int(np.ceil(self.t_max_factor))
        edges = np.linspace(0.0, T, self.panels_per_period + 1)
        # the integrand noise floor is set by trajectory accuracy times
        # the metric's Lipschitz constants; the tail rule needs it below
        # tail_tol * rate, which the pipeline default rtol cannot give
        sweep_tol = Tolerances(
            rtol=min(self.tol.rtol, 1e-12), atol=min(self.tol.atol, 1e-14)
        )
        for k in range(windows):
            traj = integrate(self.system, y, (0.0, T), tol=sweep_tol)
            pd = self._assemble(traj.states(ts))
            contrib = (ws * pd.q).reshape(-1, self.gl_nodes).sum(axis=1)
            contrib_loc = (ws * (pd.l_m1 - self.lm0_const)).reshape(
                -1, self.gl_nodes
            ).sum(axis=1)
            for j in np.flatnonzero(self._band_flags(pd.d)):
                contrib[j], contrib_loc[j] = self._refine_panel(
                    traj, edges[j], edges[j + 1], depth=2
                )
            total += float(contrib.sum())
            total_loc += float(contrib_loc.sum())
            env = float(np.max(np.abs(pd.q)))
            if bool(np.all(pd.d <= self.iota / 3.0)):
                tail = env / rate
                if tail <= self.tail_tol:
                    return _SweepResult(total, total_loc, tail, (k + 1) * T, k + 1)
                # inside the tube the integrand must decay
                if env > 0.98 * prev_env and env > 100.0 * self.tail_tol:
                    stale += 1
                    if stale >= 5:
                        raise NoDecayDetected(
                            f"integrand envelope stalled at {env:.3e} "
                            f"after {k + 1} windows"
                        )
                else:
                    stale = 0
                prev_env = env
            y = traj.state(T)
        raise NoDecayDetected(
            f"tail bound {tail:.3e} still above {self.tail_tol:.1e} "
            f"after {windows} windows"
        )

    def _d0(self, x: np.ndarray) -> float:
        """Blending distance with seed fallback; far points just need to
        classify as far, not to project."""
        return float(self.chart.project_many(x[None, :], strict=False).d[0])

    def _sweep_cached(self, x: np.ndarray) -> _SweepResult:
        key = x.tobytes()
        hit = self._v_cache.get(key)
        if hit is None:
            hit = self._v_sweep(x)
            self._v_cache[key] = hit
        return hit

    def v_loc(self, x: np.ndarray, report: bool = False):
        """Local potential; see ``_v_sweep`` for the horizon rule."""
        x = np.asarray(x, dtype=float)
        d0 = self._d0(x)
        if d0 <= _SNAP_D:
            rep = VlocReport(0.0, 0.0, 0.0, 0)
        else:
            sw = self._sweep_cached(x)
            rep = VlocReport(sw.value_loc, sw.tail_bound, sw.t_horizon, sw.windows)
        return rep if report else rep.value

    # -- crossing time and global potential --------------------------------

    def tau_crossing(self, x: np.ndarray) -> float:
        """Time at which d(S_t x) crosses iota/3 (negative if d(x) is
        already below the level: backward crossing)."""
        x = np.asarray(x, dtype=float)
        target = self.iota / 3.0
        d0 = self._d0(x)
        if abs(d0 - target) <= 1e-13 * max(1.0, target):
            return 0.0
        forward = d0 > target
        sys_ = self.system
        if not forward:
            sys_ = OdeSystem(
                name=self.system.name + "-reversed",
                n=self.system.n,
                f=lambda z: -self.system.f(z),
                jac=lambda z: -self.system.jac(z),
                params=self.system.params,
            )
        T = self.period
        y = x
        total_windows = int(np.ceil(self.t_max_factor))
        def g(state: np.ndarray) -> float:
            return self.chart.distance_d(state) - target

        # backward sweeps can blow up in finite time (the reversed field
        # repels from the orbit), so the chunk length shrinks on step
        # size underflow; the crossing always precedes the blowup.
        chunk = T if forward else T / 8.0
        elapsed = 0.0
        t_max = self.t_max_factor * T
        while elapsed < t_max:
            try:
                traj = integrate(sys_, y, (0.0, chunk), tol=self.tol)
            except StepSizeUnderflow:
                if forward or chunk <= T / 1024.0:
                    raise
                chunk *= 0.5
                continue
            scan = np.linspace(0.0, chunk, 65)
            ds = self.chart.project_many(traj.states(scan), strict=False).d
            vals = ds - target
            hit = np.flatnonzero(vals[:-1] * vals[1:] <= 0.0)
            if hit.size:
                i = int(hit[0])
                t_star = event_root(traj, g, bracket=(scan[i], scan[i + 1]))
                t_abs = elapsed + t_star
                return t_abs if forward else -t_abs
            y = traj.state(chunk)
            elapsed += chunk
        raise NeverReachesLevel(
            f"d never crossed {target:.3e} within {self.t_max_factor:.0f} periods"
        )

    def v_at(self, x: np.ndarray) -> float:
        """Potential V(x); memoized per exact state within this object."""
        x = np.asarray(x, dtype=float)
        d0 = self._d0(x)
        if d0 <= _SNAP_D:
            return 0.0
        try:
            return self._sweep_cached(x).value_q
        except NoDecayDetected as exc:
            if d0 <= self.iota / 3.0:
                raise
            # never settled into the tube: not in the certified basin
            raise OutsideBasin(str(exc)) from exc

    # -- final metric -------------------------------------------------------

    def m_at(self, x: np.ndarray) -> np.ndarray:
        return float(np.exp(2.0 * self.v_at(x))) * self.m1_at(x)

    def m_prime_at(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pd = self._assemble(x[None, :])
        e2v = float(np.exp(2.0 * self.v_at(x)))
        vp = float(-pd.q[0])
        return e2v * (2.0 * vp * pd.M1[0] + pd.M1p[0])

    def handle(self) -> MetricFieldHandle:
        return MetricFieldHandle(
            m=self.m_at, m_prime=self.m_prime_at, provenance="pipeline"
        )

    def l_m_many(self, xs: np.ndarray, values_v: np.ndarray | None = None) -> np.ndarray:
        """Certification values L_M on a batch, through the full reduced
        eigenproblem on M = e^{2V} M1 (not the additive shortcut)."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        pd = self._assemble(xs)
        if values_v is None:
            values_v = np.array([self.v_at(x) for x in xs])
        e2v = np.exp(2.0 * values_v)
        M = e2v[:, None, None] * pd.M1
        vp = -pd.q
        Mp = e2v[:, None, None] * (
            2.0 * vp[:, None, None] * pd.M1 + pd.M1p
        )
        vals, _, _, _ = _core_many(M, Mp, pd.f, pd.Df)
        return vals


def build_global_metric(
    chart: ProjectionChart,
    tail_tol: float = 1e-9,
    t_max_factor: float = 50.0,
    seed: int = 0,
    n_probe: int = 100,
    tol: Tolerances = Tolerances(),
) -> GlobalMetric:
    """Assemble the global metric with iota = iota_u / 4 and mu = nu - eps,
    then probe the cheap invariants: M1 SPD, r <= -mu, M1 = M0 and V = 0
    on the orbit."""
    om = chart.om
    mu = om.nu - om.eps
    if mu <= 0.0:
        raise InvariantViolation("mu = nu - eps", mu, 0.0)
    gm = GlobalMetric(
        chart=chart,
        iota=chart.iota_u / 4.0,
        mu=mu,
        eps=om.eps,
        tail_tol=tail_tol,
        t_max_factor=t_max_factor,
        tol=tol,
    )
    rng = np.random.default_rng(seed)
    xs = sample_tube(om, chart.iota_u, n_probe, rng)
    pd = gm._assemble(xs)
    eigs = np.linalg.eigvalsh(pd.M1)
    if float(eigs[:, 0].min()) <= 0.0:
        raise InvariantViolation("M1 least eigenvalue", float(eigs[:, 0].min()), 0.0)
    worst_r = float(np.max(pd.r + mu))
    if worst_r > 1e-12:
        raise InvariantViolation("r + mu", worst_r, 1e-12)

    thetas = rng.uniform(0.0, om.period, size=16)
    pts = chart.orbit.points(thetas)
    M1_orbit = gm.m1_many(pts)
    M0_orbit = om.m0_at(thetas)
    gap = float(np.max(np.abs(M1_orbit - M0_orbit)))
    if gap > 1e-9:
        raise InvariantViolation("M1 = M0 on orbit", gap, 1e-9)
    v_orbit = max(abs(gm.v_at(p)) for p in pts[:4])
    if v_orbit != 0.0:
        raise InvariantViolation("V = 0 on orbit", v_orbit, 0.0)

    gm.diagnostics.update(
        {
            "iota": gm.iota,
            "mu": mu,
            "m1_min_eig": float(eigs[:, 0].min()),
            "r_plus_mu_max": worst_r,
            "m1_orbit_gap": gap,
        }
    )
    return gm
