"""Dense-output ODE integration, variational flows and flow-line utilities.

Everything downstream (orbit finding, Floquet analysis, metric
certification) consumes trajectories through the two container types
defined here, so tolerances and dense evaluation semantics live in one
place.  Integration is delegated to scipy's DOP853 (order-8 embedded
pair with order-7 dense output); this module owns the contracts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import (
    BadInterval,
    FieldUndefined,
    IntegrationError,
    NonFiniteState,
    NoSignChange,
    StepSizeUnderflow,
)

__all__ = [
    "Tolerances",
    "OdeSystem",
    "Trajectory",
    "VariationalTrajectory",
    "integrate",
    "integrate_variational",
    "integrate_linear_periodic",
    "event_root",
    "orbital_derivative",
]

_METHOD = "DOP853"


@dataclass(frozen=True)
class Tolerances:
    """Relative/absolute integration tolerances used across the pipeline."""

    rtol: float = 1e-10
    atol: float = 1e-12

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class OdeSystem:
    """Autonomous vector field x' = f(x) with an explicit Jacobian.

    Parameters
    ----------
    name : str
        Identifier used in reports and error messages.
    n : int
        State dimension.
    f : callable
        Maps a state of shape ``(n,)`` to the velocity, shape ``(n,)``.
    jac : callable
        Maps a state to the ``(n, n)`` Jacobian of ``f``.
    params : mapping, optional
        Frozen parameter record, carried along for reporting only.

    Notes
    -----
    Construction runs a finite-difference consistency check of ``jac``
    against ``f`` at a few deterministic sample states (relative error
    at most 1e-5 with central differences at step 1e-6).
    """

    name: str
    n: int
    f: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"state dimension must be >= 1, got {self.n}")
        rng = np.random.default_rng(0)
        step = 1e-6
        for _ in range(3):
            x = rng.normal(scale=0.7, size=self.n)
            jac = np.asarray(self.jac(x), dtype=float)
            if jac.shape != (self.n, self.n):
                raise ValueError(
                    f"jac of {self.name!r} returned shape {jac.shape}, "
                    f"expected {(self.n, self.n)}"
                )
            fd = np.empty_like(jac)
            for i in range(self.n):
                e = np.zeros(self.n)
                e[i] = step
                fd[:, i] = (
                    np.asarray(self.f(x + e), dtype=float)
                    - np.asarray(self.f(x - e), dtype=float)
                ) / (2.0 * step)
            scale = max(1.0, float(np.max(np.abs(jac))))
            err = float(np.max(np.abs(fd - jac))) / scale
            if err > 1e-5:
                raise ValueError(
                    f"jac of {self.name!r} inconsistent with f at {x}: "
                    f"relative error {err:.3e} > 1e-5"
                )


@dataclass(frozen=True)
class Trajectory:
    """Dense solution segment of one initial value problem.

    ``state``/``states`` evaluate the order-7 interpolant anywhere on the
    integration span; evaluation at mesh nodes reproduces the stored
    states to roundoff.  Spans may run backward (``t0 > t1``).
    """

    t0: float
    t1: float
    mesh: np.ndarray
    mesh_states: np.ndarray
    rtol: float
    atol: float
    _eval: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.mesh_states.shape[1]

    @property
    def span(self) -> tuple[float, float]:
        return (self.t0, self.t1)

    def _check_span(self, ts: np.ndarray) -> None:
        lo, hi = min(self.t0, self.t1), max(self.t0, self.t1)
        slack = 1e-9 * (hi - lo + 1.0)
        if np.any(ts < lo - slack) or np.any(ts > hi + slack):
            raise BadInterval(
                f"evaluation time outside span [{lo:.6g}, {hi:.6g}]"
            )

    def state(self, t: float) -> np.ndarray:
        """State at a single time ``t`` within the span."""
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        self._check_span(ts)
        return self._eval(ts)[0]

    def states(self, ts: np.ndarray) -> np.ndarray:
        """States at an array of times, shape ``(len(ts), n)``."""
        ts = np.asarray(ts, dtype=float)
        self._check_span(ts)
        return self._eval(ts)


@dataclass(frozen=True)
class VariationalTrajectory:
    """Joint dense solution of the flow and its variational equation.

    ``phi(t)`` is the fundamental matrix solution along ``base`` with
    ``phi(t0) = I`` exactly.  ``det phi > 0`` is verified at every
    accepted mesh node on construction.
    """

    base: Trajectory
    n: int
    _eval_phi: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)

    def phi(self, t: float) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        self.base._check_span(ts)
        return self._eval_phi(ts)[0]

    def phi_many(self, ts: np.ndarray) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        self.base._check_span(ts)
        return self._eval_phi(ts)

    @property
    def monodromy(self) -> np.ndarray:
        """Fundamental matrix at the far end of the span."""
        return self.phi(self.base.t1)


def _guarded_rhs(f: Callable, name: str) -> Callable:
    def rhs(t, y):
        out = np.asarray(f(y), dtype=float)
        if not np.all(np.isfinite(out)):
            raise NonFiniteState(
                f"f of {name!r} returned non-finite values at state {y}"
            )
        return out

    return rhs


def _run_solver(rhs, span, y0, tol: Tolerances, name: str):
    res = solve_ivp(
        rhs,
        span,
        y0,
        method=_METHOD,
        dense_output=True,
        rtol=tol.rtol,
        atol=tol.atol,
    )
    if not res.success:
        msg = res.message or "integration failed"
        if "step size" in msg.lower():
            raise StepSizeUnderflow(f"{name}: {msg}")
        raise IntegrationError(f"{name}: {msg}")
    return res


def _make_eval(sol, dim: int) -> Callable[[np.ndarray], np.ndarray]:
    def ev(ts: np.ndarray) -> np.ndarray:
        out = sol(ts)
        # OdeSolution returns (dim,) for scalar input, (dim, B) otherwise
        if out.ndim == 1:
            out = out[:, None]
        return out[:dim].T.copy()

    return ev


def integrate(
    system: OdeSystem,
    x0: np.ndarray,
    span: tuple[float, float],
    tol: Tolerances = Tolerances(),
) -> Trajectory:
    """Integrate ``system`` from ``x0`` over ``span`` with dense output.

    Parameters
    ----------
    system : OdeSystem
    x0 : array, shape (n,)
    span : (t0, t1)
        May run backward.  Must be nonempty.
    tol : Tolerances

    Returns
    -------
    Trajectory
    """
    t0, t1 = float(span[0]), float(span[1])
    if t0 == t1:
        raise BadInterval("integration span is empty")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (system.n,):
        raise ValueError(f"x0 has shape {x0.shape}, expected {(system.n,)}")
    res = _run_solver(_guarded_rhs(system.f, system.name), (t0, t1), x0, tol, system.name)
    return Trajectory(
        t0=t0,
        t1=t1,
        mesh=res.t.copy(),
        mesh_states=res.y.T.copy(),
        rtol=tol.rtol,
        atol=tol.atol,
        _eval=_make_eval(res.sol, system.n),
    )


def integrate_variational(
    system: OdeSystem,
    x0: np.ndarray,
    span: tuple[float, float],
    tol: Tolerances = Tolerances(),
) -> VariationalTrajectory:
    """Integrate the flow jointly with its variational equation.

    The augmented system of size ``n + n**2`` advances
    ``(x, Phi)' = (f(x), Df(x) Phi)`` from ``(x0, I)``; both components
    share one adaptive step sequence and one dense interpolant.
    """
    n = system.n
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (n,):
        raise ValueError(f"x0 has shape {x0.shape}, expected {(n,)}")
    t0, t1 = float(span[0]), float(span[1])
    if t0 == t1:
        raise BadInterval("integration span is empty")

    f, jac, name = system.f, system.jac, system.name

    def rhs(t, y):
        x = y[:n]
        phi = y[n:].reshape(n, n)
        fx = np.asarray(f(x), dtype=float)
        jx = np.asarray(jac(x), dtype=float)
        if not (np.all(np.isfinite(fx)) and np.all(np.isfinite(jx))):
            raise NonFiniteState(
                f"f/jac of {name!r} returned non-finite values at state {x}"
            )
        return np.concatenate([fx, (jx @ phi).ravel()])

    y0 = np.concatenate([x0, np.eye(n).ravel()])
    res = _run_solver(rhs, (t0, t1), y0, tol, name)

    base = Trajectory(
        t0=t0,
        t1=t1,
        mesh=res.t.copy(),
        mesh_states=res.y[:n].T.copy(),
        rtol=tol.rtol,
        atol=tol.atol,
        _eval=_make_eval(res.sol, n),
    )
    sol = res.sol

    def eval_phi(ts: np.ndarray) -> np.ndarray:
        out = sol(ts)
        if out.ndim == 1:
            out = out[:, None]
        return out[n:].T.reshape(len(ts), n, n).copy()

    dets = np.linalg.det(res.y[n:].T.reshape(-1, n, n))
    if np.any(dets <= 0):
        raise IntegrationError(
            f"{name}: variational determinant non-positive along the span "
            f"(min {dets.min():.3e}); tolerances too loose for this problem"
        )
    return VariationalTrajectory(base=base, n=n, _eval_phi=eval_phi)


def integrate_linear_periodic(
    F: Callable[[float], np.ndarray],
    n: int,
    span: tuple[float, float],
    tol: Tolerances = Tolerances(),
    name: str = "linear-periodic",
) -> VariationalTrajectory:
    """Fundamental matrix of the nonautonomous linear system y' = F(t) y.

    Used for Floquet analysis of directly specified periodic coefficient
    matrices, where no underlying orbit exists; the base trajectory is
    the zero solution.
    """
    t0, t1 = float(span[0]), float(span[1])
    if t0 == t1:
        raise BadInterval("integration span is empty")

    def rhs(t, y):
        Ft = np.asarray(F(t), dtype=float)
        if Ft.shape != (n, n) or not np.all(np.isfinite(Ft)):
            raise NonFiniteState(f"{name}: F(t) invalid at t={t}")
        return (Ft @ y.reshape(n, n)).ravel()

    res = _run_solver(rhs, (t0, t1), np.eye(n).ravel(), tol, name)
    base = Trajectory(
        t0=t0,
        t1=t1,
        mesh=res.t.copy(),
        mesh_states=np.zeros((len(res.t), n)),
        rtol=tol.rtol,
        atol=tol.atol,
        _eval=lambda ts: np.zeros((len(ts), n)),
    )
    sol = res.sol

    def eval_phi(ts: np.ndarray) -> np.ndarray:
        out = sol(ts)
        if out.ndim == 1:
            out = out[:, None]
        return out.T.reshape(len(ts), n, n).copy()

    dets = np.linalg.det(res.y.T.reshape(-1, n, n))
    if np.any(dets <= 0):
        raise IntegrationError(f"{name}: variational determinant non-positive")
    return VariationalTrajectory(base=base, n=n, _eval_phi=eval_phi)


def event_root(
    traj: Trajectory,
    g: Callable[[np.ndarray], float],
    bracket: tuple[float, float] | None = None,
    refine: int = 4,
) -> float:
    """First zero of ``g`` along a trajectory.

    Scans the stored mesh (optionally a ``refine``-fold subdivision) for
    a sign change, then polishes with Brent's method on the dense
    output.  The returned ``t*`` satisfies ``|g(x(t*))| <= 1e-12 * s``
    with ``s = max(1, |g| at the bracket ends)``.

    Raises
    ------
    NoSignChange
        If no sign change exists on the searched span.
    """
    if bracket is not None:
        # caller vouches for a sign change inside the bracket: no scan
        lo, hi = float(bracket[0]), float(bracket[1])
        if lo == hi:
            raise BadInterval("event bracket is empty")
        glo = float(g(traj.state(lo)))
        ghi = float(g(traj.state(hi)))
        scale = max(1.0, abs(glo), abs(ghi))
        if abs(glo) <= 1e-12 * scale:
            return lo
        if abs(ghi) <= 1e-12 * scale:
            return hi
        if np.sign(glo) * np.sign(ghi) > 0:
            raise NoSignChange("event function has one sign on the bracket")
        t_star = brentq(
            lambda t: float(g(traj.state(t))),
            min(lo, hi),
            max(lo, hi),
            xtol=1e-15 * (1.0 + abs(hi)),
            rtol=8.9e-16,
        )
        resid = abs(float(g(traj.state(t_star))))
        if resid > 1e-12 * scale:
            raise IntegrationError(
                f"event root residual {resid:.3e} exceeds 1e-12*{scale:.3e}"
            )
        return float(t_star)

    lo, hi = traj.t0, traj.t1
    direction = 1.0 if hi >= lo else -1.0
    glo = float(g(traj.state(lo)))
    scale0 = max(1.0, abs(glo))
    if abs(glo) <= 1e-12 * scale0:
        return lo

    for level in range(1, refine + 1):
        # subdivide the adaptive mesh; it already resolves the dynamics
        mesh = traj.mesh
        sel = (mesh - lo) * direction >= 0
        sel &= (hi - mesh) * direction >= 0
        base = np.concatenate([[lo], mesh[sel], [hi]])
        base = np.unique(base * direction) * direction
        sub = 2 ** (level - 1)
        ts = np.concatenate(
            [np.linspace(base[i], base[i + 1], sub + 1)[:-1] for i in range(len(base) - 1)]
            + [[base[-1]]]
        )
        vals = np.array([g(s) for s in traj.states(ts)])
        sign = np.sign(vals)
        hits = np.nonzero(sign[:-1] * sign[1:] <= 0)[0]
        if len(hits):
            i = hits[0]
            ta, tb = ts[i], ts[i + 1]
            scale = max(1.0, abs(vals[i]), abs(vals[i + 1]))
            if vals[i] == 0.0:
                return float(ta)
            if vals[i + 1] == 0.0:
                return float(tb)
            t_star = brentq(
                lambda t: float(g(traj.state(t))),
                min(ta, tb),
                max(ta, tb),
                xtol=1e-15 * (1.0 + abs(tb)),
                rtol=8.9e-16,
            )
            resid = abs(float(g(traj.state(t_star))))
            if resid > 1e-12 * scale:
                raise IntegrationError(
                    f"event root residual {resid:.3e} exceeds 1e-12*{scale:.3e}"
                )
            return float(t_star)
    raise NoSignChange("no sign change of the event function on the span")


def _flow_point(system: OdeSystem, x: np.ndarray, t: float, tol: Tolerances) -> np.ndarray:
    return integrate(system, x, (0.0, t), tol).state(t)


def orbital_derivative(
    field: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    system: OdeSystem,
    h: float | None = None,
    order: int = 2,
    tol: Tolerances = Tolerances(),
    monitor: bool = False,
):
    """Derivative of a state field along the flow at ``x``.

    Central finite differences on flow points ``S_{+-h} x``; ``field``
    may return a scalar or an array.  The default step is
    ``1e-4 * clamp(|x| / |f(x)|, 1e-3, 1)``.

    Parameters
    ----------
    order : {2, 4}
        Two- or four-point stencil.
    monitor : bool
        When set, also computes the value at half the step and returns
        ``(value, halving_difference)``.
    """
    x = np.asarray(x, dtype=float)
    if h is None:
        fx = np.asarray(system.f(x), dtype=float)
        speed = float(np.linalg.norm(fx))
        scale = float(np.linalg.norm(x))
        timescale = scale / speed if speed > 0 else np.inf
        h = 1e-4 * float(np.clip(timescale, 1e-3, 1.0))
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")

    def fval(pt: np.ndarray) -> np.ndarray:
        try:
            out = np.asarray(field(pt), dtype=float)
        except Exception as exc:  # noqa: BLE001 - report the field, not the stencil
            raise FieldUndefined(f"field raised at flow point: {exc}") from exc
        if not np.all(np.isfinite(out)):
            raise FieldUndefined("field returned non-finite values at a flow point")
        return out

    def stencil(step: float) -> np.ndarray:
        if order == 2:
            fwd = integrate(system, x, (0.0, step), tol)
            bwd = integrate(system, x, (0.0, -step), tol)
            return (fval(fwd.state(step)) - fval(bwd.state(-step))) / (2.0 * step)
        fwd = integrate(system, x, (0.0, 2.0 * step), tol)
        bwd = integrate(system, x, (0.0, -2.0 * step), tol)
        f1, f2 = fval(fwd.state(step)), fval(fwd.state(2.0 * step))
        b1, b2 = fval(bwd.state(-step)), fval(bwd.state(-2.0 * step))
        return (-f2 + 8.0 * f1 - 8.0 * b1 + b2) / (12.0 * step)

    value = stencil(h)
    if not monitor:
        return value
    half = stencil(h / 2.0)
    diff = float(np.max(np.abs(value - half)))
    return half, diff
