"""Evaluation of the orbital contraction functional for a metric field.

For a Riemannian metric M and vector field f, the functional is

    L_M(y) = max { v' (M Df + Df' M + M') v / 2 :
                   v' M v = 1,  v' M f(y) = 0 }.

The constrained maximum reduces to the largest eigenvalue of a reduced
(n-1) x (n-1) symmetric matrix built from any basis of the M-orthogonal
complement of f(y): with Q = [f(y), w_2, ..., w_n], A the lower-right
(n-1) block of Q' M Q, C the upper-triangular Cholesky factor with
C' C = A, and R the same block of Q' (M Df + Df' M + M') Q,

    L_M(y) = lambda_max( C^{-T} R C^{-1} / 2 ).

The complement basis comes either from a Householder frame at y itself
(the default, always valid) or from a reference basis anchored at a
nearby point and projected to y, which is what keeps the evaluation
continuous across a neighbourhood.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import BasisDegenerate, CholeskyFail, SingularF
from .ode_core import OdeSystem, Tolerances, orbital_derivative

__all__ = [
    "MetricFieldHandle",
    "ReferenceBasis",
    "LmReport",
    "LipschitzProbe",
    "l_m_direct",
    "reanchor_basis",
    "l_m_at",
    "lipschitz_probe",
]

# re-anchor when the anchored frame sees f(y) at a grazing angle
_VALIDITY_FRACTION = 0.1


@dataclass(frozen=True)
class MetricFieldHandle:
    """A metric field M(x) with an optional analytic orbital derivative.

    When ``m_prime`` is None, evaluations fall back to central finite
    differences of M along the flow.
    """

    m: Callable[[np.ndarray], np.ndarray]
    m_prime: Callable[[np.ndarray], np.ndarray] | None = None
    provenance: str = "user"


@dataclass(frozen=True)
class ReferenceBasis:
    anchor: np.ndarray
    columns: np.ndarray  # (n, n); column 0 is f(anchor)
    m_f_anchor: np.ndarray  # M(anchor) f(anchor)


@dataclass(frozen=True)
class LmReport:
    value: float
    direction: np.ndarray
    h_matrix: np.ndarray
    q_matrix: np.ndarray
    anchor: np.ndarray
    reanchored: bool


@dataclass(frozen=True)
class LipschitzProbe:
    ratio: float
    pair: tuple[np.ndarray, np.ndarray]
    samples_used: int


def _householder_complement(g: np.ndarray) -> np.ndarray:
    """Orthonormal columns spanning the orthogonal complement of g.

    Batched: g of shape (B, n) gives (B, n, n-1).  Columns 2..n of the
    Householder reflector mapping e_1 onto g/|g| are returned.
    """
    gn = np.linalg.norm(g, axis=-1, keepdims=True)
    ghat = g / gn
    n = g.shape[-1]
    sign = np.where(ghat[..., 0] >= 0.0, 1.0, -1.0)
    u = ghat.copy()
    u[..., 0] += sign
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    H = np.broadcast_to(np.eye(n), g.shape[:-1] + (n, n)).copy()
    H -= 2.0 * u[..., :, None] * u[..., None, :]
    return H[..., :, 1:]


def _core_many(
    M: np.ndarray,
    Mp: np.ndarray,
    f: np.ndarray,
    Df: np.ndarray,
    W: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Batched constrained maximization.

    Parameters are stacked along the first axis.  ``W`` supplies the
    complement basis columns; by default a Householder frame orthogonal
    to M f is used.  Returns (values, directions, H, Q).
    """
    g = np.einsum("bij,bj->bi", M, f)
    if W is None:
        W = _householder_complement(g)
    Q = np.concatenate([f[:, :, None], W], axis=2)
    bracket = M @ Df
    Sym = bracket + bracket.swapaxes(-1, -2) + Mp

    Wt = W.swapaxes(-1, -2)
    A = Wt @ M @ W
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise CholeskyFail(
            "constraint Gram matrix not positive definite; "
            "metric fails SPD on the complement"
        ) from exc
    R = Wt @ Sym @ W
    X = np.linalg.solve(L, R)
    Y = np.linalg.solve(L, X.swapaxes(-1, -2))
    H = 0.25 * (Y + Y.swapaxes(-1, -2))  # half the form, symmetrized
    vals, vecs = np.linalg.eigh(H)
    lam = vals[:, -1]
    vtil = vecs[:, :, -1]
    util = np.linalg.solve(L.swapaxes(-1, -2), vtil[..., None])[..., 0]
    v = np.einsum("bij,bj->bi", W, util)
    # clean the normalization v' M v = 1
    s = np.einsum("bi,bij,bj->b", v, M, v)
    v = v / np.sqrt(s)[:, None]
    return lam, v, H, Q


def _m_prime_of(handle: MetricFieldHandle, y: np.ndarray, system: OdeSystem, tol: Tolerances):
    if handle.m_prime is not None:
        return np.asarray(handle.m_prime(y), dtype=float)
    return np.asarray(orbital_derivative(handle.m, y, system, tol=tol), dtype=float)


def l_m_direct(
    y: np.ndarray,
    v: np.ndarray,
    handle: MetricFieldHandle,
    system: OdeSystem,
    tol: Tolerances = Tolerances(),
) -> float:
    """Quadratic form value v' (M Df + Df' M + M') v / 2 at a given direction."""
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    M = np.asarray(handle.m(y), dtype=float)
    Mp = _m_prime_of(handle, y, system, tol)
    Df = np.asarray(system.jac(y), dtype=float)
    bracket = M @ Df
    Sym = bracket + bracket.T + Mp
    return 0.5 * float(v @ Sym @ v)


def reanchor_basis(
    x_ref: np.ndarray,
    handle: MetricFieldHandle,
    system: OdeSystem,
) -> ReferenceBasis:
    """Reference frame at ``x_ref``: column 0 is f(x_ref), the rest span
    the M(x_ref)-orthogonal complement of f(x_ref)."""
    x_ref = np.asarray(x_ref, dtype=float)
    f = np.asarray(system.f(x_ref), dtype=float)
    nf = np.linalg.norm(f)
    if nf <= 1e-12 * (1.0 + np.linalg.norm(x_ref)):
        raise SingularF(f"vector field vanishes at reference point {x_ref}")
    M = np.asarray(handle.m(x_ref), dtype=float)
    g = M @ f
    W = _householder_complement(g[None, :])[0]
    columns = np.concatenate([f[:, None], W], axis=1)
    return ReferenceBasis(anchor=x_ref, columns=columns, m_f_anchor=g)


def l_m_at(
    y: np.ndarray,
    handle: MetricFieldHandle,
    system: OdeSystem,
    basis: ReferenceBasis | None = None,
    auto_reanchor: bool = True,
    tol: Tolerances = Tolerances(),
) -> LmReport:
    """Constrained maximum L_M(y) with maximizing direction.

    With ``basis`` given, its complement columns are projected to y by

        P_y v = v - (f(y)' M(y) v) / (f(y)' M(y) f(y)) f(y)

    and used as the complement frame; the anchored frame stays valid
    while |f(y)' M(a) f(a)| >= 0.1 |f(y)| |M(a) f(a)|, otherwise the
    evaluation re-anchors at y (or raises BasisDegenerate when
    ``auto_reanchor`` is off).

    Returns
    -------
    LmReport
        value, direction (normalized to v' M v = 1, v' M f = 0), the
        reduced matrix H, the frame Q, and the anchor actually used.
    """
    y = np.asarray(y, dtype=float)
    f = np.asarray(system.f(y), dtype=float)
    nf = np.linalg.norm(f)
    if nf <= 1e-12 * (1.0 + np.linalg.norm(y)):
        raise SingularF(f"vector field vanishes at evaluation point {y}")
    M = np.asarray(handle.m(y), dtype=float)
    Mp = _m_prime_of(handle, y, system, tol)
    Df = np.asarray(system.jac(y), dtype=float)

    W = None
    anchor = y
    reanchored = False
    if basis is not None:
        align = abs(float(f @ basis.m_f_anchor))
        if align >= _VALIDITY_FRACTION * nf * np.linalg.norm(basis.m_f_anchor):
            g = M @ f
            fMf = float(f @ g)
            V = basis.columns[:, 1:]
            coef = (g @ V) / fMf
            W = V - f[:, None] * coef[None, :]
            anchor = basis.anchor
        elif not auto_reanchor:
            raise BasisDegenerate(
                "reference basis invalid at evaluation point and re-anchoring disabled"
            )
        else:
            reanchored = True

    lam, v, H, Q = _core_many(
        M[None], Mp[None], f[None], Df[None], None if W is None else W[None]
    )
    return LmReport(
        value=float(lam[0]),
        direction=v[0],
        h_matrix=H[0],
        q_matrix=Q[0],
        anchor=anchor,
        reanchored=reanchored,
    )


def lipschitz_probe(
    handle: MetricFieldHandle,
    system: OdeSystem,
    sampler: Callable[[np.random.Generator, int], np.ndarray],
    pairs: int = 200,
    rng: np.random.Generator | None = None,
    scale_range: tuple[float, float] = (1e-4, 1e-2),
) -> LipschitzProbe:
    """Empirical local Lipschitz ratio of L_M over sampled point pairs.

    Draws base points from ``sampler`` and offsets at log-uniform
    scales, then maximizes |L(x) - L(x')| / |x - x'|.  Pairs where the
    evaluation is undefined (e.g. outside a chart) are skipped but
    counted in ``samples_used``.
    """
    from .errors import LcmetricError

    rng = rng or np.random.default_rng(0)
    xs = sampler(rng, pairs)
    n = xs.shape[1]
    best = -np.inf
    best_pair = (xs[0], xs[0])
    used = 0
    lo, hi = scale_range
    for x in xs:
        direction = rng.normal(size=n)
        direction /= np.linalg.norm(direction)
        step = np.exp(rng.uniform(np.log(lo), np.log(hi))) * (1.0 + np.linalg.norm(x))
        x2 = x + step * direction
        try:
            la = l_m_at(x, handle, system).value
            lb = l_m_at(x2, handle, system).value
        except LcmetricError:
            continue
        used += 1
        ratio = abs(la - lb) / np.linalg.norm(x2 - x)
        if ratio > best:
            best = ratio
            best_pair = (x, x2)
    return LipschitzProbe(ratio=float(best), pair=best_pair, samples_used=used)
