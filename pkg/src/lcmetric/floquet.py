"""Floquet normal form with slack-scaled nilpotent parts.

Given a monodromy matrix C = Phi(T), builds a real similarity
C = S J S^{-1} where J is a real Jordan-type form whose superdiagonal
entries are scaled to eps' |lambda_j| (real chains) or eps' r_j I_2
(complex chains) instead of ones.  Each block then admits an explicit
logarithm K_j with e^{K_j T} = J_j exactly and a sharp bound on the
largest eigenvalue of its Hermitian part:

    lambda_max((K_j* + K_j)/2) <= ln|lambda_j|/T + eps   (chain >= 2)
                               <= ln|lambda_j|/T          (chain == 1)

The logarithms stack into A, conjugate to B = S A S^{-1}, and the
periodic factor P(t) = Phi(t) e^{-B t} closes the decomposition
Phi(t) = P(t) e^{B t} with P(0) = P(T) = I.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    ComplexPairMismatch,
    DefectiveStructureUnresolved,
    InvariantViolation,
    KindMismatch,
    TrivialBlockMissing,
)
from .ode_core import VariationalTrajectory
from .periodic_orbit import _cluster

__all__ = [
    "JordanBlock",
    "ModifiedJordanForm",
    "FloquetDecomposition",
    "eps_prime_for",
    "modified_real_jordan",
    "block_log",
    "verify_spectral_bound",
    "assemble",
    "reorder_for_orbit",
]


def eps_prime_for(eps: float, period: float) -> float:
    """Superdiagonal scale: eps' = min(eps*T/2, 1) / 2."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return 0.5 * min(eps * period / 2.0, 1.0)


@dataclass(frozen=True)
class JordanBlock:
    """One chain of the modified form.

    ``chain`` is the chain length m_j; the block occupies ``chain`` rows
    for real kinds and ``2*chain`` rows for complex pairs.  ``value`` is
    the eigenvalue (the beta > 0 member for pairs).
    """

    kind: str  # "real_pos" | "real_neg" | "complex_pair"
    chain: int
    offset: int
    value: complex

    @property
    def rows(self) -> int:
        return self.chain if self.kind != "complex_pair" else 2 * self.chain

    @property
    def modulus(self) -> float:
        return abs(self.value)


@dataclass(frozen=True)
class ModifiedJordanForm:
    S: np.ndarray
    J: np.ndarray
    blocks: tuple[JordanBlock, ...]
    eps_prime: float

    @property
    def n(self) -> int:
        return self.S.shape[0]


def _nullspace(M: np.ndarray, rank_tol: float) -> np.ndarray:
    """Orthonormal nullspace basis columns via SVD."""
    _, s, vh = np.linalg.svd(M)
    smax = s[0] if len(s) else 0.0
    rank = int(np.sum(s > rank_tol * max(smax, 1.0)))
    return vh[rank:].conj().T


def _jordan_chains(A1: np.ndarray, m_alg: int, rank_tol: float) -> list[list[np.ndarray]]:
    """Chains v_1..v_k with A1 v_i = v_{i-1}, A1 v_1 = 0 for one cluster.

    Works in whatever dtype A1 carries (real or complex).  The chain
    structure is read off the nullspace dimensions of powers of A1;
    unstable selections raise DefectiveStructureUnresolved.
    """
    n = A1.shape[0]
    nulls = [np.zeros((n, 0), dtype=A1.dtype)]
    P = np.eye(n, dtype=A1.dtype)
    kmax = 0
    for k in range(1, m_alg + 1):
        P = P @ A1
        nulls.append(_nullspace(P, rank_tol))
        kmax = k
        if nulls[k].shape[1] >= m_alg:
            break
    dims = [nb.shape[1] for nb in nulls]
    if dims[kmax] != m_alg:
        raise DefectiveStructureUnresolved(
            f"generalized nullspace saturated at dimension {dims[kmax]}, "
            f"expected algebraic multiplicity {m_alg}"
        )

    chains: list[list[np.ndarray]] = []
    for k in range(kmax, 0, -1):
        n_ge_k = dims[k] - dims[k - 1]
        n_longer = sum(1 for c in chains if len(c) > k)
        need = n_ge_k - n_longer
        if need < 0:
            raise DefectiveStructureUnresolved("inconsistent chain counts at tolerance")
        if need == 0:
            continue
        # candidates live in null(A1^k); they must be independent of
        # null(A1^{k-1}) and of the level-k elements of longer chains
        blockers = [nulls[k - 1]] + [
            c[k - 1][:, None] for c in chains if len(c) > k
        ]
        Bmat = np.concatenate(blockers, axis=1) if blockers else np.zeros((n, 0), A1.dtype)
        cand = nulls[k]
        if Bmat.shape[1]:
            proj = Bmat @ np.linalg.lstsq(Bmat, cand, rcond=None)[0]
            resid = cand - proj
        else:
            resid = cand.copy()
        norms = np.linalg.norm(resid, axis=0)
        order = np.argsort(-norms)
        for idx in order[:need]:
            if norms[idx] < 1e-6:
                raise DefectiveStructureUnresolved(
                    f"chain top selection degenerate at length {k} "
                    f"(residual {norms[idx]:.2e})"
                )
            top = resid[:, idx] / norms[idx]
            chain = [top]
            for _ in range(k - 1):
                chain.append(A1 @ chain[-1])
            chain.reverse()  # eigenvector first
            chains.append(chain)
    return chains


def _realify_pair_chain(chain: list[np.ndarray]) -> np.ndarray:
    """Columns [Im v_i, Re v_i] per element: diagonal 2x2s become
    [[a, -b], [b, a]] and chain offsets become I_2."""
    cols = []
    for v in chain:
        cols.append(np.imag(v))
        cols.append(np.real(v))
    return np.stack(cols, axis=1)


def modified_real_jordan(
    C: np.ndarray,
    eps_prime: float,
    tol_cluster: float = 1e-6,
    structure: dict[complex, tuple[int, ...]] | None = None,
) -> ModifiedJordanForm:
    """Real similarity C = S J S^{-1} with slack-scaled superdiagonals.

    Eigenvalues are clustered at ``tol_cluster``; each cluster
    contributes one block per Jordan chain.  Semisimple clusters (the
    generic case) take the fast path: plain eigenvectors, realified in
    conjugate pairs, each a chain of length 1 keeping its own
    eigenvalue.  Defective clusters get generalized eigenvector chains
    at the cluster mean, rescaled per element by (eps'|lambda|)^{i-1}
    so the superdiagonal carries eps'|lambda| (eps' r I_2 for pairs).

    ``structure`` optionally pins the chain lengths per cluster (keyed
    by approximate eigenvalue) when rank decisions at tolerance are
    ambiguous.

    Raises
    ------
    DefectiveStructureUnresolved, ComplexPairMismatch
    """
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    if C.shape != (n, n):
        raise ValueError("C must be square")
    if eps_prime <= 0 or eps_prime > 0.5:
        raise ValueError("eps_prime must lie in (0, 1/2]")
    lam, vecs = np.linalg.eig(C)
    scale = max(1.0, float(np.max(np.abs(lam))))
    groups = _cluster(lam, tol_cluster)

    def structure_for(rep: complex) -> tuple[int, ...] | None:
        if not structure:
            return None
        key = min(structure, key=lambda z: abs(z - rep))
        if abs(key - rep) <= 10 * tol_cluster * scale:
            return structure[key]
        return None

    # pair up complex clusters with their conjugates, keep beta > 0 reps
    reps = [complex(np.mean(lam[g])) for g in groups]
    used = [False] * len(groups)
    work: list[tuple[str, int, complex]] = []  # (kind-ish, group index, rep)
    for gi, rep in enumerate(reps):
        if used[gi]:
            continue
        if abs(rep.imag) <= tol_cluster * scale:
            work.append(("real", gi, rep))
            used[gi] = True
            continue
        mate = None
        for gj in range(len(groups)):
            if gj != gi and not used[gj] and abs(reps[gj] - np.conj(rep)) <= tol_cluster * scale:
                mate = gj
                break
        if mate is None:
            raise ComplexPairMismatch(
                f"no conjugate cluster for eigenvalue {rep:.6g}"
            )
        gi_pos = gi if rep.imag > 0 else mate
        work.append(("pair", gi_pos, reps[gi_pos]))
        used[gi] = used[mate] = True

    col_groups: list[tuple[JordanBlock, np.ndarray, np.ndarray]] = []  # block (offset later), S cols, J block

    for kindish, gi, rep in work:
        g = groups[gi]
        m_alg = len(g)
        if kindish == "real":
            lam_r = float(rep.real)
            if abs(lam_r) <= tol_cluster:
                raise ValueError("singular cluster: monodromy must be invertible")
            A1 = C - lam_r * np.eye(n)
            geo = _nullspace(A1, tol_cluster).shape[1]
            forced = structure_for(rep)
            kind = "real_pos" if lam_r > 0 else "real_neg"
            if geo >= m_alg and forced is None:
                # semisimple fast path: one 1x1 block per member, own value
                for idx in g:
                    v = vecs[:, idx]
                    vr = np.real(v) if np.linalg.norm(np.real(v)) >= np.linalg.norm(np.imag(v)) else np.imag(v)
                    nv = np.linalg.norm(vr)
                    if nv < 1e-12:
                        raise DefectiveStructureUnresolved(
                            f"real eigenvector degenerate for eigenvalue {lam[idx]:.6g}"
                        )
                    val = float(np.real(lam[idx]))
                    blk = JordanBlock(kind=kind, chain=1, offset=-1, value=val)
                    col_groups.append((blk, (vr / nv)[:, None], np.array([[val]])))
            else:
                chains = _jordan_chains(A1, m_alg, tol_cluster)
                if forced is not None and tuple(sorted(len(c) for c in chains)) != tuple(sorted(forced)):
                    raise DefectiveStructureUnresolved(
                        f"detected chains {sorted(len(c) for c in chains)} contradict "
                        f"requested structure {sorted(forced)}"
                    )
                for chain in chains:
                    m = len(chain)
                    cols = np.stack(chain, axis=1).real
                    cols = cols / np.linalg.norm(cols[:, 0])
                    scl = (eps_prime * abs(lam_r)) ** np.arange(m)
                    cols = cols * scl[None, :]
                    Jb = lam_r * np.eye(m) + eps_prime * abs(lam_r) * np.eye(m, k=1)
                    blk = JordanBlock(kind=kind, chain=m, offset=-1, value=lam_r)
                    col_groups.append((blk, cols, Jb))
        else:
            # complex pair, rep has positive imaginary part
            a, b = float(rep.real), float(rep.imag)
            r = math.hypot(a, b)
            A1 = C.astype(complex) - rep * np.eye(n)
            geo = _nullspace(A1, tol_cluster).shape[1]
            forced = structure_for(rep)
            if geo >= m_alg and forced is None:
                for idx in g:
                    v = vecs[:, idx]
                    li = lam[idx]
                    ai, bi = float(li.real), float(abs(li.imag))
                    cols = _realify_pair_chain([v if li.imag > 0 else np.conj(v)])
                    nv = np.linalg.norm(cols[:, 0])
                    if nv < 1e-12:
                        raise DefectiveStructureUnresolved(
                            f"pair eigenvector degenerate for eigenvalue {li:.6g}"
                        )
                    cols = cols / nv
                    Jb = np.array([[ai, -bi], [bi, ai]])
                    blk = JordanBlock(kind="complex_pair", chain=1, offset=-1, value=complex(ai, bi))
                    col_groups.append((blk, cols, Jb))
            else:
                chains = _jordan_chains(A1, m_alg, tol_cluster)
                if forced is not None and tuple(sorted(len(c) for c in chains)) != tuple(sorted(forced)):
                    raise DefectiveStructureUnresolved(
                        f"detected chains {sorted(len(c) for c in chains)} contradict "
                        f"requested structure {sorted(forced)}"
                    )
                for chain in chains:
                    m = len(chain)
                    cols = _realify_pair_chain(chain)
                    cols = cols / np.linalg.norm(cols[:, 0:2], ord=2)
                    scl = np.repeat((eps_prime * r) ** np.arange(m), 2)
                    cols = cols * scl[None, :]
                    Jb = np.kron(np.eye(m), np.array([[a, -b], [b, a]]))
                    Jb += eps_prime * r * np.kron(np.eye(m, k=1), np.eye(2))
                    blk = JordanBlock(kind="complex_pair", chain=m, offset=-1, value=complex(a, b))
                    col_groups.append((blk, cols, Jb))

    # deterministic block order: descending modulus, then angle
    def sort_key(item):
        blk = item[0]
        return (-blk.modulus, abs(np.angle(blk.value)), blk.kind)

    col_groups.sort(key=sort_key)

    S = np.zeros((n, n))
    J = np.zeros((n, n))
    blocks: list[JordanBlock] = []
    off = 0
    for blk, cols, Jb in col_groups:
        rows = cols.shape[1]
        S[:, off : off + rows] = cols
        J[off : off + rows, off : off + rows] = Jb
        blocks.append(JordanBlock(kind=blk.kind, chain=blk.chain, offset=off, value=blk.value))
        off += rows
    if off != n:
        raise DefectiveStructureUnresolved(
            f"blocks cover {off} of {n} dimensions; clustering inconsistent"
        )

    recon = np.linalg.norm(S @ J @ np.linalg.solve(S, np.eye(n)) - C, ord="fro")
    bound = 1e-8 * max(np.linalg.norm(C, ord="fro"), 1e-30)
    if not np.isfinite(recon) or recon > bound:
        raise DefectiveStructureUnresolved(
            f"reconstruction residual {recon:.3e} exceeds {bound:.3e}; "
            "cluster tolerance does not resolve this matrix"
        )
    return ModifiedJordanForm(S=S, J=J, blocks=tuple(blocks), eps_prime=eps_prime)


def _shift(m: int) -> np.ndarray:
    return np.eye(m, k=1)


def _log_series(N: np.ndarray, x: float, m: int) -> np.ndarray:
    """ln(I + x N) for nilpotent N with N^m = 0."""
    out = np.zeros_like(N)
    term = np.eye(N.shape[0], dtype=N.dtype)
    for k in range(1, m):
        term = term @ (x * N)
        out = out + ((-1) ** (k + 1) / k) * term
    return out


def block_log(
    block: JordanBlock,
    J_block: np.ndarray,
    period: float,
    eps_prime: float,
) -> np.ndarray:
    """Logarithm K with e^{K T} = J_block exactly (to roundoff).

    Three cases by block kind; the negative-real case returns a complex
    matrix (diagonal carries i pi / T), the others are real.

    Raises
    ------
    KindMismatch
        If the block matrix contradicts the declared kind.
    """
    T = period
    m = block.chain
    if block.kind == "real_pos":
        lam = float(J_block[0, 0])
        if lam <= 0:
            raise KindMismatch(f"real_pos block with diagonal {lam:.6g}")
        K = math.log(lam) * np.eye(m) + _log_series(_shift(m), eps_prime, m)
        return K / T
    if block.kind == "real_neg":
        lam = float(J_block[0, 0])
        if lam >= 0:
            raise KindMismatch(f"real_neg block with diagonal {lam:.6g}")
        K = (1j * math.pi + math.log(abs(lam))) * np.eye(m, dtype=complex)
        K = K + _log_series(_shift(m).astype(complex), -eps_prime, m)
        return K / T
    if block.kind == "complex_pair":
        a, b = float(J_block[0, 0]), float(J_block[1, 0])
        if b <= 0:
            raise KindMismatch(f"complex_pair block with subdiagonal {b:.6g}")
        r = math.hypot(a, b)
        theta = math.atan2(b, a)
        rot_inv = np.array([[math.cos(theta), math.sin(theta)], [-math.sin(theta), math.cos(theta)]])
        Theta = np.array([[0.0, -theta], [theta, 0.0]])
        Nc = np.kron(_shift(m), rot_inv)
        K = math.log(r) * np.eye(2 * m) + np.kron(np.eye(m), Theta) + _log_series(Nc, eps_prime, m)
        return K / T
    raise KindMismatch(f"unknown block kind {block.kind!r}")


def verify_spectral_bound(
    K: np.ndarray,
    block: JordanBlock,
    period: float,
    eps: float,
) -> tuple[float, float]:
    """Largest eigenvalue of the Hermitian part of K and its certified bound.

    Returns ``(lam_max, c_j)`` where c_j = ln|lambda_j|/T, plus eps when
    the chain has length >= 2.
    """
    H = (K + K.conj().T) / 2.0
    lam_max = float(np.max(np.linalg.eigvalsh(H)))
    c = math.log(block.modulus) / period
    if block.chain >= 2:
        c += eps
    return lam_max, c


@dataclass(frozen=True)
class FloquetDecomposition:
    """Assembled decomposition Phi(t) = P(t) e^{B t}.

    ``A`` is the block-diagonal stack of the K_j (complex when a
    negative real multiplier is present), ``B = S A S^{-1}``, and the
    periodic factor is held both on a uniform mesh with a cubic
    interpolant and through the exact route Phi(t) e^{-B t}.
    """

    jordan: ModifiedJordanForm
    period: float
    eps: float
    block_logs: tuple[np.ndarray, ...]
    A: np.ndarray
    B: np.ndarray
    S_inv: np.ndarray
    phi: VariationalTrajectory
    p_mesh_t: np.ndarray
    p_mesh: np.ndarray
    diagnostics: dict[str, float]
    _p_interp: CubicSpline = field(repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.jordan.n

    @property
    def blocks(self) -> tuple[JordanBlock, ...]:
        return self.jordan.blocks

    # -- closed-form block exponentials --------------------------------------

    def exp_a(self, ts: np.ndarray) -> np.ndarray:
        """e^{A t} for an array of times, shape (len(ts), n, n), complex."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        B = len(ts)
        n = self.n
        out = np.zeros((B, n, n), dtype=complex)
        for blk, K in zip(self.blocks, self.block_logs):
            off, rows, m = blk.offset, blk.rows, blk.chain
            if blk.kind == "complex_pair":
                r, th = blk.modulus, math.atan2(blk.value.imag, blk.value.real)
                a, w = math.log(r) / self.period, th / self.period
                core = K - (a * np.eye(rows) + np.kron(np.eye(m), np.array([[0.0, -w], [w, 0.0]])))
                cos, sin = np.cos(w * ts), np.sin(w * ts)
                rot = np.zeros((B, rows, rows))
                for i in range(m):
                    rot[:, 2 * i, 2 * i] = cos
                    rot[:, 2 * i, 2 * i + 1] = -sin
                    rot[:, 2 * i + 1, 2 * i] = sin
                    rot[:, 2 * i + 1, 2 * i + 1] = cos
                poly = self._nilpotent_exp(core, ts, m)
                eb = np.exp(a * ts)[:, None, None] * (rot @ poly)
            else:
                mu = K[0, 0]
                core = K - mu * np.eye(rows, dtype=K.dtype)
                poly = self._nilpotent_exp(core, ts, m)
                eb = np.exp(mu * ts)[:, None, None] * poly
            out[:, off : off + rows, off : off + rows] = eb
        return out

    @staticmethod
    def _nilpotent_exp(N: np.ndarray, ts: np.ndarray, m: int) -> np.ndarray:
        rows = N.shape[0]
        out = np.broadcast_to(np.eye(rows, dtype=complex), (len(ts), rows, rows)).copy()
        if m <= 1:
            return out
        term = np.eye(rows, dtype=complex)
        fact = 1.0
        for k in range(1, m):
            term = term @ N
            fact *= k
            out += (ts**k / fact)[:, None, None] * term
        return out

    # -- periodic factor and transfer kernels --------------------------------

    def p_exact(self, ts: np.ndarray) -> np.ndarray:
        """P(t) = Phi(t) e^{-B t} via dense output, shape (len(ts), n, n)."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        Phi = self.phi.phi_many(ts)
        EmB = np.einsum(
            "ij,bjk,kl->bil", self.jordan.S, self.exp_a(-ts), self.S_inv
        )
        return Phi @ EmB

    def p_at(self, ts: np.ndarray) -> np.ndarray:
        """Interpolated periodic factor on the stored mesh (period-reduced)."""
        ts = np.mod(np.atleast_1d(np.asarray(ts, dtype=float)), self.period)
        return self._p_interp(ts)

    def w_at(self, thetas: np.ndarray) -> np.ndarray:
        """Transfer kernel W(t) = e^{A t} S^{-1} Phi(t)^{-1} = S^{-1} P(t)^{-1}.

        Expects phases already reduced to the span of the stored
        variational trajectory.
        """
        ts = np.atleast_1d(np.asarray(thetas, dtype=float))
        Phi_inv = np.linalg.inv(self.phi.phi_many(ts))
        return self.exp_a(ts) @ (self.S_inv @ Phi_inv)


def assemble(
    jordan: ModifiedJordanForm,
    phi: VariationalTrajectory,
    period: float,
    eps: float,
    mesh_size: int = 512,
    rng_probe: int = 7,
) -> FloquetDecomposition:
    """Stack the block logarithms and close the decomposition.

    Verifies, and raises InvariantViolation on failure:

    * ``|e^{B T} - Phi(T)|_F <= 1e-8 |Phi(T)|_F``
    * ``|P(T) - I|_F <= 1e-8`` (P(0) = I holds exactly by construction)
    * per-block spectral bounds within 1e-10
    * mesh interpolation of P against the exact route at random probe
      times, <= 1e-8 (the mesh is doubled up to 8x if needed)
    """
    n = jordan.n
    eps_prime = jordan.eps_prime
    Ks: list[np.ndarray] = []
    A = np.zeros((n, n), dtype=complex)
    for blk in jordan.blocks:
        Jb = jordan.J[blk.offset : blk.offset + blk.rows, blk.offset : blk.offset + blk.rows]
        K = block_log(blk, Jb, period, eps_prime)
        lam_max, c = verify_spectral_bound(K, blk, period, eps)
        if lam_max > c + 1e-10:
            raise InvariantViolation(f"spectral_bound[{blk.kind},m={blk.chain}]", lam_max, c + 1e-10)
        Ks.append(K)
        A[blk.offset : blk.offset + blk.rows, blk.offset : blk.offset + blk.rows] = K

    S = jordan.S
    S_inv = np.linalg.solve(S, np.eye(n))
    B = S @ A @ S_inv

    dec_partial = FloquetDecomposition(
        jordan=jordan,
        period=period,
        eps=eps,
        block_logs=tuple(Ks),
        A=A,
        B=B,
        S_inv=S_inv,
        phi=phi,
        p_mesh_t=np.empty(0),
        p_mesh=np.empty(0),
        diagnostics={},
        _p_interp=None,
    )

    PhiT = phi.phi_many(np.array([period]))[0]
    eBT = S @ dec_partial.exp_a(np.array([period]))[0] @ S_inv
    exp_resid = np.linalg.norm(eBT - PhiT, ord="fro") / np.linalg.norm(PhiT, ord="fro")
    if exp_resid > 1e-8:
        raise InvariantViolation("exp_bt_vs_monodromy", float(exp_resid), 1e-8)

    rng = np.random.default_rng(rng_probe)
    size = mesh_size
    while True:
        ts = np.linspace(0.0, period, size + 1)
        P = dec_partial.p_exact(ts)
        p0_resid = float(np.max(np.abs(P[0] - np.eye(n))))
        pT_resid = float(np.linalg.norm(P[-1] - np.eye(n), ord="fro"))
        samples = P.copy()
        samples[-1] = samples[0]  # periodic closure for the interpolant
        interp = CubicSpline(ts, samples, axis=0, bc_type="periodic")
        probes = rng.uniform(0.0, period, 32)
        interp_err = float(np.max(np.abs(interp(probes) - dec_partial.p_exact(probes))))
        if interp_err <= 1e-8 or size >= 8 * mesh_size:
            break
        size *= 2

    if pT_resid > 1e-8:
        raise InvariantViolation("p_periodicity", pT_resid, 1e-8)
    if interp_err > 1e-8:
        raise InvariantViolation("p_mesh_interpolation", interp_err, 1e-8)

    diagnostics = {
        "exp_bt_vs_monodromy": float(exp_resid),
        "p_at_0": p0_resid,
        "p_at_T": pT_resid,
        "p_mesh_interpolation": interp_err,
        "p_mesh_size": float(size),
    }
    return FloquetDecomposition(
        jordan=jordan,
        period=period,
        eps=eps,
        block_logs=tuple(Ks),
        A=A,
        B=B,
        S_inv=S_inv,
        phi=phi,
        p_mesh_t=ts,
        p_mesh=P,
        diagnostics=diagnostics,
        _p_interp=interp,
    )


def reorder_for_orbit(dec: FloquetDecomposition, f_q: np.ndarray) -> FloquetDecomposition:
    """Permute blocks so the trivial multiplier leads with column f(q).

    After reordering, block 0 is a 1x1 real block with value exactly 1
    (so K_1 = 0), the first column of S equals ``f_q``, and A, B, P are
    re-derived.  Idempotent: an already ordered decomposition is
    returned unchanged.

    Raises
    ------
    TrivialBlockMissing
        If no 1x1 positive real block lies within 1e-6 of 1, or f_q is
        not a monodromy eigenvector for multiplier 1 at tolerance.
    """
    f_q = np.asarray(f_q, dtype=float)
    jordan = dec.jordan
    n = jordan.n

    PhiT = dec.phi.phi_many(np.array([dec.period]))[0]
    ev_resid = np.linalg.norm(PhiT @ f_q - f_q) / np.linalg.norm(f_q)
    if ev_resid > 1e-6:
        raise TrivialBlockMissing(
            f"f(q) is not a unit-multiplier eigenvector (residual {ev_resid:.3e})"
        )

    trivial = None
    for bi, blk in enumerate(jordan.blocks):
        if blk.kind == "real_pos" and blk.chain == 1 and abs(blk.value - 1.0) <= 1e-6:
            trivial = bi
            break
    if trivial is None:
        raise TrivialBlockMissing("no 1x1 block with multiplier 1 in the form")

    already = (
        trivial == 0
        and jordan.blocks[0].offset == 0
        and jordan.J[0, 0] == 1.0
        and np.array_equal(jordan.S[:, 0], f_q)
    )
    if already:
        return dec

    order = [trivial] + [bi for bi in range(len(jordan.blocks)) if bi != trivial]
    S_new = np.zeros_like(jordan.S)
    J_new = np.zeros_like(jordan.J)
    blocks_new: list[JordanBlock] = []
    off = 0
    for bi in order:
        blk = jordan.blocks[bi]
        sl = slice(blk.offset, blk.offset + blk.rows)
        cols = jordan.S[:, sl]
        Jb = jordan.J[sl, sl]
        value = blk.value
        if bi == trivial:
            cols = f_q[:, None]
            Jb = np.array([[1.0]])
            value = 1.0 + 0.0j
        S_new[:, off : off + blk.rows] = cols
        J_new[off : off + blk.rows, off : off + blk.rows] = Jb
        blocks_new.append(JordanBlock(kind=blk.kind, chain=blk.chain, offset=off, value=value))
        off += blk.rows

    jordan_new = ModifiedJordanForm(
        S=S_new, J=J_new, blocks=tuple(blocks_new), eps_prime=jordan.eps_prime
    )
    recon = np.linalg.norm(S_new @ J_new @ np.linalg.solve(S_new, np.eye(n)) - PhiT, ord="fro")
    bound = 1e-8 * np.linalg.norm(PhiT, ord="fro")
    if recon > bound:
        raise InvariantViolation("reordered_reconstruction", float(recon), float(bound))
    return assemble(
        jordan_new,
        dec.phi,
        dec.period,
        dec.eps,
        mesh_size=max(512, len(dec.p_mesh_t) - 1),
    )
