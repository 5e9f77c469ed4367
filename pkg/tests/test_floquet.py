"""Modified real Jordan form, block logarithms, and the assembled
Floquet decomposition."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.linalg import expm

from lcmetric.floquet import (
    JordanBlock,
    block_log,
    eps_prime_for,
    modified_real_jordan,
    reorder_for_orbit,
    verify_spectral_bound,
)


def _real_chain(lam, m):
    return lam * np.eye(m) + np.diag(np.ones(m - 1), 1)


def _pair_chain(a, b, m):
    R = np.array([[a, b], [-b, a]])
    J = np.zeros((2 * m, 2 * m))
    for i in range(m):
        J[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = R
        if i + 1 < m:
            J[2 * i : 2 * i + 2, 2 * i + 2 : 2 * i + 4] = np.eye(2)
    return J


def _random_orthogonal(n, rng):
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return q


def test_eps_prime_formula():
    assert abs(eps_prime_for(0.2, 2.0 * np.pi) - 0.1 * np.pi) < 1e-15
    assert eps_prime_for(10.0, 10.0) == 0.5
    with pytest.raises(ValueError):
        eps_prime_for(-0.1, 1.0)


def test_semisimple_real_matrix():
    rng = np.random.default_rng(0)
    Q = _random_orthogonal(3, rng)
    C = Q @ np.diag([0.9, 0.5, 0.1]) @ Q.T
    jf = modified_real_jordan(C, 0.2)
    assert_allclose(jf.S @ jf.J @ np.linalg.inv(jf.S), C, atol=1e-10)
    assert sorted(b.kind for b in jf.blocks) == ["real_pos"] * 3
    assert all(b.chain == 1 for b in jf.blocks)
    # semisimple chains keep their own eigenvalues, no superdiagonal
    assert_allclose(sorted(np.diag(jf.J)), [0.1, 0.5, 0.9], atol=1e-10)


def test_defective_real_chain_superdiagonal():
    rng = np.random.default_rng(1)
    m, lam = 3, 0.6
    Q = _random_orthogonal(m, rng)
    C = Q @ _real_chain(lam, m) @ Q.T
    eps_prime = 0.25
    jf = modified_real_jordan(
        C, eps_prime, tol_cluster=1e-3, structure={lam: (m,)}
    )
    assert len(jf.blocks) == 1
    assert jf.blocks[0].chain == m
    sup = np.diag(jf.J, 1)
    assert_allclose(sup, eps_prime * lam * np.ones(m - 1), rtol=1e-6)
    assert_allclose(jf.S @ jf.J @ np.linalg.inv(jf.S), C, atol=1e-6)


def test_negative_real_pair_of_simple_blocks():
    C = np.diag([-0.5, -0.2])
    jf = modified_real_jordan(C, 0.1)
    assert sorted(b.kind for b in jf.blocks) == ["real_neg", "real_neg"]
    assert all(b.chain == 1 for b in jf.blocks)


def test_complex_pair_block():
    rho, psi = 0.7, 0.9
    a, b = rho * np.cos(psi), rho * np.sin(psi)
    rng = np.random.default_rng(2)
    Q = _random_orthogonal(2, rng)
    C = Q @ np.array([[a, b], [-b, a]]) @ Q.T
    jf = modified_real_jordan(C, 0.2)
    assert len(jf.blocks) == 1
    blk = jf.blocks[0]
    assert blk.kind == "complex_pair"
    assert abs(blk.modulus - rho) < 1e-10


@pytest.mark.parametrize("m", [1, 2, 3])
def test_block_log_round_trip_real(m):
    lam, T, eps = 0.6, 2.0, 0.3
    eps_prime = eps_prime_for(eps, T)
    rng = np.random.default_rng(m)
    Q = _random_orthogonal(m, rng)
    C = Q @ _real_chain(lam, m) @ Q.T
    jf = modified_real_jordan(
        C, eps_prime, tol_cluster=1e-3, structure={lam: (m,)}
    )
    blk = jf.blocks[0]
    Jb = jf.J[: blk.rows, : blk.rows]
    K = block_log(blk, Jb, T, eps_prime)
    assert np.linalg.norm(expm(K * T) - Jb) <= 1e-12
    lam_max, bound = verify_spectral_bound(K, blk, T, eps)
    assert lam_max <= bound + 1e-10
    if m == 1:
        assert abs(bound - np.log(lam) / T) < 1e-14


def test_case2_m1_hermitian_part_exact():
    blk = JordanBlock(kind="real_neg", chain=1, offset=0, value=-2.0)
    Jb = np.array([[-2.0]])
    K = block_log(blk, Jb, 1.0, 0.1)
    # K = ln 2 + i pi; Hermitian part is exactly the bound
    assert abs(K[0, 0] - (np.log(2.0) + 1j * np.pi)) < 1e-14
    lam_max, bound = verify_spectral_bound(K, blk, 1.0, 0.1)
    assert abs(lam_max - np.log(2.0)) < 1e-14
    assert abs(lam_max - bound) < 1e-14


def test_defective_case1_bound_with_slack():
    # pinned instance: chain length 3, eps = 0.1
    lam, T, eps = 0.8, 1.0, 0.1
    eps_prime = eps_prime_for(eps, T)
    jf = modified_real_jordan(
        _real_chain(lam, 3), eps_prime, tol_cluster=1e-3, structure={lam: (3,)}
    )
    blk = jf.blocks[0]
    K = block_log(blk, jf.J[: blk.rows, : blk.rows], T, eps_prime)
    lam_max, _ = verify_spectral_bound(K, blk, T, eps)
    assert lam_max <= np.log(lam) / T + eps


def test_assemble_linear_periodic(linper_dec):
    dec = linper_dec.dec
    T = linper_dec.lp.period
    assert np.linalg.norm(
        dec.phi.phi(T) - linper_dec.monodromy
    ) < 1e-12 * np.linalg.norm(linper_dec.monodromy)
    assert dec.diagnostics["exp_bt_vs_monodromy"] < 1e-12
    assert_allclose(dec.p_exact(np.array([0.0]))[0], np.eye(2), atol=1e-10)
    assert_allclose(dec.p_exact(np.array([T]))[0], np.eye(2), atol=1e-10)


def test_reorder_already_ordered_is_identity(radial_stage):
    dec = radial_stage.om.dec
    f_q = radial_stage.system.f(radial_stage.orbit.q)
    dec2 = reorder_for_orbit(dec, f_q)
    assert np.array_equal(dec2.A, dec.A)
    assert np.array_equal(dec2.jordan.S, dec.jordan.S)


def test_p_mesh_interpolation_consistency(vdp_stage):
    dec = vdp_stage.om.dec
    rng = np.random.default_rng(7)
    ts = rng.uniform(0.0, dec.period, size=8)
    assert np.max(np.abs(dec.p_at(ts) - dec.p_exact(ts))) < 1e-7
