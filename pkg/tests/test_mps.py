import numpy as np
import pytest
from hypothesis import given, strategies as st

from spinphonon import operators as ops
from spinphonon.ed import dense_from_mpo, ground_state_exact, full_model
from spinphonon.models import QuantumParams, build_full_mpo
from spinphonon.mps import (MPO, MPS, MPSError, correlation_row, expectation, init_mps,
                            local_expectations, mpo_expectation, mpo_from_terms,
                            mpo_is_hermitian, overlap, read_mps, split_blocks, two_site_rdm,
                            write_mps)


def dense_expect(v, N, d, site_ops):
    op = np.eye(1)
    table = dict(site_ops)
    for k in range(N):
        op = np.kron(op, table.get(k, np.eye(d)))
    return np.vdot(v, op @ v) / np.vdot(v, v)


def mps_from_dense(v, N, d):
    """Exact MPS of a dense vector by successive SVDs (no truncation)."""
    tensors, rest, Dl = [], v.reshape(1, -1), 1
    for k in range(N - 1):
        M = rest.reshape(Dl * d, -1)
        U, S, Vh = np.linalg.svd(M, full_matrices=False)
        keep = S > 1e-14
        U, S, Vh = U[:, keep], S[keep], Vh[keep]
        tensors.append(U.reshape(Dl, d, -1))
        rest, Dl = S[:, None] * Vh, len(S)
    tensors.append(rest.reshape(Dl, d, 1))
    return MPS(tensors, [np.zeros(t.shape[0], int) for t in tensors] + [np.zeros(1, int)],
               np.zeros(d, int), N - 1)


def test_product_state_and_errors():
    psi = init_mps(4, 4, kind="product", states=["a_dn"] * 4, labels=list(ops.BASIS))
    assert psi.bond_dims == [1, 1, 1, 1, 1]
    assert np.allclose(local_expectations(psi, ops.sigma_z), -1)
    with pytest.raises(MPSError):
        init_mps(4, 4, kind="product", states=["x"] * 4, labels=list(ops.BASIS))
    with pytest.raises(MPSError):
        init_mps(4, 4, kind="product", states=[7] * 4)
    with pytest.raises(MPSError):
        init_mps(1, 4)


def test_product_energy_at_zero_coupling():
    p = QuantumParams(g=0.0, h=0.3, N=6)
    psi = init_mps(6, 4, kind="product", states=[0] * 6)
    assert abs(mpo_expectation(psi, build_full_mpo(p)) - (-6 * 1.3)) < 1e-13


@given(st.integers(0, 2 ** 31 - 1))
def test_random_state_deterministic_and_normalized(seed):
    a = init_mps(6, 4, 8, "random", seed, local_charges=ops.CHARGES_4, sector=-2)
    b = init_mps(6, 4, 8, "random", seed, local_charges=ops.CHARGES_4, sector=-2)
    assert all(np.array_equal(x, y) for x, y in zip(a.tensors, b.tensors))
    assert abs(a.norm() - 1) < 1e-12
    assert a.total_charge == -2


def test_canonical_isometries():
    psi = init_mps(8, 4, 12, "random", 3, local_charges=ops.CHARGES_4, sector=0).canonicalize(4)
    for k, A in enumerate(psi.tensors):
        if k < 4:
            M = A.reshape(-1, A.shape[2])
            assert np.allclose(M.conj().T @ M, np.eye(M.shape[1]), atol=1e-10)
        elif k > 4:
            M = A.reshape(A.shape[0], -1)
            assert np.allclose(M @ M.conj().T, np.eye(M.shape[0]), atol=1e-10)
    assert psi.bond_dims[0] == psi.bond_dims[-1] == 1


def test_expectation_identity_and_errors():
    psi = init_mps(5, 4, 6, "random", 1, local_charges=ops.CHARGES_4, sector=1)
    assert abs(expectation(psi, [(k, np.eye(4)) for k in range(5)]) - 1) < 1e-12
    with pytest.raises(MPSError):
        expectation(psi, [(5, np.eye(4))])


def test_two_point_matches_dense(rng):
    N, d = 6, 4
    v = rng.standard_normal(d ** N) + 1j * rng.standard_normal(d ** N)
    v /= np.linalg.norm(v)
    psi = mps_from_dense(v, N, d)
    assert np.allclose(psi.to_dense(), v)
    for i, j in [(0, 5), (1, 3), (2, 4)]:
        ref = dense_expect(v, N, d, [(i, ops.sigma_z), (j, ops.sigma_z)])
        assert abs(expectation(psi, [(i, ops.sigma_z), (j, ops.sigma_z)]) - ref) < 1e-10
        row = correlation_row(psi, ops.tau_p, i, ops.tau_m, [j])
        ref = dense_expect(v, N, d, [(i, ops.tau_p), (j, ops.tau_m)]).real
        assert abs(row[0] - ref) < 1e-10


def test_gauge_invariance():
    psi = init_mps(8, 4, 16, "random", 5, local_charges=ops.CHARGES_4, sector=-2)
    ref = local_expectations(psi, ops.tsigma_x)
    rdm = two_site_rdm(psi, 2, 3)
    for c in (0, 3, 7):
        phi = psi.copy().canonicalize(c)
        assert np.allclose(local_expectations(phi, ops.tsigma_x), ref, atol=1e-10)
        assert np.allclose(two_site_rdm(phi, 2, 3), rdm, atol=1e-10)


def test_rdm_properties(rng):
    psi = init_mps(6, 4, 8, "random", 2, local_charges=ops.CHARGES_4, sector=0)
    for i, j in [(0, 1), (2, 3), (1, 4)]:
        rho = two_site_rdm(psi, i, j)
        assert abs(np.trace(rho) - 1) < 1e-12
        assert np.allclose(rho, rho.conj().T, atol=1e-12)
        assert np.linalg.eigvalsh(rho).min() > -1e-12
    prod = init_mps(4, 4, kind="product", states=[0, 1, 2, 3])
    assert np.linalg.matrix_rank(two_site_rdm(prod, 1, 2), tol=1e-10) == 1


def test_triplet_overlap_matches_dense():
    # ground state of the N = 6 full model, dense and as MPS
    p = QuantumParams(g=1.2, h=0.4, N=6)
    e, v = ground_state_exact(full_model(p))
    psi = mps_from_dense(v, 6, 4)
    rho_mps = two_site_rdm(psi, 2, 3)
    t_mps = ops.TRIPLET0 @ ops.spin_marginal(rho_mps) @ ops.TRIPLET0
    # dense: reduce |v><v| to sites 2, 3
    V = v.reshape(16, 16, 16)
    rho = np.einsum("aib,ajb->ij", V, V.conj())
    t_dense = ops.TRIPLET0 @ ops.spin_marginal(rho) @ ops.TRIPLET0
    assert abs(t_mps - t_dense) < 1e-10


def test_split_blocks_respects_charges(rng):
    ql, qr = np.array([0, 0, 1]), np.array([0, 1, 1, 2])
    theta = rng.standard_normal((3, 4))
    theta[(ql[:, None] - qr[None, :]) != 0] = 0  # block-diagonal in charge difference 0
    U, S, V, qb, disc = split_blocks(theta, ql, qr, renormalize=False)
    assert np.allclose((U * S) @ V, theta)
    assert disc < 1e-14


def test_mpo_hermitian_check():
    H = build_full_mpo(QuantumParams(g=1.0, h=0.5, N=5))
    assert mpo_is_hermitian(H)
    bad = build_full_mpo(QuantumParams(g=1.0, h=0.5, N=5), variant="appendix")
    assert not mpo_is_hermitian(bad)


def test_mpo_from_terms_dense():
    # two-site transverse Ising chain assembled by hand
    N = 4
    Z, X = np.diag([1.0, -1.0]), np.array([[0.0, 1.0], [1.0, 0.0]])
    H = mpo_from_terms(N, 2, lambda k: 0.3 * X, [(np.full(N - 1, -1.0), Z, Z)],
                       [(np.full(N - 2, 0.2), X, X)])
    ref = np.zeros((16, 16))

    def op(k, A):
        return np.kron(np.kron(np.eye(2 ** k), A), np.eye(2 ** (N - k - 1)))
    for k in range(N):
        ref += 0.3 * op(k, X)
    for k in range(N - 1):
        ref -= op(k, Z) @ op(k + 1, Z)
    for k in range(N - 2):
        ref += 0.2 * op(k, X) @ op(k + 2, X)
    assert np.allclose(dense_from_mpo(H).H.toarray(), ref, atol=1e-12)


def test_checkpoint_roundtrip(tmp_path):
    psi = init_mps(7, 4, 10, "random", 9, local_charges=ops.CHARGES_4, sector=-1)
    path = tmp_path / "psi.mps"
    write_mps(path, psi)
    phi = read_mps(path)
    assert phi.N == 7 and phi.d == 4 and phi.seed == 9
    assert all(np.array_equal(a, b) for a, b in zip(psi.tensors, phi.tensors))
    assert all(np.array_equal(a, b) for a, b in zip(psi.charges, phi.charges))
    assert abs(overlap(phi, psi) - 1) < 1e-12
    raw = path.read_bytes()
    assert raw[:4] == b"MPS1"
    (tmp_path / "bad.mps").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(MPSError):
        read_mps(tmp_path / "bad.mps")


def test_nonconserving_mpo_detected():
    X = np.array([[0.0, 1.0], [1.0, 0.0]])
    H = mpo_from_terms(3, 2, lambda k: X, local_charges=[-1, 1])
    with pytest.raises(MPSError):
        H.bond_charges()
