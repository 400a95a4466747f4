import numpy as np
import pytest

from spinphonon import operators as ops
from spinphonon.ed import dense_from_mpo, ground_state_exact
from spinphonon.freefermion import (correlation_matrix, density_correlation, flip_correlation,
                                    hplus_flip_count, hplus_magnetization, hplus_modes,
                                    mode_functions, occupied_modes)
from spinphonon.models import build_hplus_mpo
from spinphonon.mps import correlation_row


def dense_two_point(v, N, i, A, j, B):
    mats = [np.eye(4)] * N
    mats[i] = A
    mats[j] = mats[j] @ B
    op = mats[0]
    for m in mats[1:]:
        op = np.kron(op, m)
    return np.vdot(v, op @ v).real


def test_modes_orthonormal():
    phi = mode_functions(9)
    assert np.allclose(phi @ phi.T, np.eye(9))


def test_flip_count_and_magnetization():
    N = 62
    assert hplus_flip_count(1.6, 5.0, 1.0, N) == 0
    assert hplus_magnetization(1.6, 5.0, 1.0, N) == -0.5
    n = hplus_flip_count(1.18, 1.4, 1.0, N)
    assert hplus_magnetization(1.18, 1.4, 1.0, N) == pytest.approx((-N + 2 * n) / (2 * N))
    assert np.sum(hplus_modes(1.18, 1.4, 1.0, N) < 0) == n


def test_correlations_match_ed():
    N, g, h = 6, 1.6, 0.9
    e, v = ground_state_exact(dense_from_mpo(build_hplus_mpo(g, h, 1.0, N)))
    C = correlation_matrix(N, occupied_modes(g, h, 1.0, N))
    n = len(occupied_modes(g, h, 1.0, N))
    assert n > 0
    for i, j in [(0, 1), (1, 4), (2, 5)]:
        ref = dense_two_point(v, N, i, ops.tau_p, j, ops.tau_m)
        assert flip_correlation(C, i, j) == pytest.approx(ref, abs=1e-10)
        zz = dense_two_point(v, N, i, ops.tau_z, j, ops.tau_z)
        zi = dense_two_point(v, N, i, ops.tau_z, i, np.eye(4))
        zj = dense_two_point(v, N, j, ops.tau_z, j, np.eye(4))
        assert density_correlation(C, i, j) == pytest.approx(zz - zi * zj, abs=1e-10)
    with pytest.raises(ValueError):
        flip_correlation(C, 3, 3)
