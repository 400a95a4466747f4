import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spinphonon.lattice import (K_WG, LatticeError, LatticeSpec, band_energies, band_energies_fd,
                                build_wannier_pair, coefficient_record, compute_etas,
                                compute_interaction_coefficients, harmonic_ground_state,
                                read_coefficients, solve_band_structure, tunneling_from_bandwidth,
                                wannier_function, write_coefficients)


@pytest.fixture(scope="module")
def wp20():
    return build_wannier_pair(LatticeSpec(V_L_over_ER=20.0, L_over_a=2.0))


def integ(f, x):
    from scipy.integrate import simpson
    return simpson(f, x=x)


def test_spec_invariants():
    s = LatticeSpec()
    assert s.k_tr == s.k / 2
    assert math.isclose(s.k_tr, math.pi / 2)
    with pytest.raises(ValueError):
        LatticeSpec(V_L_over_ER=0.0)
    with pytest.raises(ValueError):
        LatticeSpec(L_over_a=-1.0)


def test_free_particle_bands_fold_into_zone():
    q = np.linspace(-1, 1, 9, endpoint=False)
    e = band_energies(0.0, q, n_bands=3)
    # E = (q + 2m)^2 in E_R with q in units of k_tr
    ref = np.sort(np.stack([(q + 2 * m) ** 2 for m in range(-2, 3)], axis=1), axis=1)[:, :3]
    assert np.allclose(e, ref, atol=1e-12)


@given(st.floats(0.0, 1.0))
def test_bands_even_in_q(q):
    e = band_energies(20.0, [q, -q])
    assert abs(e[0] - e[1]).max() < 1e-10


def test_plane_wave_matches_finite_difference():
    q = np.array([-0.5, 0.0, 0.25, 0.75])
    pw = band_energies(20.0, q)
    fd = band_energies_fd(20.0, q, n_points=400)
    assert np.abs(pw - fd).max() < 1e-6


def test_cutoff_nonconvergence_detected():
    with pytest.raises(LatticeError):
        solve_band_structure(LatticeSpec(V_L_over_ER=20.0, cutoff=3))


def test_wannier_orthonormal_and_parity(wp20):
    x = wp20.x_grid
    assert abs(integ(wp20.w_a ** 2, x) - 1) < 1e-8
    assert abs(integ(wp20.w_b ** 2, x) - 1) < 1e-8
    assert abs(integ(wp20.w_a * wp20.w_b, x)) < 1e-8
    assert np.allclose(wp20.w_a, wp20.w_a[::-1], atol=1e-10)
    assert np.allclose(wp20.w_b, -wp20.w_b[::-1], atol=1e-10)
    assert wp20.Delta > 0


def test_wannier_translation(wp20):
    # site-1 function built from Bloch phases exp(-i q u_1) equals w_0(x - 2a)
    from spinphonon.lattice import K_TR, _gauge_fixed
    bands = wp20.bands
    x = np.linspace(-1.0, 3.0, 81)
    c = _gauge_fixed(bands, 0)
    u = K_TR * x
    k_pw = bands.q[:, None] + 2.0 * bands.m[None, :]
    w1 = np.zeros(len(x), complex)
    for j, q in enumerate(bands.q):
        w1 += np.exp(-1j * q * np.pi) * (np.exp(1j * np.multiply.outer(u, k_pw[j])) @ c[j])
    w1 /= len(bands.q)
    w0_shift = wannier_function(bands, 0, x - 2.0)
    assert np.abs(w1.imag).max() < 1e-10
    assert np.allclose(w1.real, w0_shift, atol=1e-10 * np.abs(w0_shift).max())


def test_deep_lattice_harmonic_limit():
    wp = build_wannier_pair(LatticeSpec(V_L_over_ER=40.0))
    ho = harmonic_ground_state(wp.x_grid, 40.0)
    assert abs(integ(wp.w_a * ho, wp.x_grid)) > 0.99


def test_tunneling(wp20):
    assert abs(wp20.t_a) / wp20.Delta < 0.02
    tb_a, tb_b = tunneling_from_bandwidth(wp20.bands)
    assert abs(abs(wp20.t_a) - tb_a) / tb_a < 0.1
    assert abs(abs(wp20.t_b) - tb_b) / tb_b < 0.1


def test_tunneling_decreases_with_depth():
    ts = [abs(build_wannier_pair(LatticeSpec(V_L_over_ER=V)).t_a) for V in (10.0, 20.0, 30.0)]
    assert ts[0] > ts[1] > ts[2]


def test_eta_values(wp20):
    eta = compute_etas(wp20, 2.0)
    assert abs(eta.eta0 - 0.54) <= 0.02
    assert abs(eta.eta_a - 0.12) <= 0.02
    assert abs(eta.eta_b - 0.32) <= 0.02
    assert math.isclose(eta.chi, eta.eta_a / (eta.eta0 * 2.0))
    assert 0 < eta.eta0 <= 1 and eta.eta_a > 0 and eta.eta_b > 0


def test_odd_integrand_vanishes(wp20):
    x = wp20.x_grid
    assert abs(integ(np.sin(K_WG * x) * wp20.w_a ** 2, x)) < 1e-10


def test_sine_sign_flip(wp20):
    pos = compute_etas(wp20, 2.0)
    neg = compute_etas(wp20, 2.0, k=-K_WG)
    assert math.isclose(neg.eta0, -pos.eta0, rel_tol=1e-12)
    assert math.isclose(neg.eta0 ** 2, pos.eta0 ** 2, rel_tol=1e-12)


def test_eta_grid_refinement():
    coarse = compute_etas(build_wannier_pair(LatticeSpec(points_per_period=256)), 2.0)
    fine = compute_etas(build_wannier_pair(LatticeSpec(points_per_period=512)), 2.0)
    for f in ("eta0", "eta_a", "eta_b"):
        assert abs(getattr(coarse, f) - getattr(fine, f)) < 1e-4


def test_infinite_range_kernel_kills_V_alpha(wp20):
    V = compute_interaction_coefficients(wp20, 2.0, separation=1, kernel=False)
    assert abs(V["V_a"]) < 1e-10 and abs(V["V_b"]) < 1e-10


def test_V_prime_ab_leading_order(wp20):
    V = compute_interaction_coefficients(wp20, 2.0, separation=1)
    eta0 = compute_etas(wp20, 2.0).eta0
    lead = math.exp(-1.0) * eta0 ** 2
    assert abs(V["V_ab_prime"] - lead) / lead < 0.15


def test_separation_two_suppressed(wp20):
    v1 = compute_interaction_coefficients(wp20, 2.0, separation=1)
    v2 = compute_interaction_coefficients(wp20, 2.0, separation=2)
    # Wannier tails give V_b a small excess over the bare kernel ratio
    for key in ("V_a", "V_b", "V_ab", "V_ab_prime", "V_3ab", "V_3ba"):
        if abs(v1[key]) > 1e-12:
            assert abs(v2[key] / v1[key]) <= math.exp(-1.0) * 1.01, key


def test_coefficient_record_roundtrip(tmp_path, wp20):
    rec = coefficient_record(LatticeSpec(), wp20)
    assert set(rec) == {"V_L_over_ER", "L_over_a", "eta0", "eta_a_over_a", "eta_b_over_a",
                        "Delta_over_ER", "t_a_over_ER", "t_b_over_ER"}
    path = tmp_path / "c.json"
    write_coefficients(path, rec)
    assert read_coefficients(path) == json.loads(path.read_text())
    path.write_text(json.dumps({"eta0": 1.0}))
    with pytest.raises(ValueError):
        read_coefficients(path)
