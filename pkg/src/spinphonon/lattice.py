"""Band structure and Wannier functions of the sinusoidal trap lattice.

Units: energies in the trap recoil energy E_R = hbar^2 k_tr^2 / 2m, lengths in
the waveguide unit cell ``a``.  The trap ``V_L sin^2(k_tr x)`` with
``k_tr = pi / (2a)`` has period ``2a``; its minima sit at nodes of the
waveguide Bloch function ``sin(k x)`` with ``k = pi / a``.

Internally the Schroedinger problem is solved in the scaled coordinate
``u = k_tr x`` where it reads ``-d^2/du^2 + V sin^2(u)`` with period ``pi``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

TRAP_PERIOD = 2.0  # in units of a
K_TR = np.pi / TRAP_PERIOD  # trap wavenumber, units 1/a
K_WG = 2.0 * K_TR  # waveguide Bloch wavenumber k = pi/a


class LatticeError(RuntimeError):
    """Raised when a numerical diagnostic of the lattice solver fails."""


@dataclass(frozen=True)
class LatticeSpec:
    V_L_over_ER: float = 20.0
    L_over_a: float = 2.0
    points_per_period: int = 256
    n_periods: int = 3  # grid spans +-n_periods trap periods
    cutoff: int = 24  # plane waves m in [-cutoff, cutoff]
    n_q: int = 64

    def __post_init__(self):
        if not self.V_L_over_ER > 0:
            raise ValueError("trap depth must be positive")
        if not self.L_over_a > 0:
            raise ValueError("interaction range must be positive")

    @property
    def a(self) -> float:
        return 1.0

    @property
    def k(self) -> float:
        return K_WG

    @property
    def k_tr(self) -> float:
        return K_TR


@dataclass
class BandStructure:
    q: np.ndarray  # quasi-momenta in units of k_tr, in [-1, 1)
    energies: np.ndarray  # (n_q, n_bands), units E_R
    coeffs: np.ndarray  # (n_q, n_pw, n_bands) plane-wave amplitudes
    m: np.ndarray  # plane-wave labels
    V: float

    @property
    def n_bands(self) -> int:
        return self.energies.shape[1]


@dataclass
class WannierPair:
    x_grid: np.ndarray
    w_a: np.ndarray
    w_b: np.ndarray
    eps_a: float
    eps_b: float
    t_a: float = float("nan")
    t_b: float = float("nan")
    band_gap_min: float = float("nan")
    bands: BandStructure | None = field(default=None, repr=False)
    spec: LatticeSpec | None = field(default=None, repr=False)

    @property
    def Delta(self) -> float:
        return self.eps_b - self.eps_a


@dataclass(frozen=True)
class EtaSet:
    eta0: float
    eta_a: float
    eta_b: float
    L: float

    @property
    def chi(self) -> float:
        return self.eta_a / (self.eta0 * self.L)


def _bloch_matrix(q: float, V: float, m: np.ndarray) -> np.ndarray:
    n = len(m)
    H = np.diag((q + 2.0 * m) ** 2 + V / 2.0)
    off = -V / 4.0 * np.ones(n - 1)
    H += np.diag(off, 1) + np.diag(off, -1)
    return H


def _solve(V: float, q: np.ndarray, cutoff: int, n_bands: int):
    m = np.arange(-cutoff, cutoff + 1)
    energies = np.empty((len(q), n_bands))
    coeffs = np.empty((len(q), len(m), n_bands))
    for j, qj in enumerate(q):
        e, v = np.linalg.eigh(_bloch_matrix(qj, V, m))
        energies[j] = e[:n_bands]
        coeffs[j] = v[:, :n_bands]
    return energies, coeffs, m


def solve_band_structure(spec: LatticeSpec, n_bands: int = 2, n_q: int | None = None,
                         check_convergence: bool = True) -> BandStructure:
    """Plane-wave diagonalization of the trap lattice over the trap Brillouin zone.

    The returned q-grid is uniform on [-1, 1) in units of k_tr, so it can be fed
    directly to the Wannier transform.
    """
    if n_bands < 2:
        raise ValueError("need at least two bands")
    n_q = spec.n_q if n_q is None else n_q
    V = spec.V_L_over_ER
    q = -1.0 + 2.0 * np.arange(n_q) / n_q
    energies, coeffs, m = _solve(V, q, spec.cutoff, n_bands)
    if check_convergence:
        e2, _, _ = _solve(V, q, 2 * spec.cutoff, n_bands)
        shift = np.max(np.abs(e2 - energies))
        if shift > 1e-8:
            raise LatticeError(f"plane-wave cutoff {spec.cutoff} not converged "
                               f"(shift {shift:.2e} E_R on doubling)")
    return BandStructure(q=q, energies=energies, coeffs=coeffs, m=m, V=V)


def band_energies(V: float, q, n_bands: int = 2, cutoff: int = 24) -> np.ndarray:
    """Band energies E_n(q) (units E_R) for arbitrary quasi-momenta."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    return _solve(V, q, cutoff, n_bands)[0]


# 8th-order central stencil for the second derivative
_D2_STENCIL = np.array([-1 / 560, 8 / 315, -1 / 5, 8 / 5, -205 / 72, 8 / 5, -1 / 5, 8 / 315, -1 / 560])


def band_energies_fd(V: float, q, n_bands: int = 2, n_points: int = 400) -> np.ndarray:
    """Real-space finite-difference diagonalization with twisted boundaries.

    Independent of the plane-wave route; used as an oracle.
    """
    q = np.atleast_1d(np.asarray(q, dtype=float))
    h = np.pi / n_points
    u = np.arange(n_points) * h
    out = np.empty((len(q), n_bands))
    half = len(_D2_STENCIL) // 2
    for j, qj in enumerate(q):
        # Bloch phase across one period: psi(u + pi) = exp(i q pi) psi(u)
        phase = np.exp(1j * qj * np.pi)
        H = np.zeros((n_points, n_points), dtype=complex)
        for off, c in zip(range(-half, half + 1), _D2_STENCIL):
            for i in range(n_points):
                jj = i + off
                ph = 1.0
                if jj >= n_points:
                    jj -= n_points
                    ph = phase
                elif jj < 0:
                    jj += n_points
                    ph = np.conj(phase)
                H[i, jj] += -c / h ** 2 * ph
        H += np.diag(V * np.sin(u) ** 2)
        out[j] = np.linalg.eigvalsh(H)[:n_bands]
    return out


def position_grid(spec: LatticeSpec) -> np.ndarray:
    n = 2 * spec.n_periods * spec.points_per_period + 1
    half = spec.n_periods * TRAP_PERIOD
    return np.linspace(-half, half, n)


def _gauge_fixed(bands: BandStructure, band: int) -> np.ndarray:
    """Bloch coefficients with phases making the Wannier function real.

    Even bands: psi_q(0) real positive.  Odd bands: psi_q'(0) real positive.
    """
    c = bands.coeffs[:, :, band].astype(complex)
    k_pw = bands.q[:, None] + 2.0 * bands.m[None, :]
    if band % 2 == 0:
        ref = c.sum(axis=1)
    else:
        ref = 1j * (k_pw * c).sum(axis=1)
    if np.min(np.abs(ref)) < 1e-10:
        raise LatticeError(f"band {band}: Bloch gauge reference vanishes")
    return c * (np.abs(ref) / ref)[:, None]


def wannier_function(bands: BandStructure, band: int, x) -> np.ndarray:
    """Wannier function of ``band`` centred at x = 0, evaluated at ``x`` (units a).

    Not normalized; the caller normalizes on its quadrature grid.
    """
    c = _gauge_fixed(bands, band)
    u = K_TR * np.asarray(x, dtype=float)
    k_pw = bands.q[:, None] + 2.0 * bands.m[None, :]  # (n_q, n_pw)
    w = np.zeros(u.shape, dtype=complex)
    for j in range(len(bands.q)):
        w += np.exp(1j * np.multiply.outer(u, k_pw[j])) @ c[j]
    w /= len(bands.q)
    if np.max(np.abs(w.imag)) > 1e-8 * np.max(np.abs(w.real)):
        raise LatticeError(f"band {band}: Wannier function is not real after gauge fixing")
    return w.real


def _integrate(f: np.ndarray, x: np.ndarray) -> float:
    return float(simpson(f, x=x))


def build_wannier(bands: BandStructure, band_index: int, x: np.ndarray) -> np.ndarray:
    """Normalized, parity-definite Wannier function for one band on grid ``x``."""
    w = wannier_function(bands, band_index, x)
    w /= np.sqrt(_integrate(w * w, x))
    mirror = w[::-1]
    sign = 1.0 if band_index % 2 == 0 else -1.0
    if np.max(np.abs(w - sign * mirror)) > 1e-8 * np.max(np.abs(w)):
        raise LatticeError(f"band {band_index}: Wannier function lacks definite parity")
    return w


def build_wannier_pair(spec: LatticeSpec) -> WannierPair:
    """Solve the lattice and return the two lowest Wannier functions with band data."""
    bands = solve_band_structure(spec, n_bands=3)
    x = position_grid(spec)
    w_a = build_wannier(bands, 0, x)
    w_b = build_wannier(bands, 1, x)
    eps = bands.energies.mean(axis=0)
    wp = WannierPair(x_grid=x, w_a=w_a, w_b=w_b, eps_a=float(eps[0]), eps_b=float(eps[1]),
                     band_gap_min=float(bands.energies[:, 1].min() - bands.energies[:, 0].max()),
                     bands=bands, spec=spec)
    wp.t_a, wp.t_b = compute_tunneling(wp)
    return wp


def _apply_hamiltonian(w: np.ndarray, x: np.ndarray, V: float) -> np.ndarray:
    """-(d^2/du^2) w + V sin^2(u) w on a uniform grid, with u = k_tr x."""
    h = (x[1] - x[0]) * K_TR
    half = len(_D2_STENCIL) // 2
    padded = np.concatenate([np.zeros(half), w, np.zeros(half)])
    d2 = np.zeros_like(w)
    for i, c in enumerate(_D2_STENCIL):
        d2 += c * padded[i:i + len(w)]
    d2 /= h ** 2
    return -d2 + V * np.sin(K_TR * x) ** 2 * w


def compute_tunneling(wp: WannierPair) -> tuple[float, float]:
    """Nearest-neighbour tunneling t_alpha = -<w_i| H |w_{i+1}> in units of E_R.

    Uses finite differences on the sampled functions; the neighbour is obtained
    by an exact grid shift of one trap period.
    """
    x = wp.x_grid
    dx = x[1] - x[0]
    shift = int(round(TRAP_PERIOD / dx))
    if not np.isclose(shift * dx, TRAP_PERIOD) or shift >= len(x) // 2:
        raise ValueError("grid must span at least two neighbouring sites on a commensurate step")
    V = wp.spec.V_L_over_ER if wp.spec is not None else wp.bands.V
    out = []
    for w in (wp.w_a, wp.w_b):
        w_next = np.zeros_like(w)
        w_next[shift:] = w[:-shift]
        Hw = _apply_hamiltonian(w_next, x, V)
        out.append(-_integrate(w * Hw, x))
    return out[0], out[1]


def tunneling_from_bandwidth(bands: BandStructure) -> tuple[float, float]:
    """Tight-binding estimate |t| = bandwidth / 4 for the two lowest bands."""
    e = bands.energies
    return tuple(float((e[:, n].max() - e[:, n].min()) / 4.0) for n in (0, 1))


def compute_etas(wp: WannierPair, L: float, k: float = K_WG) -> EtaSet:
    """Overlap integrals that set the spin-motion coupling.

    eta0 = int sin(kx) w_a w_b dx and eta_{a,b} = int x sin(kx) w_{a,b}^2 dx,
    with the site centred on a node of sin(kx).
    """
    x = wp.x_grid
    s = np.sin(k * x)
    eta0 = _integrate(s * wp.w_a * wp.w_b, x)
    eta_a = _integrate(x * s * wp.w_a ** 2, x)
    eta_b = _integrate(x * s * wp.w_b ** 2, x)
    return EtaSet(eta0=eta0, eta_a=eta_a, eta_b=eta_b, L=float(L))


def compute_interaction_coefficients(wp: WannierPair, L: float, separation: int = 1,
                                     k: float = K_WG, kernel: bool = True,
                                     half_width: float = 3.0) -> dict[str, float]:
    """Two-dimensional overlap integrals V_a, V_b, V_ab, V'_ab, V_3ab, V_3ba.

    ``separation`` is the site distance |i - j|; the kernel is
    exp(-|x_i - x_j - x + x'| / L).  With ``kernel=False`` the exponential is
    replaced by 1 (the infinite-range limit).
    """
    x = wp.x_grid
    mask = np.abs(x) <= half_width + 1e-12
    x = x[mask]
    wa, wb = wp.w_a[mask], wp.w_b[mask]
    # Simpson weights on the (odd-length) uniform grid
    n = len(x)
    if n % 2 == 0:
        raise ValueError("quadrature grid must have an odd number of points")
    wq = np.ones(n)
    wq[1:-1:2] = 4.0
    wq[2:-1:2] = 2.0
    wq *= (x[1] - x[0]) / 3.0
    s = np.sin(k * x) * wq
    d = TRAP_PERIOD * separation
    if kernel:
        K = np.exp(-np.abs(d - x[:, None] + x[None, :]) / L)
    else:
        K = np.ones((n, n))

    def V(f, g):
        return float((s * f) @ K @ (s * g))

    return {
        "V_a": V(wa ** 2, wa ** 2),
        "V_b": V(wb ** 2, wb ** 2),
        "V_ab": V(wa ** 2, wb ** 2),
        "V_ab_prime": V(wa * wb, wa * wb),
        "V_3ab": V(wa ** 2, wa * wb),
        "V_3ba": V(wb ** 2, wb * wa),
    }


def harmonic_ground_state(x: np.ndarray, V: float) -> np.ndarray:
    """Normalized harmonic-oscillator ground state matching the well curvature."""
    u = K_TR * x
    psi = np.exp(-np.sqrt(V) * u ** 2 / 2.0)
    return psi / np.sqrt(_integrate(psi ** 2, x))


def coefficient_record(spec: LatticeSpec, wp: WannierPair | None = None) -> dict:
    """Machine-readable coefficient record (energies in E_R, lengths in a)."""
    if wp is None:
        wp = build_wannier_pair(spec)
    etas = compute_etas(wp, spec.L_over_a)
    return {
        "V_L_over_ER": spec.V_L_over_ER,
        "L_over_a": spec.L_over_a,
        "eta0": etas.eta0,
        "eta_a_over_a": etas.eta_a,
        "eta_b_over_a": etas.eta_b,
        "Delta_over_ER": wp.Delta,
        "t_a_over_ER": wp.t_a,
        "t_b_over_ER": wp.t_b,
    }


def write_coefficients(path, record: dict) -> None:
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2)


def read_coefficients(path) -> dict:
    with open(path) as fh:
        rec = json.load(fh)
    missing = {"eta0", "eta_a_over_a", "eta_b_over_a", "L_over_a"} - set(rec)
    if missing:
        raise ValueError(f"coefficient record missing fields: {sorted(missing)}")
    return rec
