"""Classically displaced atoms with quantum spins: the dimerization transition.

Atoms sit at ``x_i = 2ia + (-1)^i delta``.  For fixed ``delta`` the
nearest-neighbour spin chain is a dimerized XX chain, solved exactly with free
fermions; ``delta`` is then optimised variationally.  Lengths are in units of
``a`` (``k = pi/a``) and energies in whatever unit ``J``, ``V_L`` and ``h``
share (the CLI uses ``V_L = 1``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import quad
from scipy.special import ellipe, ellipeinc

K = np.pi  # waveguide wavenumber in units of 1/a
DIMER_THRESHOLD = 1e-4


@dataclass(frozen=True)
class ClassicalParams:
    J: float = 1.0
    L: float = 2.0
    V_L: float = 1.0
    h: float = 0.0
    N: int | None = None  # None -> thermodynamic limit
    a: float = 1.0

    def __post_init__(self):
        if self.J < 0:
            raise ValueError("J must be non-negative")
        if self.N is not None and (self.N < 2 or self.N % 2):
            raise ValueError("finite chains need an even number of atoms")


@dataclass(frozen=True)
class ClassicalSolution:
    delta_star: float
    energy_per_atom: float
    dimerized: bool
    T_S: float
    T_W: float


class BracketError(RuntimeError):
    def __init__(self, msg, scanned):
        super().__init__(msg)
        self.scanned = scanned


def couplings(delta, params: ClassicalParams):
    """Intra-dimer (strong) and inter-dimer (weak) exchange couplings."""
    delta = np.asarray(delta, dtype=float)
    a, L = params.a, params.L
    pre = params.J * np.sin(K * delta / a) ** 2
    J_S = pre * np.exp(-(2 * a - 2 * delta) / L)
    J_W = pre * np.exp(-(2 * a + 2 * delta) / L)
    return J_S, J_W


def dispersion(delta, params: ClassicalParams, q):
    J_S, J_W = couplings(delta, params)
    q = np.asarray(q, dtype=float)
    return np.sqrt(np.maximum(J_S ** 2 + J_W ** 2 + 2 * J_S * J_W * np.cos(q), 0.0))


def dispersion_closed_form(delta, params: ClassicalParams, q):
    """Same spectrum written through cosh(2 delta / L)."""
    a, L = params.a, params.L
    amp = params.J * math.exp(-2 * a / L) * np.sin(K * delta / a) ** 2
    return amp * np.sqrt(np.maximum(4 * np.cosh(2 * delta / L) ** 2 + 2 * (np.cos(q) - 1), 0.0))


def trap_energy(delta, params: ClassicalParams):
    return params.V_L / 2 * np.sin(K * np.asarray(delta) / (2 * params.a)) ** 2


def _fermi_momentum(J_S, J_W, h):
    """Largest |q| with eps_q > 2h (eps_q decreases with |q|); 0 if none."""
    if J_S + J_W <= 2 * h:
        return 0.0
    if J_W == 0.0 or abs(J_S - J_W) >= 2 * h:
        return math.pi
    # ratios keep tiny couplings from underflowing
    c = ((2 * h / J_S) * (2 * h / J_W) - J_S / J_W - J_W / J_S) / 2
    return math.acos(min(1.0, max(-1.0, c)))


def _interaction_thermo(delta: float, h: float, params: ClassicalParams) -> float:
    """(1/4pi) int_{eps_q > 2h} (2h - eps_q) dq, through incomplete elliptic integrals."""
    J_S, J_W = (float(v) for v in couplings(delta, params))
    qf = _fermi_momentum(J_S, J_W, h)
    if qf == 0.0:
        return 0.0
    # eps_q = (J_S + J_W) sqrt(1 - m sin^2(q/2)), m = 4 J_S J_W / (J_S + J_W)^2
    s = J_S + J_W
    m = 4 * (J_S / s) * (J_W / s)
    int_eps = 2 * s * 2 * ellipeinc(qf / 2, m)  # int_{-qf}^{qf} eps_q dq
    return (2 * h * 2 * qf - int_eps) / (4 * math.pi)


def _interaction_finite(delta: float, h: float, params: ClassicalParams) -> float:
    n_cells = params.N // 2
    q = 2 * np.pi * np.arange(n_cells) / n_cells
    eps = dispersion(delta, params, q)
    occ = eps > 2 * h
    return float(np.sum(2 * h - eps[occ])) / params.N


def energy_per_atom(delta, h: float | None = None, params: ClassicalParams = ClassicalParams()):
    """Ground-state energy per atom at dimerization ``delta`` and field ``h``.

    Normalized so that J = 0 gives exactly ``trap - h``; the momentum sum runs
    over the N/2 dimer momenta.
    """
    h = params.h if h is None else h
    scalar = np.ndim(delta) == 0
    deltas = np.atleast_1d(np.asarray(delta, dtype=float))
    inter = _interaction_finite if params.N is not None else _interaction_thermo
    out = np.array([trap_energy(d, params) - h + inter(d, h, params) for d in deltas])
    return float(out[0]) if scalar else out


def energy_per_atom_quadrature(delta: float, h: float, params: ClassicalParams) -> float:
    """Thermodynamic energy by direct numerical q-integration (oracle)."""
    def integrand(q):
        e = float(dispersion(delta, params, q))
        return min(2 * h - e, 0.0)
    val, _ = quad(integrand, -math.pi, math.pi, limit=200, epsabs=1e-14, epsrel=1e-12)
    return float(trap_energy(delta, params)) - h + val / (4 * math.pi)


def interaction_energy_h0(delta, params: ClassicalParams):
    """Zero-field interaction energy per atom in closed form.

    -(2 J e^{-2a/L} / pi) sin^2(k delta) cosh(2 delta/L) E(m), with the
    complete elliptic integral of the second kind at parameter
    m = 1 / cosh^2(2 delta / L) (modulus sech(2 delta / L)).
    """
    a, L = params.a, params.L
    c = np.cosh(2 * np.asarray(delta, dtype=float) / L)
    m = 1.0 / c ** 2
    if np.any((m < 0) | (m > 1)):
        raise ValueError("elliptic parameter outside [0, 1]")
    return -(2 * params.J * math.exp(-2 * a / L) / math.pi) * np.sin(K * np.asarray(delta) / a) ** 2 * c * ellipe(m)


def interaction_energy_quadrature(delta: float, params: ClassicalParams) -> float:
    val, _ = quad(lambda q: float(dispersion(delta, params, q)), -math.pi, math.pi,
                  epsabs=1e-15, epsrel=1e-13, limit=200)
    return -val / (4 * math.pi)


def golden_section(f, lo: float, hi: float, xtol: float) -> float:
    """Golden-section search for a minimum of ``f`` on [lo, hi]."""
    invphi = (math.sqrt(5) - 1) / 2
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > xtol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = f(d)
    return 0.5 * (lo + hi)


def _optimal_delta(p: ClassicalParams, n_grid: int, xtol: float) -> float:
    h, a = p.h, p.a
    grid = np.linspace(0.0, 0.5 * a, n_grid, endpoint=False)
    energies = energy_per_atom(grid, h, p)
    e0 = float(energies[0])
    i = int(np.argmin(energies))
    delta = 0.0
    if i > 0 and energies[i] < e0:
        lo = grid[i - 1]
        hi = grid[i + 1] if i + 1 < n_grid else 0.5 * a
        delta = golden_section(lambda d: energy_per_atom(d, h, p), lo, hi, xtol)
        if energy_per_atom(delta, h, p) > energies[i]:
            delta = float(grid[i])
        # the undisplaced configuration is always stationary: compare directly
        if energy_per_atom(delta, h, p) >= e0:
            delta = 0.0
    return delta


def minimize_dimerization(J: float, h: float, params: ClassicalParams = ClassicalParams(),
                          n_grid: int = 400, xtol: float = 1e-6) -> ClassicalSolution:
    """Optimal dimerization by grid scan plus golden-section refinement."""
    if J < 0 or h < 0:
        raise ValueError("J and h must be non-negative")
    p = replace(params, J=J, h=h)
    a = p.a
    delta = _optimal_delta(p, n_grid, xtol)
    e = float(energy_per_atom(delta, h, p))
    dimerized = delta > DIMER_THRESHOLD * a
    if h == 0.0:
        T_S, T_W = triplet_fractions(delta, p)
    else:
        T_S, T_W = triplet_fractions_filled_sea(delta, p, h=h)
    return ClassicalSolution(delta_star=delta, energy_per_atom=e, dimerized=dimerized, T_S=T_S, T_W=T_W)


def critical_coupling(h: float, params: ClassicalParams = ClassicalParams(), tol: float | None = None,
                      J_max: float | None = None) -> float:
    """Smallest J (bisection) at which the optimal configuration dimerizes."""
    if h < 0:
        raise ValueError("h must be non-negative")
    V = params.V_L
    tol = 1e-4 * V if tol is None else tol
    J_max = 64 * V if J_max is None else J_max

    def dimerized(J):
        return _optimal_delta(replace(params, J=J, h=h), 400, 1e-6) > DIMER_THRESHOLD * params.a

    lo, hi = 0.0, 0.5 * V
    scanned = []
    while not dimerized(hi):
        scanned.append(hi)
        lo, hi = hi, 2 * hi
        if hi > J_max:
            raise BracketError(f"no dimerization found for J <= {J_max}", scanned)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if dimerized(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _ratio_integrals(r: float):
    """I_S and I_W at J_W / J_S = r (the sin^2 prefactor cancels)."""
    if r >= 1.0 - 1e-14:
        return 1 / math.pi, 1 / math.pi

    def e(q):
        return math.sqrt(1 + r * r + 2 * r * math.cos(q))

    I_S = quad(lambda q: (1 + r * math.cos(q)) / (2 * e(q)), -math.pi, math.pi, epsabs=1e-14)[0]
    I_W = quad(lambda q: ((1 + r * math.cos(q)) * math.cos(q) + r * math.sin(q) ** 2) / (2 * e(q)),
               -math.pi, math.pi, epsabs=1e-14)[0]
    return I_S / (2 * math.pi), I_W / (2 * math.pi)


def triplet_fractions(delta: float, params: ClassicalParams = ClassicalParams()):
    """Zero-field triplet fractions (T_S, T_W) = ((1/2 + I_S)^2, (1/2 + I_W)^2).

    At delta = 0 the couplings vanish but their ratio tends to 1, so the
    limiting value (1/2 + 1/pi)^2 is returned.
    """
    r = math.exp(-4 * abs(delta) / params.L)
    I_S, I_W = _ratio_integrals(r)
    if delta < 0:
        I_S, I_W = I_W, I_S
    return (0.5 + I_S) ** 2, (0.5 + I_W) ** 2


def ring_correlations(delta: float, params: ClassicalParams, h: float, N: int) -> np.ndarray:
    """Ground-state <c_i^dag c_j> of the dimerized ring with N sites.

    At delta = 0 the couplings are replaced by their (equal) limit so the
    result is the XX filled sea.
    """
    J_S, J_W = (float(v) for v in couplings(delta, params))
    if J_S == 0.0:
        J_S = J_W = 1.0
        h = 0.0
    Hsp = np.zeros((N, N))
    for i in range(N):
        j = (i + 1) % N
        t = J_S if i % 2 == 0 else J_W
        Hsp[i, j] = Hsp[j, i] = -t
    Hsp += 2 * h * np.eye(N)
    e, v = np.linalg.eigh(Hsp)
    occ = v[:, e < -1e-12]
    return occ.conj() @ occ.T


def _bond_triplet(C: np.ndarray, i: int, j: int) -> float:
    n_t = 0.5 * (C[i, i] + C[j, j] + C[i, j] + C[j, i])
    n_s = 0.5 * (C[i, i] + C[j, j] - C[i, j] - C[j, i])
    st = 0.5 * (C[i, i] + C[i, j] - C[j, i] - C[j, j])
    return float(np.real(n_t - (n_s * n_t - abs(st) ** 2)))


def triplet_fractions_filled_sea(delta: float, params: ClassicalParams, h: float = 0.0,
                                 N: int = 402):
    """Triplet fractions at any field from the free-fermion correlation matrix."""
    C = ring_correlations(delta, params, h, N)
    mid = (N // 4) * 2
    return _bond_triplet(C, mid, mid + 1), _bond_triplet(C, mid + 1, mid + 2)
