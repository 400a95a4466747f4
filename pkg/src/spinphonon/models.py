"""Hamiltonians of the spin-motion chain as MPOs and as sparse matrices.

Energies are in units of the band splitting Delta unless a different Delta is
passed.  Site basis and operator conventions live in :mod:`operators`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from . import operators as ops
from .mps import MPO, mpo_from_terms

# Wannier overlaps at V_L = 20 E_R, L = 2a (see lattice.compute_etas)
DEFAULT_ETA0 = 0.5398797557541557
DEFAULT_ETA_A = 0.12464454390619664
DEFAULT_ETA_B = 0.3245859083466878
DEFAULT_L = 2.0

VARIANTS = ("main", "appendix")


@dataclass(frozen=True)
class QuantumParams:
    g: float
    h: float
    Delta: float = 1.0
    eta0: float = DEFAULT_ETA0
    eta_a: float = DEFAULT_ETA_A
    eta_b: float = DEFAULT_ETA_B
    L: float = DEFAULT_L
    a: float = 1.0
    N: int = 62

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be at least 2")
        if self.Delta <= 0:
            raise ValueError("Delta must be positive")
        if self.eta0 == 0 or self.L <= 0:
            raise ValueError("eta0 must be nonzero and L positive")

    @classmethod
    def from_physical_J(cls, J: float, **kw) -> "QuantumParams":
        """Scaled coupling g = J exp(-2a/L) eta0^2 / 2."""
        p = cls(g=0.0, **kw)
        return replace(p, g=J * np.exp(-2 * p.a / p.L) * p.eta0 ** 2 / 2)

    @property
    def chi(self) -> float:
        return self.eta_a / (self.eta0 * self.L)

    @property
    def c_sum(self) -> float:
        """(eta_a + eta_b) / (2 L eta0)."""
        return (self.eta_a + self.eta_b) / (2 * self.L * self.eta0)

    @property
    def c_diff(self) -> float:
        """(eta_b - eta_a) / (2 L eta0)."""
        return (self.eta_b - self.eta_a) / (2 * self.L * self.eta0)


@dataclass(frozen=True)
class EffectiveParams:
    J1: float
    J2: float
    chi: float
    g: float
    Delta: float


def effective_params(g: float, Delta: float = 1.0, chi: float | None = None) -> EffectiveParams:
    """Second-order couplings J1 = g^2(1+4chi^2)/(2 Delta), J2 = g^2 chi^2 / Delta."""
    if chi is None:
        chi = DEFAULT_ETA_A / (DEFAULT_ETA0 * DEFAULT_L)
    if abs(g) > 0.3 * Delta:
        warnings.warn(f"g/Delta = {g / Delta:.3g} is outside the weak-coupling regime (<= 0.3)",
                      stacklevel=2)
    return EffectiveParams(g * g * (1 + 4 * chi * chi) / (2 * Delta), g * g * chi * chi / Delta,
                           chi, g, Delta)


# ---------------------------------------------------------------- bond terms

def full_bond_terms(p: QuantumParams, variant: str = "main"):
    """Two-site products (coef, A_i, B_{i+1}) of 4x4 operators making up one bond.

    The spin-motion bracket is regrouped so that each spin-flip direction
    needs two MPO channels.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    X, Z, I = ops.tsigma_x, ops.tsigma_z, ops.I4
    c1, c2 = p.c_sum, p.c_diff
    terms = []
    for up, dn in ((ops.sigma_p, ops.sigma_m), (ops.sigma_m, ops.sigma_p)):
        terms.append((2 * p.g, X @ up, (X - c1 * I - c2 * Z) @ dn))
        if variant == "main":
            terms.append((2 * p.g, (c1 * I + c2 * Z) @ up, X @ dn))
        else:
            terms.append((2 * p.g, up, (c1 * X + c2 * X @ Z) @ dn))
    return terms


def _onsite_full(p):
    return p.Delta * ops.tsigma_z + p.h * ops.sigma_z


def build_full_mpo(p: QuantumParams, variant: str = "main") -> MPO:
    """MPO of the two-band spin-motion chain with open ends.

    ``variant='appendix'`` uses the alternative ordering of the last bracket
    term; that operator is not Hermitian and is flagged accordingly.
    """
    on = _onsite_full(p)
    nn = [(np.full(p.N - 1, c), A, B) for c, A, B in full_bond_terms(p, variant)]
    return mpo_from_terms(p.N, 4, lambda k: on, nn, local_charges=ops.CHARGES_4,
                          hermitian=(variant == "main"), name=f"full[{variant}]")


def build_effective_mpo(ep: EffectiveParams, h: float, N: int) -> MPO:
    """Spin-only (d = 2) MPO of the weak-coupling model, constants kept verbatim."""
    def onsite(k):
        shift = -ep.Delta - (ep.J1 if k < N - 1 else 0.0)
        return h * ops.sz + shift * np.eye(2)

    nn = [(np.full(N - 1, ep.J1), ops.sz, ops.sz)]
    nnn = [(np.full(N - 2, 2 * ep.J2), ops.sp, ops.sm), (np.full(N - 2, 2 * ep.J2), ops.sm, ops.sp)]
    return mpo_from_terms(N, 2, onsite, nn, nnn, local_charges=ops.CHARGES_2, name="effective")


def build_hplus_mpo(g: float, h: float, Delta: float, N: int) -> MPO:
    """XX chain of composite tau flips on the full four-state site space."""
    on = (Delta + h) * ops.tau_z
    nn = [(np.full(N - 1, 2 * g), ops.tau_p, ops.tau_m), (np.full(N - 1, 2 * g), ops.tau_m, ops.tau_p)]
    return mpo_from_terms(N, 4, lambda k: on, nn, local_charges=ops.CHARGES_4, name="hplus")


def build_subchain_mpo(ep: EffectiveParams, h: float, n: int) -> MPO:
    """XX model of the melting subchain in the effective field h - 2 J1."""
    on = (h - 2 * ep.J1) * ops.sz
    nn = [(np.full(n - 1, 2 * ep.J2), ops.sp, ops.sm), (np.full(n - 1, 2 * ep.J2), ops.sm, ops.sp)]
    return mpo_from_terms(n, 2, lambda k: on, nn, local_charges=ops.CHARGES_2, name="subchain_xx")


def build_model_mpo(model: str, p: QuantumParams, variant: str = "main") -> MPO:
    if model == "full":
        return build_full_mpo(p, variant)
    if model == "effective":
        return build_effective_mpo(effective_params(p.g, p.Delta, p.chi), p.h, p.N)
    if model == "hplus":
        return build_hplus_mpo(p.g, p.h, p.Delta, p.N)
    if model == "subchain_xx":
        return build_subchain_mpo(effective_params(p.g, p.Delta, p.chi), p.h, p.N)
    raise ValueError(f"unknown model {model!r}")


# ---------------------------------------------------------------- weak coupling

def weak_coupling_boundaries(ep: EffectiveParams):
    """(h_lower, h_upper, h_crit) of the subchain picture."""
    return 2 * (ep.J1 - ep.J2), 2 * (ep.J1 + ep.J2), ep.g ** 2 / ep.Delta


class DegenerateBranchError(ValueError):
    def __init__(self, msg, step_value):
        super().__init__(msg)
        self.step_value = step_value


def magnetization_weak(h: float, ep: EffectiveParams) -> float:
    """Per-atom magnetization -1/2 + arccos((h - 2 J1)/(2 J2)) / (2 pi), clamped."""
    if ep.J2 == 0:
        step = 0.0 if h < 2 * ep.J1 else -0.5
        if h != 2 * ep.J1:
            raise DegenerateBranchError("J2 = 0: magnetization is a step function", step)
        return step
    x = np.clip((h - 2 * ep.J1) / (2 * ep.J2), -1.0, 1.0)
    return float(-0.5 + np.arccos(x) / (2 * np.pi))


# ---------------------------------------------------------------- sparse assembly

def site_operator(N: int, site: int, op) -> sp.csr_matrix:
    """op acting on ``site`` of an N-site chain (sparse, dimension d^N)."""
    d = op.shape[0]
    left = sp.identity(d ** site, format="csr")
    right = sp.identity(d ** (N - site - 1), format="csr")
    return sp.kron(sp.kron(left, sp.csr_matrix(op)), right, format="csr")


def _check_size(N, d):
    if d ** N > 4 ** 10:
        raise ValueError(f"dense assembly capped at d^N <= 4^10 (got {d}^{N})")


def sparse_full_hamiltonian(p: QuantumParams, variant: str = "main", parts=("band", "field", "int0", "int1")):
    """Direct assembly from global operator products (independent of the MPO builder)."""
    N = p.N
    _check_size(N, 4)
    dim = 4 ** N
    op = {name: [site_operator(N, i, m) for i in range(N)] for name, m in
          (("X", ops.tsigma_x), ("Z", ops.tsigma_z), ("sp", ops.sigma_p), ("sm", ops.sigma_m),
           ("sz", ops.sigma_z))}
    X, Z = op["X"], op["Z"]
    H = sp.csr_matrix((dim, dim))
    for i in range(N):
        if "band" in parts:
            H = H + p.Delta * Z[i]
        if "field" in parts:
            H = H + p.h * op["sz"][i]
    c1, c2 = p.c_sum, p.c_diff
    for i in range(N - 1):
        flip = op["sp"][i] @ op["sm"][i + 1] + op["sm"][i] @ op["sp"][i + 1]
        motion = sp.csr_matrix((dim, dim))
        if "int0" in parts:
            motion = motion + X[i] @ X[i + 1]
        if "int1" in parts:
            if variant == "main":
                third = X[i] @ Z[i + 1] - Z[i] @ X[i + 1]
            else:
                third = X[i] @ Z[i + 1] - X[i + 1] @ Z[i + 1]
            motion = motion - (c1 * (X[i] - X[i + 1]) + c2 * third)
        H = H + 2 * p.g * (motion @ flip)
    return H.tocsr()


def sparse_effective_hamiltonian(ep: EffectiveParams, h: float, N: int) -> sp.csr_matrix:
    _check_size(N, 2)
    Sz = [site_operator(N, i, ops.sz) for i in range(N)]
    Sp = [site_operator(N, i, ops.sp) for i in range(N)]
    Sm = [site_operator(N, i, ops.sm) for i in range(N)]
    dim = 2 ** N
    I = sp.identity(dim, format="csr")
    H = -N * ep.Delta * I
    for i in range(N):
        H = H + h * Sz[i]
    for i in range(N - 1):
        H = H + ep.J1 * (Sz[i] @ Sz[i + 1] - I)
    for i in range(1, N - 1):
        H = H + 2 * ep.J2 * (Sp[i - 1] @ Sm[i + 1] + Sm[i - 1] @ Sp[i + 1])
    return H.tocsr()


def _sparse_xx(N, on_coef, zop, pop, mop, hop):
    H = sp.csr_matrix((4 ** N, 4 ** N))
    Z = [site_operator(N, i, zop) for i in range(N)]
    P = [site_operator(N, i, pop) for i in range(N)]
    M = [site_operator(N, i, mop) for i in range(N)]
    for i in range(N):
        H = H + on_coef * Z[i]
    for i in range(N - 1):
        H = H + hop * (P[i] @ M[i + 1] + M[i] @ P[i + 1])
    return H.tocsr()


def sparse_hplus_hamiltonian(g, h, Delta, N) -> sp.csr_matrix:
    _check_size(N, 4)
    return _sparse_xx(N, Delta + h, ops.tau_z, ops.tau_p, ops.tau_m, 2 * g)


def decompose_commuting_part(p: QuantumParams, N: int | None = None) -> dict:
    """Dense H', H+, H-, H+-, H'' and the commutator norms with O = sum sigma~^z sigma^z."""
    N = p.N if N is None else N
    if N > 8:
        raise ValueError("decomposition is dense; N <= 8")
    p = replace(p, N=N)
    Hp = sparse_hplus_hamiltonian(p.g, p.h, p.Delta, N)
    Hm = _sparse_xx(N, -p.Delta + p.h, ops.gamma_z, ops.gamma_p, ops.gamma_m, 2 * p.g)
    Hpm = sp.csr_matrix(Hp.shape)
    for i in range(N - 1):
        tp, tm = site_operator(N, i, ops.tau_p), site_operator(N, i, ops.tau_m)
        gp, gm = site_operator(N, i, ops.gamma_p), site_operator(N, i, ops.gamma_m)
        tp1, tm1 = site_operator(N, i + 1, ops.tau_p), site_operator(N, i + 1, ops.tau_m)
        gp1, gm1 = site_operator(N, i + 1, ops.gamma_p), site_operator(N, i + 1, ops.gamma_m)
        Hpm = Hpm + 2 * p.g * (tp @ gm1 + gm @ tp1 + gp @ tm1 + tm @ gp1)
    Hprime = Hp + Hm + Hpm
    Hfull = sparse_full_hamiltonian(p)
    Hpp = Hfull - Hprime
    O = sum(site_operator(N, i, ops.parity_O) for i in range(N))
    comm = lambda A: sp.linalg.norm(A @ O - O @ A) if A.nnz else 0.0  # noqa: E731
    return {
        "H_prime": Hprime.toarray(), "H_plus": Hp.toarray(), "H_minus": Hm.toarray(),
        "H_plusminus": Hpm.toarray(), "H_second": Hpp.toarray(), "H_full": Hfull.toarray(),
        "comm_prime": float(comm(Hprime.tocsr())), "comm_second": float(comm(Hpp.tocsr())),
        "O": O.toarray(),
    }
