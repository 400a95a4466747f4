"""Exact diagonalization on small chains: the reference for every MPS result."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from . import operators as ops
from .models import (QuantumParams, effective_params, sparse_effective_hamiltonian,
                     sparse_full_hamiltonian)
from .mps import MPO

MAX_DIM = 4 ** 10
DENSE_MAX = 4096


class EDError(RuntimeError):
    pass


@dataclass
class DenseModel:
    H: sp.csr_matrix
    N: int
    d: int
    local_charges: np.ndarray | None = None

    def __post_init__(self):
        if self.d ** self.N > MAX_DIM:
            raise EDError(f"dimension {self.d}^{self.N} exceeds the cap 4^10")

    @property
    def dim(self) -> int:
        return self.d ** self.N

    def charges(self) -> np.ndarray:
        """Total charge of every basis state."""
        q = np.zeros(self.d, int) if self.local_charges is None else self.local_charges
        tot = np.zeros(1, int)
        for _ in range(self.N):
            tot = (tot[:, None] + q[None, :]).ravel()
        return tot

    def sectors(self) -> list:
        return sorted(set(int(c) for c in np.unique(self.charges())))


def dense_from_mpo(mpo: MPO, N: int | None = None) -> DenseModel:
    """Contract an MPO into a sparse matrix (row = output index)."""
    N = mpo.N if N is None else N
    if N != mpo.N:
        raise EDError("N does not match the MPO length")
    d = mpo.d
    if d ** N > MAX_DIM:
        raise EDError(f"dimension {d}^{N} exceeds the cap 4^10")
    W0 = mpo.tensors[0]
    blocks = [sp.csr_matrix(W0[0, :, :, w]) for w in range(W0.shape[3])]
    for W in mpo.tensors[1:]:
        new = []
        for wr in range(W.shape[3]):
            acc = None
            for wl in range(W.shape[0]):
                local = W[wl, :, :, wr]
                if not np.any(local) or blocks[wl].nnz == 0:
                    continue
                term = sp.kron(blocks[wl], sp.csr_matrix(local), format="csr")
                acc = term if acc is None else acc + term
            new.append(acc if acc is not None else sp.csr_matrix((blocks[0].shape[0] * d,) * 2))
        blocks = new
    return DenseModel(blocks[0].tocsr(), N, d, mpo.local_charges)


def ground_state_exact(m: DenseModel, sector: int | None = None, tol: float = 1e-12):
    """Lowest eigenpair, optionally within a total-charge sector.

    Returns (energy, vector) with the vector embedded in the full space.
    """
    if sector is None:
        idx = np.arange(m.dim)
    else:
        idx = np.flatnonzero(m.charges() == sector)
        if len(idx) == 0:
            raise EDError(f"sector {sector} is empty")
    Hs = m.H[idx][:, idx]
    if len(idx) <= DENSE_MAX:
        w, V = np.linalg.eigh(Hs.toarray())
        e, v = float(w[0]), V[:, 0]
    else:
        try:
            w, V = eigsh(Hs, k=1, which="SA", tol=tol, maxiter=20 * len(idx))
        except ArpackNoConvergence as exc:
            r = np.nan
            if len(exc.eigenvalues):
                x = exc.eigenvectors[:, 0]
                r = float(np.linalg.norm(Hs @ x - exc.eigenvalues[0] * x))
            raise EDError(f"Lanczos did not converge (residual norm {r:.3e})") from exc
        e, v = float(w[0]), V[:, 0]
    full = np.zeros(m.dim, dtype=v.dtype)
    full[idx] = v
    return e, full


def ground_energy_by_sector(m: DenseModel) -> dict:
    return {S: ground_state_exact(m, S)[0] for S in m.sectors()}


def full_model(p: QuantumParams, variant: str = "main") -> DenseModel:
    return DenseModel(sparse_full_hamiltonian(p, variant), p.N, 4, ops.CHARGES_4)


def effective_model(g: float, h: float, N: int, Delta: float = 1.0, chi: float | None = None) -> DenseModel:
    ep = effective_params(g, Delta, chi)
    return DenseModel(sparse_effective_hamiltonian(ep, h, N), N, 2, ops.CHARGES_2)


def sw_scaling_check(g_list, Delta: float = 1.0, chi: float | None = None, h: float = 0.0,
                     N: int = 8, return_data: bool = False):
    """Slope of log|E_full - E_eff| against log g for the weak-coupling model.

    The full model's eta coefficients are chosen so that its chi matches the
    requested one.
    """
    g_list = np.asarray(g_list, float)
    if np.any(g_list <= 0) or np.any(g_list > 0.3 * Delta) or N > 8:
        raise ValueError("need 0 < g <= 0.3 Delta and N <= 8")
    base = QuantumParams(g=0.0, h=h, Delta=Delta, N=N)
    if chi is not None:
        base = replace(base, eta_a=chi * base.eta0 * base.L)
    chi = base.chi
    dev = []
    for g in g_list:
        p = replace(base, g=float(g))
        e_full = ground_state_exact(full_model(p))[0]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            e_eff = ground_state_exact(effective_model(g, h, N, Delta, chi))[0]
        dev.append(abs(e_full - e_eff))
    dev = np.array(dev)
    if np.any(dev < 1e-12):
        raise EDError("energy differences below 1e-12: increase the g range")
    slope = float(np.polyfit(np.log(g_list), np.log(dev), 1)[0])
    return (slope, dev) if return_data else slope
