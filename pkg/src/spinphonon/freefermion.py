"""Exact solution of the open XX chain of composite flips.

Through a Jordan-Wigner transformation, H+ = sum (Delta+h) tau^z + 2g (tau^+ tau^- + h.c.)
becomes free fermions with one-particle energies
eps_m = 2(Delta+h) + 4g cos(pi m/(N+1)), m = 1..N, on top of -N(Delta+h).
"""

from __future__ import annotations

import numpy as np


def hplus_modes(g: float, h: float, Delta: float, N: int) -> np.ndarray:
    m = np.arange(1, N + 1)
    return 2 * (Delta + h) + 4 * g * np.cos(np.pi * m / (N + 1))


def mode_functions(N: int) -> np.ndarray:
    """phi[m-1, i] = sqrt(2/(N+1)) sin(pi m (i+1)/(N+1)), orthonormal open-chain modes."""
    m = np.arange(1, N + 1)[:, None]
    i = np.arange(1, N + 1)[None, :]
    return np.sqrt(2 / (N + 1)) * np.sin(np.pi * m * i / (N + 1))


def hplus_ground_energy(g: float, h: float, Delta: float, N: int) -> float:
    eps = hplus_modes(g, h, Delta, N)
    return float(-N * (Delta + h) + np.sum(eps[eps < 0]))


def hplus_flip_count(g: float, h: float, Delta: float, N: int) -> int:
    """Number of composite flips (fermions) in the H+ ground state."""
    return int(np.sum(hplus_modes(g, h, Delta, N) < 0))


def hplus_magnetization(g: float, h: float, Delta: float, N: int) -> float:
    """Per-atom M_z = (1/2N) sum sigma^z = (-N + 2 n_flips) / (2N)."""
    return (-N + 2 * hplus_flip_count(g, h, Delta, N)) / (2 * N)


def instability_field(g: float, Delta: float) -> float:
    """Bulk threshold below which the polarized state of H+ is unstable."""
    return 2 * g - Delta


def occupied_modes(g, h, Delta, N, n_particles=None) -> np.ndarray:
    eps = hplus_modes(g, h, Delta, N)
    order = np.argsort(eps, kind="stable")
    n = int(np.sum(eps < 0)) if n_particles is None else n_particles
    return order[:n]


def correlation_matrix(N: int, occupied) -> np.ndarray:
    """C[i, j] = <c_i^dag c_j> of the Slater determinant filling the given modes."""
    phi = mode_functions(N)[np.asarray(occupied, int)]
    return phi.T @ phi


def flip_correlation(C: np.ndarray, i: int, j: int) -> float:
    """<tau^+_i tau^-_j> (i < j) from the fermion correlation matrix.

    The Jordan-Wigner string turns the transverse correlator into a
    determinant of G = 2C - 1 restricted to rows i..j-1 and columns i+1..j.
    """
    if j <= i:
        raise ValueError("need i < j")
    G = 2 * C - np.eye(len(C))
    sub = G[i:j, i + 1:j + 1]
    return 0.5 * float(np.linalg.det(sub))


def density_correlation(C: np.ndarray, i: int, j: int) -> float:
    """Connected <tau^z_i tau^z_j> = -4 |C_ij|^2 for i != j (Wick)."""
    return -4.0 * float(C[i, j] ** 2)
