"""Two-site finite DMRG with U(1) block structure.

Each run works in one total-charge sector (sum of sigma^z); the effective
two-site Hamiltonian is applied blockwise, which keeps bond dimension 100-140
tractable on a single core.  Without a charge, everything collapses to a
single block and the same code runs unblocked.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .mps import (MPO, MPS, MPSError, allowed_bond_charges, env_left, env_right, init_mps,
                  local_expectations, mpo_is_hermitian, split_blocks)

log = logging.getLogger(__name__)

__all__ = ["DmrgConfig", "DmrgReport", "DmrgError", "NonHermitianError", "dmrg_ground_state",
           "dmrg_sector", "lanczos_ground"]


class DmrgError(RuntimeError):
    def __init__(self, msg, site=None):
        super().__init__(msg if site is None else f"{msg} (site {site})")
        self.site = site


class NonHermitianError(ValueError):
    pass


@dataclass(frozen=True)
class DmrgConfig:
    D: int = 100
    dE_tol: float = 1e-7
    max_sweeps: int = 6
    D_retry: int = 140
    extra_sweeps: int = 4
    seed: int = 0
    D_init: int = 16
    lanczos_tol: float = 1e-9
    svd_cutoff: float = 1e-10
    check_hermitian: bool = True
    scan_all_max_N: int = 12

    def __post_init__(self):
        if self.D < 1 or self.D_retry < self.D:
            raise ValueError("need D >= 1 and D_retry >= D")
        if self.dE_tol <= 0:
            raise ValueError("dE_tol must be positive")
        if self.max_sweeps < 1 or self.extra_sweeps < 0:
            raise ValueError("max_sweeps >= 1 and extra_sweeps >= 0 required")


@dataclass
class DmrgReport:
    energy_per_sweep: list
    final_energy: float
    converged: bool
    bond_dim_used: int
    truncation_error_max: float
    sweeps: int = 0
    escalated: bool = False
    sector: int | None = None
    sector_energies: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def as_dict(self) -> dict:
        return {
            "energy_per_sweep": [float(e) for e in self.energy_per_sweep],
            "final_energy": float(self.final_energy), "converged": bool(self.converged),
            "bond_dim_used": int(self.bond_dim_used),
            "truncation_error_max": float(self.truncation_error_max), "sweeps": self.sweeps,
            "escalated": self.escalated, "sector": self.sector,
            "sector_energies": {str(k): float(v) for k, v in self.sector_energies.items()},
            "wall_time": self.wall_time,
        }


# ---------------------------------------------------------------- eigensolver

def lanczos_ground(matvec, v0, tol=1e-9, krylov=64, max_restarts=4, resid_tol=1e-6):
    """Lowest eigenpair of a Hermitian operator, started from ``v0``.

    Lanczos with full reorthogonalization.  A Krylov space stops growing once
    the lowest Ritz value changes by less than tol * max(1, |E|) between steps
    (or its residual estimate drops below that), and is restarted from the
    Ritz vector at most ``max_restarts`` times.  A stalled step also needs the
    residual below resid_tol * max(1, |E|).  A Krylov space that ends with
    the Ritz value still stalled is not restarted: the residual has reached a
    floor and further cycles would not lower the energy.  Stopping on the Ritz value
    keeps clustered low-lying spectra cheap; the remaining error is removed by
    later sweeps.  Tiny problems are diagonalized densely.  Returns
    (E, v, residual_estimate).
    """
    n = v0.size
    if n <= 48:
        cols = np.eye(n, dtype=v0.dtype)
        Hd = np.column_stack([matvec(cols[:, k]) for k in range(n)])
        Hd = (Hd + Hd.conj().T) / 2
        w, V = np.linalg.eigh(Hd)
        return float(w[0]), V[:, 0], 0.0
    nrm = np.linalg.norm(v0)
    if nrm == 0 or not np.isfinite(nrm):
        raise DmrgError("invalid starting vector for Lanczos")
    v = v0 / nrm
    m_max = min(krylov, n)
    E, x, resid = np.nan, v, np.inf
    for _ in range(max_restarts + 1):
        V = np.empty((m_max, n), dtype=v.dtype)
        alpha, beta = [], []
        V[0] = v
        w = matvec(v)
        theta_old = np.inf
        converged = False
        for m in range(m_max):
            a = float(np.real(np.vdot(V[m], w)))
            alpha.append(a)
            w = w - V[:m + 1].T @ (V[:m + 1].conj() @ w)
            w = w - V[:m + 1].T @ (V[:m + 1].conj() @ w)
            b = float(np.linalg.norm(w))
            if m == 0:
                theta, y = np.array([a]), np.ones((1, 1))
            else:
                theta, y = eigh_tridiagonal(np.array(alpha), np.array(beta),
                                            select="i", select_range=(0, 0))
            E = float(theta[0])
            if not np.isfinite(E):
                raise DmrgError("Lanczos produced a non-finite eigenvalue")
            resid = abs(b * y[-1, 0])
            scale = tol * max(1.0, abs(E))
            stalled = m >= 2 and abs(theta_old - E) <= scale
            if resid <= scale or b < 1e-13 or (stalled and resid <= resid_tol * max(1.0, abs(E))):
                converged = True
                break
            theta_old = E
            if m + 1 < m_max:
                beta.append(b)
                V[m + 1] = w / b
                w = matvec(V[m + 1])
        k = len(alpha)
        x = y[:, 0] @ V[:k]
        x = x / np.linalg.norm(x)
        if converged or stalled:
            break
        v = x
    return E, x, resid


# ---------------------------------------------------------------- two-site operator

class _TwoSite:
    """Blocked effective Hamiltonian on a two-site wavefunction theta[(a s1), (s2 b)]."""

    def __init__(self, Lenv, W1, W2, Renv, ql, qr, qW):
        Dl, nw0, _ = Lenv.shape
        d = W1.shape[1]
        nw = W1.shape[3]
        Dr = Renv.shape[0]
        LW = np.tensordot(Lenv, W1, axes=(1, 0)).transpose(0, 2, 4, 1, 3).reshape(Dl * d, nw, Dl * d)
        WR = np.tensordot(W2, Renv, axes=(3, 1)).transpose(1, 3, 0, 2, 4).reshape(d * Dr, nw, d * Dr)
        self.sectors = [int(c) for c in np.intersect1d(ql, qr)]
        self.rows = {c: np.flatnonzero(ql == c) for c in self.sectors}
        self.cols = {c: np.flatnonzero(qr == c) for c in self.sectors}
        self.shapes = {c: (len(self.rows[c]), len(self.cols[c])) for c in self.sectors}
        self.offsets = {}
        off = 0
        for c in self.sectors:
            self.offsets[c] = off
            off += self.shapes[c][0] * self.shapes[c][1]
        self.size = off
        self.terms = []
        present = set(self.sectors)
        for dq in np.unique(qW):
            ws = np.flatnonzero(qW == dq)
            for cin in self.sectors:
                cout = cin + int(dq)
                if cout not in present:
                    continue
                Lb = LW[np.ix_(self.rows[cout], ws, self.rows[cin])]
                Rb = WR[np.ix_(self.cols[cout], ws, self.cols[cin])]
                sel = (np.abs(Lb).max(axis=(0, 2), initial=0) > 0) & \
                      (np.abs(Rb).max(axis=(0, 2), initial=0) > 0)
                if not sel.any():
                    continue
                Ls = np.ascontiguousarray(Lb[:, sel, :].transpose(1, 0, 2))
                k, m, mp = int(sel.sum()), Rb.shape[2], Rb.shape[0]
                Rm = np.ascontiguousarray(Rb[:, sel, :].transpose(1, 2, 0).reshape(k * m, mp))
                self.terms.append((cin, cout, Ls, Rm))
        self.dtype = np.result_type(LW.dtype, WR.dtype)

    def pack(self, theta):
        out = np.empty(self.size, dtype=np.result_type(theta.dtype, self.dtype))
        for c in self.sectors:
            o = self.offsets[c]
            n, m = self.shapes[c]
            out[o:o + n * m] = theta[np.ix_(self.rows[c], self.cols[c])].ravel()
        return out

    def block(self, x, c):
        o = self.offsets[c]
        n, m = self.shapes[c]
        return x[o:o + n * m].reshape(n, m)

    def matvec(self, x):
        y = np.zeros(self.size, dtype=np.result_type(x.dtype, self.dtype))
        for cin, cout, Ls, Rm in self.terms:
            X = self.block(x, cin)
            T = np.matmul(Ls, X)  # k n' m
            k, n2, m = T.shape
            Y = T.transpose(1, 0, 2).reshape(n2, k * m) @ Rm
            o = self.offsets[cout]
            y[o:o + Y.size] += Y.ravel()
        return y


# ---------------------------------------------------------------- engine

class _Engine:
    def __init__(self, H: MPO, psi: MPS, cfg: DmrgConfig, charged: bool):
        self.H, self.psi, self.cfg = H, psi, cfg
        self.N = H.N
        self.qW = H.bond_charges() if charged else \
            [np.zeros(1, int)] + [np.zeros(W.shape[3], int) for W in H.tensors]
        psi.canonicalize(0)
        self.L = [None] * (self.N + 1)
        self.R = [None] * (self.N + 1)
        self.L[0] = np.ones((1, 1, 1))
        self.R[self.N] = np.ones((1, 1, 1))
        for k in range(self.N - 1, 1, -1):
            self.R[k] = env_right(self.R[k + 1], psi.tensors[k], H.tensors[k])

    def optimize(self, i: int, direction: str, D: int):
        psi, H = self.psi, self.H
        A, B = psi.tensors[i], psi.tensors[i + 1]
        Dl, d, _ = A.shape
        Dr = B.shape[2]
        q = psi.local_charges
        ql = (psi.charges[i][:, None] + q[None, :]).ravel()
        qr = (psi.charges[i + 2][None, :] - q[:, None]).ravel()
        op = _TwoSite(self.L[i], H.tensors[i], H.tensors[i + 1], self.R[i + 2], ql, qr,
                      self.qW[i + 1])
        if op.size == 0:
            raise DmrgError("empty symmetry sector in two-site problem", site=i)
        theta = np.tensordot(A, B, axes=(2, 0)).reshape(Dl * d, d * Dr)
        x0 = op.pack(theta)
        if not np.any(x0):
            x0 = np.random.default_rng(self.cfg.seed + i).standard_normal(op.size)
        try:
            E, x, _ = lanczos_ground(op.matvec, x0, tol=self.cfg.lanczos_tol)
        except (DmrgError, np.linalg.LinAlgError) as exc:
            raise DmrgError(f"local eigensolver failed: {exc}", site=i) from exc
        blocks = {c: (op.rows[c], op.cols[c], op.block(x, c)) for c in op.sectors}
        U, S, V, qb, disc = split_blocks(None, ql, qr, max_dim=D, cutoff=self.cfg.svd_cutoff,
                                         blocks=blocks)
        if direction == "right":
            psi.tensors[i] = U.reshape(Dl, d, -1)
            psi.tensors[i + 1] = (S[:, None] * V).reshape(-1, d, Dr)
            psi.charges[i + 1] = qb
            psi.center = i + 1
            self.L[i + 1] = env_left(self.L[i], psi.tensors[i], H.tensors[i])
        else:
            psi.tensors[i] = (U * S[None, :]).reshape(Dl, d, -1)
            psi.tensors[i + 1] = V.reshape(-1, d, Dr)
            psi.charges[i + 1] = qb
            psi.center = i
            self.R[i + 1] = env_right(self.R[i + 2], psi.tensors[i + 1], H.tensors[i + 1])
        return E, disc

    def sweep(self, D: int):
        trunc = 0.0
        E = np.nan
        for i in range(self.N - 1):
            E, t = self.optimize(i, "right", D)
            trunc = max(trunc, t)
        e_half = E
        for i in range(self.N - 2, -1, -1):
            E, t = self.optimize(i, "left", D)
            trunc = max(trunc, t)
        return e_half, E, trunc


def _is_charged(H: MPO) -> bool:
    if H.local_charges is None or not np.any(H.local_charges):
        return False
    try:
        H.bond_charges()
    except MPSError:
        return False
    return True


def _run(H: MPO, psi: MPS, cfg: DmrgConfig, charged: bool, sector) -> tuple:
    t0 = time.perf_counter()
    eng = _Engine(H, psi, cfg, charged)
    D = cfg.D
    energies, converged, escalated = [], False, False
    trunc_last = 0.0
    prev = None
    n_total = cfg.max_sweeps + cfg.extra_sweeps
    for s in range(n_total):
        if s == cfg.max_sweeps:
            if converged:
                break
            D, escalated = cfg.D_retry, True
            log.info("escalating bond dimension to %d", D)
        e_half, e_end, trunc_last = eng.sweep(D)
        scale = max(abs(e_end), 1e-300)
        changes = [abs(e_end - e_half) / scale]
        if prev is not None:
            changes.append(abs(prev - e_half) / scale)
        converged = max(changes) < cfg.dE_tol
        energies.append(e_end)
        prev = e_end
        log.debug("sweep %d D=%d E=%.12f dE=%.2e trunc=%.2e", s + 1, D, e_end, max(changes),
                  trunc_last)
        if converged:
            break
    psi = eng.psi
    psi.canonicalize(0)
    report = DmrgReport(energies, energies[-1], converged, max(psi.bond_dims), trunc_last,
                        len(energies), escalated, sector, {}, time.perf_counter() - t0)
    return psi, report


def allowed_sectors(H: MPO) -> list:
    q = H.local_charges
    reach = np.array([0])
    for _ in range(H.N):
        reach = np.unique((reach[:, None] + np.unique(q)[None, :]).ravel())
    return [int(c) for c in reach]


def dmrg_sector(H: MPO, sector: int, cfg: DmrgConfig | None = None, psi0: MPS | None = None):
    """Ground state of H restricted to a fixed total charge."""
    cfg = cfg or DmrgConfig()
    _check_input(H, cfg)
    if not _is_charged(H):
        raise MPSError("MPO has no conserved charge; use dmrg_ground_state")
    if psi0 is None:
        allowed_bond_charges(H.N, H.local_charges, sector)
        psi0 = init_mps(H.N, H.d, cfg.D_init, "random", cfg.seed, local_charges=H.local_charges,
                        sector=sector)
    elif psi0.total_charge != sector:
        raise MPSError("initial state is in a different sector")
    return _run(H, psi0.copy(), cfg, True, sector)


def _check_input(H: MPO, cfg: DmrgConfig):
    if cfg.check_hermitian and (not H.hermitian or not mpo_is_hermitian(H)):
        raise NonHermitianError(f"MPO {H.name or ''} is not Hermitian")


def dmrg_ground_state(H: MPO, cfg: DmrgConfig | None = None, sector="auto", psi0: MPS | None = None):
    """Variational ground state of H.

    With a conserved charge, ``sector`` may be an integer, or 'auto' to search
    sectors: all of them for small chains, otherwise a local descent starting
    from the magnetization of an unblocked low-D probe run.
    """
    cfg = cfg or DmrgConfig()
    _check_input(H, cfg)
    cfg_nocheck = replace(cfg, check_hermitian=False)
    if not _is_charged(H):
        if psi0 is None:
            psi0 = init_mps(H.N, H.d, cfg.D_init, "random", cfg.seed)
        return _run(H, psi0.copy(), cfg, False, None)
    if sector != "auto":
        return dmrg_sector(H, int(sector), cfg_nocheck, psi0)
    sectors = allowed_sectors(H)
    results = {}

    def solve(S):
        if S not in results:
            results[S] = dmrg_sector(H, S, cfg_nocheck)
        return results[S][1].final_energy

    if H.N <= cfg.scan_all_max_N:
        for S in sectors:
            solve(S)
    else:
        S0 = probe_sector(H, cfg, sectors)
        idx = sectors.index(S0)
        solve(S0)
        for direction in (-1, 1):
            j = idx
            while 0 <= j + direction < len(sectors) and \
                    solve(sectors[j + direction]) < solve(sectors[j]):
                j += direction
    best = min(results, key=lambda S: results[S][1].final_energy)
    psi, rep = results[best]
    rep.sector_energies = {S: r[1].final_energy for S, r in sorted(results.items())}
    return psi, rep


def probe_sector(H: MPO, cfg: DmrgConfig, sectors) -> int:
    """Estimate the ground-state charge from a cheap unblocked run."""
    free = MPO(H.tensors, None, H.hermitian, H.name)
    pcfg = replace(cfg, D=min(cfg.D, 24), D_retry=min(cfg.D, 24), max_sweeps=3, extra_sweeps=0,
                   dE_tol=1e-5, check_hermitian=False)
    psi0 = init_mps(H.N, H.d, min(cfg.D_init, 8), "random", cfg.seed)
    psi, _ = _run(free, psi0, pcfg, False, None)
    qop = np.diag(H.local_charges.astype(float))
    total = float(np.sum(local_expectations(psi, qop)))
    return min(sectors, key=lambda S: (abs(S - total), S))
