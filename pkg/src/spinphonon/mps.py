"""Finite matrix product states and operators.

Conventions: MPS tensors are (left bond, physical, right bond); MPO tensors are
(left bond, physical out, physical in, right bond).  Every MPS carries U(1)
bond charges: ``charges[k][a]`` is the total charge of sites ``0..k-1`` for
bond state ``a``.  A state without a conserved charge simply has all charges
zero, which collapses every block decomposition to a single block.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

__all__ = [
    "MPS", "MPO", "MPSError", "init_mps", "split_blocks", "allowed_bond_charges",
    "expectation", "local_expectations", "correlation_row", "two_site_rdm", "row_at_center",
    "rdm_at_center",
    "mpo_expectation", "mpo_is_hermitian", "mpo_from_terms", "overlap",
    "write_mps", "read_mps",
]


class MPSError(ValueError):
    """Malformed state, operator or input labels."""


@dataclass
class MPS:
    tensors: list
    charges: list
    local_charges: np.ndarray
    center: int = 0
    seed: int = 0

    @property
    def N(self) -> int:
        return len(self.tensors)

    @property
    def d(self) -> int:
        return self.tensors[0].shape[1]

    @property
    def bond_dims(self) -> list:
        return [1] + [t.shape[2] for t in self.tensors]

    @property
    def total_charge(self) -> int:
        return int(self.charges[-1][0])

    def copy(self) -> "MPS":
        return MPS([t.copy() for t in self.tensors], [c.copy() for c in self.charges],
                   self.local_charges.copy(), self.center, self.seed)

    def norm(self) -> float:
        return float(np.sqrt(abs(overlap(self, self))))

    def canonicalize(self, center: int = 0, normalize: bool = True) -> "MPS":
        """Bring the state into mixed-canonical form around ``center`` (in place)."""
        if not 0 <= center < self.N:
            raise MPSError(f"center {center} out of range for N={self.N}")
        for k in range(0, center):
            self._move_right(k)
        for k in range(self.N - 1, center, -1):
            self._move_left(k)
        self.center = center
        if normalize:
            nrm = np.linalg.norm(self.tensors[center])
            if nrm == 0:
                raise MPSError("state has zero norm")
            self.tensors[center] = self.tensors[center] / nrm
        return self

    def move_center(self, target: int) -> "MPS":
        """Shift an already canonical center to ``target``."""
        while self.center < target:
            self._move_right(self.center)
            self.center += 1
        while self.center > target:
            self._move_left(self.center)
            self.center -= 1
        return self

    def _move_right(self, k: int) -> None:
        A = self.tensors[k]
        Dl, d, Dr = A.shape
        ql = (self.charges[k][:, None] + self.local_charges[None, :]).ravel()
        U, S, V, qb, _ = split_blocks(A.reshape(Dl * d, Dr), ql, self.charges[k + 1],
                                      cutoff=1e-14, renormalize=False)
        self.tensors[k] = U.reshape(Dl, d, -1)
        self.tensors[k + 1] = np.tensordot(S[:, None] * V, self.tensors[k + 1], axes=(1, 0))
        self.charges[k + 1] = qb

    def _move_left(self, k: int) -> None:
        A = self.tensors[k]
        Dl, d, Dr = A.shape
        qr = (self.charges[k + 1][None, :] - self.local_charges[:, None]).ravel()
        U, S, V, qb, _ = split_blocks(A.reshape(Dl, d * Dr), self.charges[k], qr,
                                      cutoff=1e-14, renormalize=False)
        self.tensors[k] = V.reshape(-1, d, Dr)
        self.tensors[k - 1] = np.tensordot(self.tensors[k - 1], U * S[None, :], axes=(2, 0))
        self.charges[k] = qb

    def to_dense(self) -> np.ndarray:
        if self.d ** self.N > 4 ** 10:
            raise MPSError("dense reconstruction capped at d^N <= 4^10")
        v = self.tensors[0]
        for A in self.tensors[1:]:
            v = np.tensordot(v, A, axes=(-1, 0))
        return v.reshape(-1)


@dataclass
class MPO:
    tensors: list
    local_charges: np.ndarray | None = None
    hermitian: bool = True
    name: str = ""
    _bond_charges: list | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return len(self.tensors)

    @property
    def d(self) -> int:
        return self.tensors[0].shape[1]

    @property
    def bond_dims(self) -> list:
        return [1] + [W.shape[3] for W in self.tensors]

    def bond_charges(self) -> list:
        """Charge carried by each MPO bond state, inferred by propagation from the left.

        Raises MPSError if some tensor block does not change the charge by a
        single definite amount, i.e. the operator breaks the U(1) symmetry.
        """
        if self._bond_charges is not None:
            return self._bond_charges
        q = self.local_charges if self.local_charges is not None else np.zeros(self.d, int)
        dq = q[:, None] - q[None, :]
        out = [np.zeros(1, int)]
        reached = np.ones(1, bool)
        for k, W in enumerate(self.tensors):
            qw = np.zeros(W.shape[3], int)
            seen = np.zeros(W.shape[3], bool)
            for wl in range(W.shape[0]):
                if not reached[wl]:  # unreachable from the left boundary: never contributes
                    continue
                for wr in range(W.shape[3]):
                    nz = np.abs(W[wl, :, :, wr]) > 1e-14
                    if not nz.any():
                        continue
                    vals = np.unique(dq[nz])
                    if len(vals) != 1:
                        raise MPSError(f"MPO site {k} block ({wl},{wr}) mixes charge sectors")
                    c = out[k][wl] + vals[0]
                    if seen[wr] and qw[wr] != c:
                        raise MPSError(f"MPO site {k} bond {wr} has inconsistent charge")
                    qw[wr], seen[wr] = c, True
            out.append(qw)
            reached = seen
        if out[-1][0] != 0:
            raise MPSError("MPO changes the total charge")
        self._bond_charges = out
        return out


def split_blocks(theta, ql, qr, max_dim=None, cutoff=0.0, renormalize=True, blocks=None):
    """Charge-blocked SVD of ``theta`` (rows labelled by ql, columns by qr).

    Only entries with ql[r] == qr[c] may be nonzero.  ``blocks`` optionally
    supplies the per-charge submatrices directly as {charge: (rows, cols, M)}.
    Keeps at most ``max_dim`` singular values above ``cutoff`` (at least one)
    and returns (U, S, V, bond_charges, discarded_weight).
    """
    if blocks is None:
        blocks = {}
        for c in np.intersect1d(ql, qr):
            rows, cols = np.flatnonzero(ql == c), np.flatnonzero(qr == c)
            blocks[c] = (rows, cols, theta[np.ix_(rows, cols)])
    parts = []
    for c, (rows, cols, M) in sorted(blocks.items()):
        if M.size == 0:
            continue
        try:
            u, s, vh = np.linalg.svd(M, full_matrices=False)
        except np.linalg.LinAlgError:
            u, s, vh = sla.svd(M, full_matrices=False, lapack_driver="gesvd")
        parts.append((c, rows, cols, u, s, vh))
    if not parts:
        raise MPSError("no charge sector carries weight")
    all_s = np.concatenate([p[4] for p in parts])
    order = np.argsort(-all_s, kind="stable")
    keep_n = len(order) if max_dim is None else min(max_dim, len(order))
    kept = order[:keep_n]
    kept = kept[all_s[kept] > cutoff]
    if len(kept) == 0:
        kept = order[:1]
    mask = np.zeros(len(all_s), bool)
    mask[kept] = True
    discarded = float(np.sum(all_s[~mask] ** 2))
    k = int(mask.sum())
    dtype = np.result_type(*[p[3].dtype for p in parts])
    U = np.zeros((len(ql), k), dtype)
    V = np.zeros((k, len(qr)), dtype)
    S = np.empty(k)
    qb = np.empty(k, int)
    pos, col = 0, 0
    for c, rows, cols, u, s, vh in parts:
        m = mask[pos:pos + len(s)]
        pos += len(s)
        n = int(m.sum())
        if n == 0:
            continue
        U[rows, col:col + n] = u[:, m]
        V[col:col + n, cols] = vh[m, :]
        S[col:col + n] = s[m]
        qb[col:col + n] = c
        col += n
    if renormalize:
        S = S / np.linalg.norm(S)
    return U, S, V, qb, discarded


def allowed_bond_charges(N, local_charges, total):
    """Charges reachable at each bond that can still reach ``total`` at the end."""
    qs = np.unique(local_charges)
    left = [np.array([0])]
    for _ in range(N):
        left.append(np.unique((left[-1][:, None] + qs[None, :]).ravel()))
    right = [np.array([total])]
    for _ in range(N):
        right.append(np.unique((right[-1][:, None] - qs[None, :]).ravel()))
    right = right[::-1]
    out = [np.intersect1d(lft, rgt) for lft, rgt in zip(left, right)]
    if len(out[-1]) == 0:
        raise MPSError(f"total charge {total} is not reachable on {N} sites")
    return out


def _product_tensors(states, d):
    tensors = []
    for s in states:
        A = np.zeros((1, d, 1))
        A[0, s, 0] = 1.0
        tensors.append(A)
    return tensors


def init_mps(N, d, D_init=16, kind="random", seed=0, states=None, local_charges=None,
             sector=None, labels=None) -> MPS:
    """Build a normalized starting state.

    ``kind='product'`` takes ``states`` (integers, or names resolved through
    ``labels``).  ``kind='random'`` draws Gaussian entries from a generator
    seeded by ``seed``; with ``local_charges`` and ``sector`` the state lives
    in the fixed total-charge sector.
    """
    if N < 2:
        raise MPSError("need N >= 2")
    q = np.zeros(d, int) if local_charges is None else np.asarray(local_charges, int)
    if len(q) != d:
        raise MPSError("local_charges must have length d")
    if kind == "product":
        if states is None or len(states) != N:
            raise MPSError("product state needs one label per site")
        idx = []
        for s in states:
            if isinstance(s, str):
                if labels is None or s not in labels:
                    raise MPSError(f"unknown state label {s!r}")
                s = labels.index(s)
            if not isinstance(s, (int, np.integer)) or not 0 <= s < d:
                raise MPSError(f"invalid product-state entry {s!r}")
            idx.append(int(s))
        charges = [np.zeros(1, int)]
        for s in idx:
            charges.append(charges[-1] + q[s])
        return MPS(_product_tensors(idx, d), charges, q, 0, seed)
    if kind != "random":
        raise MPSError(f"unknown init kind {kind!r}")
    rng = np.random.default_rng(seed)
    if sector is None:
        if local_charges is not None and np.any(q != 0):
            raise MPSError("random state with local charges needs a sector")
        bonds = [np.zeros(1, int)] + [np.zeros(min(D_init, d ** min(k, N - k)), int)
                                      for k in range(1, N)] + [np.zeros(1, int)]
    else:
        allowed = allowed_bond_charges(N, q, sector)
        span = int(np.max(q) - np.min(q)) or 1
        bonds = [np.zeros(1, int)]
        for k in range(1, N):
            target = sector * k / N
            cand = allowed[k][np.abs(allowed[k] - target) <= 2 * span]
            if len(cand) == 0:
                cand = allowed[k][np.argsort(np.abs(allowed[k] - target))[:1]]
            per = max(1, D_init // len(cand))
            bonds.append(np.repeat(cand, per))
        bonds.append(np.array([sector]))
    tensors = []
    for k in range(N):
        ql, qr = bonds[k], bonds[k + 1]
        A = rng.standard_normal((len(ql), d, len(qr)))
        ok = (ql[:, None, None] + q[None, :, None]) == qr[None, None, :]
        tensors.append(A * ok)
    psi = MPS(tensors, [b.copy() for b in bonds], q, 0, seed)
    psi.canonicalize(0)
    return psi


# ---------------------------------------------------------------- contractions

def _left_step(E, A, op=None, B=None):
    """E[a', a] -> E'[b', b] through ket tensor A and bra tensor B (default A)."""
    B = A if B is None else B
    T = np.tensordot(E, A, axes=(1, 0))  # a' s b
    if op is not None:
        T = np.tensordot(op, T, axes=(1, 1)).transpose(1, 0, 2)
    return np.tensordot(B.conj(), T, axes=([0, 1], [0, 1]))


def overlap(bra: MPS, ket: MPS) -> complex:
    E = np.ones((1, 1))
    for A, B in zip(ket.tensors, bra.tensors):
        E = _left_step(E, A, None, B)
    val = E[0, 0]
    return complex(val) if np.iscomplexobj(val) else float(val)


def expectation(psi: MPS, site_ops) -> complex:
    """<psi| prod_k op_k |psi> / <psi|psi> for a list of (site, d x d operator)."""
    ops = {}
    for site, op in site_ops:
        if not 0 <= site < psi.N:
            raise MPSError(f"site {site} out of range for N={psi.N}")
        op = np.asarray(op)
        if op.shape != (psi.d, psi.d):
            raise MPSError(f"operator at site {site} must be {psi.d}x{psi.d}")
        ops[site] = ops[site] @ op if site in ops else op
    E = np.ones((1, 1))
    nrm = np.ones((1, 1))
    for k, A in enumerate(psi.tensors):
        E = _left_step(E, A, ops.get(k))
        nrm = _left_step(nrm, A)
    val = E[0, 0] / nrm[0, 0]
    return float(val.real) if abs(np.imag(val)) < 1e-13 else complex(val)


def local_expectations(psi: MPS, op) -> np.ndarray:
    """<op_k> for every site k, by sweeping the orthogonality center."""
    phi = psi.copy().canonicalize(0)
    out = np.empty(phi.N)
    for k in range(phi.N):
        phi.move_center(k)
        A = phi.tensors[k]
        out[k] = np.real(np.einsum("asb,ts,atb->", A.conj(), op, A))
    return out


def correlation_row(psi: MPS, opA, i: int, opB, js) -> np.ndarray:
    """<opA_i opB_j> for j in ``js`` (all > i)."""
    js = np.asarray(list(js), int)
    if len(js) and (js.min() <= i or js.max() >= psi.N):
        raise MPSError("correlation sites must satisfy i < j < N")
    return row_at_center(psi.copy().canonicalize(i), opA, i, opB, js)


def row_at_center(phi: MPS, opA, i: int, opB, js) -> np.ndarray:
    """Same as correlation_row for a state whose orthogonality center is at i."""
    A = phi.tensors[i]
    E = np.tensordot(A.conj(), np.tensordot(opA, A, axes=(1, 1)).transpose(1, 0, 2),
                     axes=([0, 1], [0, 1]))
    out, jmax = {}, (max(js) if len(js) else i)
    for j in range(i + 1, jmax + 1):
        B = phi.tensors[j]
        if j in js:
            out[j] = np.real(np.trace(_left_step(E, B, opB)))
        E = _left_step(E, B)
    return np.array([out[j] for j in js])


def two_site_rdm(psi: MPS, i: int, j: int) -> np.ndarray:
    """Reduced density matrix of sites i < j, as a (d^2 x d^2) matrix."""
    if not 0 <= i < j < psi.N:
        raise MPSError("need 0 <= i < j < N")
    return rdm_at_center(psi.copy().canonicalize(i), i, j)


def rdm_at_center(phi: MPS, i: int, j: int) -> np.ndarray:
    A = phi.tensors[i]
    # E[s, t, b, c]: ket index s, bra index t, ket bond b, bra bond c
    E = np.einsum("asb,atc->stbc", A, A.conj())
    for k in range(i + 1, j):
        B = phi.tensors[k]
        E = np.einsum("stbc,bud,cue->stde", E, B, B.conj())
    B = phi.tensors[j]
    rho = np.einsum("stbc,bud,cvd->sutv", E, B, B.conj())
    d = phi.d
    rho = rho.reshape(d * d, d * d)
    return rho / np.trace(rho)


# ---------------------------------------------------------------- operators

def mpo_expectation(psi: MPS, H: MPO) -> float:
    E = np.ones((1, 1, 1))
    for A, W in zip(psi.tensors, H.tensors):
        E = env_left(E, A, W)
    val = E[0, 0, 0] / overlap(psi, psi)
    return float(np.real(val))


def env_left(Lenv, A, W):
    """L'[b', w', b] = sum L[a', w, a] A*[a', s', b'] W[w, s', s, w'] A[a, s, b]."""
    T = np.tensordot(Lenv, A, axes=(2, 0))                 # a' w s b
    T = np.tensordot(T, W, axes=([1, 2], [0, 2]))           # a' b s' w'
    T = np.tensordot(A.conj(), T, axes=([0, 1], [0, 2]))    # b' b w'
    return T.transpose(0, 2, 1)


def env_right(Renv, A, W):
    """R'[a', w, a] = sum A*[a', s', b'] W[w, s', s, w'] A[a, s, b] R[b', w', b]."""
    T = np.tensordot(A, Renv, axes=(2, 2))                 # a s b' w'
    T = np.tensordot(T, W, axes=([1, 3], [2, 3]))           # a b' w s'
    T = np.tensordot(A.conj(), T, axes=([1, 2], [3, 1]))    # a' a w
    return T.transpose(0, 2, 1)


def mpo_is_hermitian(H: MPO, seed: int = 0, tol: float = 1e-10) -> bool:
    """Probabilistic Hermiticity test: <phi|H|psi> = conj(<psi|H|phi>) on random states."""
    rng = np.random.default_rng(seed)

    def rand_state():
        bonds = [1] + [2] * (H.N - 1) + [1]
        return [rng.standard_normal((bonds[k], H.d, bonds[k + 1]))
                + 1j * rng.standard_normal((bonds[k], H.d, bonds[k + 1])) for k in range(H.N)]

    phi, psi = rand_state(), rand_state()

    def sandwich(bra, ket):
        E = np.ones((1, 1, 1), complex)
        for B, A, W in zip(bra, ket, H.tensors):
            T = np.tensordot(E, A, axes=(2, 0))
            T = np.tensordot(T, W, axes=([1, 2], [0, 2]))
            E = np.tensordot(B.conj(), T, axes=([0, 1], [0, 2])).transpose(0, 2, 1)
        return E[0, 0, 0]

    x, y = sandwich(phi, psi), np.conj(sandwich(psi, phi))
    return abs(x - y) <= tol * max(1.0, abs(x))


def mpo_from_terms(N, d, onsite, nn=(), nnn=(), local_charges=None, hermitian=True, name=""):
    """Finite-state-machine MPO for on-site, nearest and next-nearest neighbor terms.

    onsite: callable k -> (d x d) operator (may be zero).
    nn:  iterable of (coef, A, B) with coef an array of length N-1 giving
         coef[k] * A_k B_{k+1}.
    nnn: iterable of (coef, A, B) with coef of length N-2 giving coef[k] * A_k B_{k+2}.
    """
    nn, nnn = list(nn), list(nnn)
    n_ch = 2 + len(nn) + 2 * len(nnn)
    end = n_ch - 1
    eye = np.eye(d)
    tensors = []
    for k in range(N):
        W = np.zeros((n_ch, d, d, n_ch))
        W[0, :, :, 0] = eye
        W[end, :, :, end] = eye
        W[0, :, :, end] = onsite(k)
        c = 1
        for coef, A, B in nn:
            if k < N - 1:
                W[0, :, :, c] = coef[k] * A
            W[c, :, :, end] = B
            c += 1
        for coef, A, B in nnn:
            if k < N - 2:
                W[0, :, :, c] = coef[k] * A
            W[c, :, :, c + 1] = eye
            W[c + 1, :, :, end] = B
            c += 2
        tensors.append(W)
    tensors[0] = tensors[0][:1]
    tensors[-1] = tensors[-1][..., end:]
    return MPO(tensors, None if local_charges is None else np.asarray(local_charges, int),
               hermitian, name)


# ---------------------------------------------------------------- checkpoint io

_MAGIC = b"MPS1"
_CHARGE_MAGIC = b"CHG1"


def write_mps(path, psi: MPS) -> None:
    """Binary little-endian checkpoint.

    Layout: b"MPS1", uint32 N, uint32 d, int64 seed, uint32 bond dims (N+1),
    then each tensor as row-major complex128 (left, physical, right).  An
    optional trailer b"CHG1" + int32 local charges (d) + int32 bond charges
    (per bond) restores the symmetry labels.
    """
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIq", psi.N, psi.d, int(psi.seed)))
        fh.write(np.asarray(psi.bond_dims, "<u4").tobytes())
        for A in psi.tensors:
            fh.write(np.ascontiguousarray(A, "<c16").tobytes())
        fh.write(_CHARGE_MAGIC)
        fh.write(np.asarray(psi.local_charges, "<i4").tobytes())
        for c in psi.charges:
            fh.write(np.asarray(c, "<i4").tobytes())
    tmp.replace(path)


def read_mps(path) -> MPS:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise MPSError(f"{path}: not an MPS1 checkpoint")
    N, d, seed = struct.unpack_from("<IIq", data, 4)
    off = 20
    dims = np.frombuffer(data, "<u4", N + 1, off).astype(int)
    off += 4 * (N + 1)
    tensors = []
    for k in range(N):
        n = dims[k] * d * dims[k + 1]
        A = np.frombuffer(data, "<c16", n, off).reshape(dims[k], d, dims[k + 1])
        off += 16 * n
        tensors.append(A.real.copy() if not np.any(A.imag) else A.copy())
    if data[off:off + 4] == _CHARGE_MAGIC:
        off += 4
        q = np.frombuffer(data, "<i4", d, off).astype(int)
        off += 4 * d
        charges = []
        for k in range(N + 1):
            charges.append(np.frombuffer(data, "<i4", dims[k], off).astype(int))
            off += 4 * dims[k]
    else:
        q = np.zeros(d, int)
        charges = [np.zeros(n, int) for n in dims]
    return MPS(tensors, charges, q, 0, seed)
