"""Order parameters, correlations, Luttinger fits and phase labels.

Order parameters are averaged over the central window of 20 sites so that edge
effects of the open chain do not contaminate them.  Staggered quantities are
reported as absolute values, which makes them independent of which
symmetry-broken branch the solver happened to land in.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from . import operators as ops
from .mps import MPS, rdm_at_center, row_at_center

WINDOW = 20

PHASES = ("P", "N", "D", "SMF", "SMF_CDW", "T", "U")

# decision thresholds
PHI_MIN = 0.025
DT_MIN = 0.01
PERIOD3_TOL = 0.02
LOCK_TOL = 0.05
KINK_RATIO = 2.0
PLATEAU_MIN_STEPS = 3
CAT_CORR_MIN = 0.1
# bumped whenever a stored ObservableSet would be computed differently
OBSERVABLES_VERSION = 2


class WindowError(ValueError):
    pass


class FitError(ValueError):
    pass


class ClassificationError(ValueError):
    pass


def window_sites(N: int, width: int = WINDOW) -> np.ndarray:
    if N < width + 4:
        raise WindowError(f"N = {N} too small for a central window of {width} sites (need >= {width + 4})")
    start = (N - width) // 2
    return np.arange(start, start + width)


def default_corr_sites(N: int, span: int = 15):
    """Reference site and partners for the correlation fit; (28, 29..43) on 62 sites."""
    i = N // 2 - 3
    return i, np.arange(i + 1, min(N, i + 1 + span))


@dataclass
class ObservableSet:
    N: int
    sector: int
    sz: np.ndarray
    tz: np.ndarray | None = None
    tx: np.ndarray | None = None
    M_z: float = 0.0
    Phi: float = 0.0
    Phi_mean: float = 0.0
    Phi_corr: float = 0.0
    D_T: float = 0.0
    D_x: float = 0.0
    triplet: np.ndarray | None = None
    bell_sum_err: float = 0.0
    corr: dict = field(default_factory=dict)
    dens_corr: dict = field(default_factory=dict)
    corr_r: np.ndarray | None = None
    K: float | None = None
    K_err: float | None = None
    K_residual: float | None = None
    K_error: str | None = None

    @property
    def flips(self) -> int:
        return (self.sector + self.N) // 2

    def window(self) -> np.ndarray:
        return window_sites(self.N)

    def lock_error(self) -> float:
        """max_i |<sigma^z_i> - <sigma~^z_i>| over the chain."""
        if self.tz is None:
            return 0.0
        return float(np.max(np.abs(self.sz - self.tz)))

    def to_dict(self) -> dict:
        """JSON-safe form (arrays become lists)."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                v = v.tolist()
            elif isinstance(v, dict):
                v = {k: np.asarray(x).tolist() for k, x in v.items()}
            out[f.name] = v
        out["version"] = OBSERVABLES_VERSION
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ObservableSet":
        kw = dict(d)
        kw.pop("version", None)
        for name in ("sz", "tz", "tx", "triplet", "corr_r"):
            if kw.get(name) is not None:
                kw[name] = np.asarray(kw[name], float)
        for name in ("corr", "dens_corr"):
            kw[name] = {k: np.asarray(v, float) for k, v in (kw.get(name) or {}).items()}
        return cls(**kw)

    def summary(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if not isinstance(v, (np.ndarray, dict))}
        out["flips"] = self.flips
        return out


# ---------------------------------------------------------------- measurements

def _spin_ops(d):
    if d == 4:
        return ops.sigma_z, ops.sigma_p, ops.sigma_m
    return ops.sz, ops.sp, ops.sm


def triplet_overlap(rho: np.ndarray) -> tuple[float, float]:
    """<T|rho_spin|T> and the deviation of the four Bell overlaps from summing to one."""
    r = ops.spin_marginal(rho) if rho.shape[0] == 16 else rho
    bell = [float(np.real(v @ r @ v)) for v in ops.BELL.values()]
    return bell[0], abs(sum(bell) - 1.0)


def order_parameters(psi: MPS, correlations: bool = True) -> ObservableSet:
    """Local profiles, staggered orders and (optionally) correlation functions."""
    N, d = psi.N, psi.d
    win = window_sites(N)
    szop, spop, smop = _spin_ops(d)
    phi = psi.copy().canonicalize(0)
    local = {"sz": [], "tz": [], "tx": []}
    localops = {"sz": szop}
    if d == 4:
        localops.update(tz=ops.tsigma_z, tx=ops.tsigma_x)
    rho_bonds = {}
    zz_rows = {}
    for k in range(N):
        phi.move_center(k)
        A = phi.tensors[k]
        for name, op in localops.items():
            local[name].append(float(np.real(np.einsum("asb,ts,atb->", A.conj(), op, A))))
        if k in win:
            rho_bonds[k] = rdm_at_center(phi, k, k + 1)
            later = [j for j in win if j > k]
            if later:
                zz_rows[k] = row_at_center(phi, szop, k, szop, later)
    sz = np.array(local["sz"])
    obs = ObservableSet(N=N, sector=psi.total_charge, sz=sz)
    if d == 4:
        obs.tz, obs.tx = np.array(local["tz"]), np.array(local["tx"])
    stag = (-1.0) ** win
    obs.M_z = float(np.sum(sz) / (2 * N))
    obs.Phi_mean = float(np.mean(stag * sz[win]))
    # Neel order hidden from the staggered mean (a cat state, or a domain wall
    # delocalized across the window) still shows in long-range staggered correlations
    far = [stag[a] * stag[b] * (zz_rows[i][b - a - 1] - sz[i] * sz[j])
           for a, i in enumerate(win) for b, j in enumerate(win) if j - i >= WINDOW // 2]
    obs.Phi_corr = float(np.mean(far))
    obs.Phi = abs(obs.Phi_mean)
    if obs.Phi_corr > CAT_CORR_MIN and obs.Phi < np.sqrt(obs.Phi_corr) / 2:
        obs.Phi = float(np.sqrt(obs.Phi_corr))
    trip, errs = zip(*(triplet_overlap(rho_bonds[i]) for i in win))
    obs.triplet = np.array(trip)
    obs.bell_sum_err = float(max(errs))
    obs.D_T = float(abs(np.mean(stag * obs.triplet)))
    if d == 4:
        obs.D_x = float(abs(np.mean(stag * obs.tx[win])))
    if correlations and d == 4:
        i, js = default_corr_sites(N)
        corr, dens = correlations_all(phi, i, js)
        obs.corr, obs.dens_corr, obs.corr_r = corr, dens, js - i
        try:
            obs.K, obs.K_err, obs.K_residual = fit_luttinger_K(js - i, corr["tau"])
        except FitError as exc:
            obs.K_error = str(exc)
    return obs


_FLIP_OPS = {
    "tau": (ops.tau_p, ops.tau_m, ops.tau_z),
    "sigma": (ops.sigma_p, ops.sigma_m, ops.sigma_z),
    "sigma_tilde": (ops.tsigma_p, ops.tsigma_m, ops.tsigma_z),
}


def correlations_all(psi: MPS, i: int, js):
    """Connected C^X_ij = <X+_i X-_j> - <X+_i><X-_j> and density analogues for X in tau, sigma, sigma~."""
    phi = psi.copy()
    phi.canonicalize(phi.center if 0 <= phi.center < phi.N else 0)
    corr, dens = {}, {}
    js = np.asarray(js, int)
    means = {}
    for name, (p, m, z) in _FLIP_OPS.items():
        for label, op in (("p", p), ("m", m), ("z", z)):
            means[name, label] = _profile(phi, op, [i, *js])
    phi.move_center(i)
    for name, (p, m, z) in _FLIP_OPS.items():
        raw = row_at_center(phi, p, i, m, js)
        corr[name] = raw - means[name, "p"][0] * means[name, "m"][1:]
        rawz = row_at_center(phi, z, i, z, js)
        dens[name] = rawz - means[name, "z"][0] * means[name, "z"][1:]
    return corr, dens


def _profile(phi: MPS, op, sites):
    out = []
    for k in sites:
        phi.move_center(k)
        A = phi.tensors[k]
        out.append(complex(np.einsum("asb,ts,atb->", A.conj(), op, A)).real)
    return np.array(out)


def correlations(psi: MPS, X: str, i: int, js):
    """Connected flip and density correlators of one degree of freedom."""
    if X not in _FLIP_OPS:
        raise ValueError(f"X must be one of {tuple(_FLIP_OPS)}")
    corr, dens = correlations_all(psi, i, js)
    return corr[X], dens[X]


# ---------------------------------------------------------------- Luttinger fit

def fit_luttinger_K(r, C, min_points: int = 8):
    """Fit |C(r)| ~ r^(-1/2K) on a log-log scale.

    Returns (K, K_err, residual).  Requires the alternating sign pattern
    (-1)^r and an overall decay; otherwise raises FitError.
    """
    r = np.asarray(r, float)
    C = np.asarray(C, float)
    ok = np.abs(C) > 1e-14
    if ok.sum() < min_points:
        raise FitError(f"only {int(ok.sum())} usable points (need {min_points})")
    r, C = r[ok], C[ok]
    signs = np.sign(C * (-1.0) ** r)
    if np.mean(signs == signs[0]) < 0.9:
        raise FitError("correlations do not alternate as (-1)^r")
    x, y = np.log(r), np.log(np.abs(C))
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    slope = coef[0]
    if slope >= 0:
        raise FitError("correlations do not decay")
    n = len(x)
    resid = y - A @ coef
    s2 = float(resid @ resid) / max(n - 2, 1)
    slope_err = np.sqrt(s2 / np.sum((x - x.mean()) ** 2))
    K = -1.0 / (2.0 * slope)
    K_err = slope_err / (2.0 * slope ** 2)
    return float(K), float(K_err), float(np.sqrt(np.mean(resid ** 2)))


# ---------------------------------------------------------------- pattern tests

def period3_pattern(obs: ObservableSet, tol: float = PERIOD3_TOL):
    """(is_period3, is_uniform) over the central window for sigma^z, sigma~^z, sigma~^x."""
    win = obs.window()
    profiles = [obs.sz] + [p for p in (obs.tz, obs.tx) if p is not None]
    rep = max(float(np.max(np.abs(p[win[3:]] - p[win[:-3]]))) for p in profiles)
    spread = max(float(np.ptp(p[win])) for p in profiles)
    return rep <= tol, spread <= tol


def alternation(profile, win) -> tuple[bool, float]:
    """(signs alternate site to site, mean absolute value) over the window."""
    v = np.asarray(profile)[win]
    s = np.sign(v)
    return bool(np.all(s[1:] == -s[:-1]) and np.all(s != 0)), float(np.mean(np.abs(v)))


# ---------------------------------------------------------------- sector tables

@dataclass
class SectorWindow:
    sector: int
    h_low: float
    h_high: float

    @property
    def width(self) -> float:
        return self.h_high - self.h_low


def sector_windows(energies: dict, h_max: float = np.inf) -> list:
    """Field intervals on which each sector is the ground state (energies at h = 0).

    E_S(h) = E_S(0) + h S, so the ground sector follows the lower convex hull
    of E_S(0) against S.  Returns windows for h >= 0, highest sector first.
    """
    S = np.array(sorted(energies))
    E = np.array([energies[s] for s in S])
    out = []
    h = 0.0
    cur = int(np.argmin(E))  # ground at h = 0 (ties -> most negative sector)
    while True:
        # next sector to take over when raising h: smaller S with minimal crossing field
        cand = [(float((E[k] - E[cur]) / (S[cur] - S[k])), k) for k in range(cur) if S[k] < S[cur]]
        if not cand:
            out.append(SectorWindow(int(S[cur]), h, np.inf))
            break
        hx, k = min(cand, key=lambda t: (t[0], S[t[1]]))
        hx = max(hx, h)
        if hx > h or not out:
            out.append(SectorWindow(int(S[cur]), h, hx))
        h, cur = hx, k
        if h > h_max:
            out.append(SectorWindow(int(S[cur]), h, np.inf))
            break
    return [w for w in out if w.width > 0 or w.h_high == np.inf]


def ground_sector(energies: dict, h: float) -> int:
    return min(energies, key=lambda s: (energies[s] + h * s, s))


def magnetization_curve(energies: dict, N: int, h_grid) -> np.ndarray:
    """Per-atom M_z(h) of the ground sector on each grid field."""
    return np.array([ground_sector(energies, h) / (2 * N) for h in h_grid])


def smoothed_magnetization(energies: dict, N: int, h_grid) -> np.ndarray:
    """Staircase M_z(h) replaced by linear interpolation through window midpoints.

    Finite-size steps make raw finite differences meaningless; the midpoints
    of the ground-state windows trace the thermodynamic curve.
    """
    wins = sector_windows(energies)
    if len(wins) < 3:
        return magnetization_curve(energies, N, h_grid)
    # window midpoints, plus the saturation field where the last window opens
    hm = np.array([(w.h_low + w.h_high) / 2 for w in wins[:-1]] + [wins[-1].h_low])
    m = np.array([w.sector / (2 * N) for w in wins])
    return np.interp(h_grid, hm, m, left=m[0], right=m[-1])


def kink_flags(h_grid, M, m_sat: float = -0.5) -> np.ndarray:
    """|dM/dh| from the backward difference exceeding KINK_RATIO x the forward one.

    The corner where M reaches saturation (``m_sat``) is not a kink: the forward
    slope vanishes there for every state.
    """
    h_grid, M = np.asarray(h_grid), np.asarray(M)
    flags = np.zeros(len(h_grid), bool)
    for k in range(1, len(h_grid) - 1):
        if abs(M[k + 1] - m_sat) < 1e-12:
            continue
        bwd = (M[k] - M[k - 1]) / (h_grid[k] - h_grid[k - 1])
        fwd = (M[k + 1] - M[k]) / (h_grid[k + 1] - h_grid[k])
        flags[k] = abs(bwd) > KINK_RATIO * abs(fwd) and abs(bwd) > 1e-12
    return flags


def smf_lower_field(h_grid, M) -> float:
    """Highest grid field carrying a kink (the lower SMF border); -inf if none."""
    f = kink_flags(h_grid, M)
    return float(np.max(np.asarray(h_grid)[f])) if f.any() else -np.inf


# ---------------------------------------------------------------- classification

@dataclass
class PhaseLabel:
    label: str
    criterion: dict

    def __post_init__(self):
        if self.label not in PHASES:
            raise ValueError(f"unknown phase {self.label}")


@dataclass
class PointContext:
    """Field-dependent information the classifier needs beyond the state itself."""
    h: float
    hplus_flips: int
    window_width: float = 0.0
    h_step: float = 0.02
    smf_lower_h: float | Callable[[], float] = -np.inf
    converged: bool = True

    def kink_field(self) -> float:
        """Lower SMF border; a callable is resolved (and cached) on first use."""
        if callable(self.smf_lower_h):
            self.smf_lower_h = float(self.smf_lower_h())
        return self.smf_lower_h


def neel_pattern(obs: ObservableSet) -> bool:
    """Whether a nonzero |Phi| comes from staggered order.

    True when |Phi| was taken from long-range correlations, or when the window
    profile alternates in sign about its mean.  A period-3 profile leaks into
    the staggered mean of a 20-site window but does not alternate.
    """
    if obs.Phi > abs(obs.Phi_mean) + 1e-12:
        return True
    win = obs.window()
    return alternation(obs.sz - np.mean(obs.sz[win]), win)[0]


def classify_phase(obs: ObservableSet, ctx: PointContext) -> PhaseLabel:
    """Decision cascade P -> N -> D -> T -> SMF -> SMF_CDW -> U."""
    if not ctx.converged:
        raise ClassificationError("refusing to classify an unconverged state")
    rec = {"sector": obs.sector, "flips": obs.flips, "Phi": obs.Phi, "D_T": obs.D_T,
           "hplus_flips": ctx.hplus_flips}
    if obs.sector == -obs.N:
        return PhaseLabel("P", {**rec, "rule": "fully polarized sector"})
    if obs.Phi > PHI_MIN and neel_pattern(obs):
        return PhaseLabel("N", {**rec, "rule": f"|Phi| > {PHI_MIN}, staggered"})
    if obs.sector == 0 and obs.D_T > DT_MIN:
        return PhaseLabel("D", {**rec, "rule": f"M_z = 0 and D_T > {DT_MIN}"})
    p3, uniform = period3_pattern(obs)
    rec.update(window_width=ctx.window_width, period3=p3, uniform=uniform)
    if ctx.window_width >= PLATEAU_MIN_STEPS * ctx.h_step - 1e-12 and p3 and not uniform:
        return PhaseLabel("T", {**rec, "rule": "plateau with period-3 order"})
    locked = obs.lock_error() <= LOCK_TOL
    if not locked:
        return PhaseLabel("U", {**rec, "lock_error": obs.lock_error(), "rule": "no criterion met"})
    kink = ctx.kink_field()
    rec.update(lock_error=obs.lock_error(), smf_lower_h=kink, K=obs.K, K_err=obs.K_err)
    if ctx.h > kink:
        return PhaseLabel("SMF", {**rec, "rule": "tau-locked, above the magnetization kink"})
    if obs.K is not None and obs.K < 1 - (obs.K_err or 0.0):
        return PhaseLabel("SMF_CDW", {**rec, "rule": "tau-locked Luttinger liquid with K < 1"})
    return PhaseLabel("U", {**rec, "rule": "no criterion met"})


def point_record(g, h, N, D, energy, converged, obs: ObservableSet, label: PhaseLabel | None) -> dict:
    """Flat per-point record (JSON schema of the sweep output); unlabeled if unconverged."""
    return {
        "g": float(g), "h": float(h), "N": int(N), "D": int(D), "energy": float(energy),
        "converged": bool(converged), "M_z": obs.M_z, "Phi": obs.Phi, "D_T": obs.D_T,
        "D_x": obs.D_x, "K": obs.K, "K_residual": obs.K_residual, "phase": None if label is None else label.label,
        "flipped_count": obs.flips,
    }
