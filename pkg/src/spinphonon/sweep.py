"""Single points and (g, h) grid sweeps with on-disk checkpoints.

The Hamiltonian conserves the total spin S = sum sigma^z and the field enters
only as h * S, so E_S(h) = E_S(0) + h S and the ground state of each sector
does not depend on h.  A grid column at fixed g therefore needs one DMRG run
per sector, after which every field value is answered by the lower convex
hull of E_S(0).  By the spin-flip symmetry only S <= 0 matters for h >= 0.

Layout of an output directory::

    manifest.json             config, hash, tool version, completed/failed points
    sectors/g<gi>_S<S>.json   sector energy, DMRG report and observables
    points/g<gi>_h<hi>.json   per-point records
    phase_diagram.csv         aggregated records
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .classical import ClassicalParams, minimize_dimerization
from .dmrg import DmrgConfig, allowed_sectors, dmrg_sector, probe_sector
from .freefermion import hplus_flip_count
from .lattice import read_coefficients
from .models import QuantumParams, build_model_mpo
from .mps import write_mps
from .observables import (OBSERVABLES_VERSION, ClassificationError, ObservableSet, PointContext,
                          WindowError, classify_phase, ground_sector, kink_flags, order_parameters,
                          point_record, sector_windows, smf_lower_field,
                          smoothed_magnetization)

log = logging.getLogger(__name__)

ENV_OUTPUT_DIR = "SPINPHONON_OUTPUT_DIR"
ENV_WORKERS = "SPINPHONON_WORKERS"
MODELS = ("full", "effective", "hplus")
CSV_FIELDS = ("g", "h", "N", "D", "energy", "converged", "M_z", "Phi", "D_T", "D_x", "K",
              "K_residual", "phase", "flipped_count")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- configuration

def parse_range(text: str) -> tuple:
    """'start:stop:step' (inclusive stop) or a single value -> (start, stop, step)."""
    parts = str(text).split(":")
    try:
        vals = [float(x) for x in parts]
    except ValueError:
        raise ConfigError(f"cannot parse range {text!r}") from None
    if len(vals) == 1:
        return (vals[0], vals[0], 1.0)
    if len(vals) != 3:
        raise ConfigError(f"range {text!r} must be start:stop:step")
    return tuple(vals)


def range_values(r: tuple) -> np.ndarray:
    start, stop, step = r
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(n), 10)


@dataclass
class SweepConfig:
    g_range: tuple = (0.0, 2.0, 0.02)
    h_range: tuple = (0.0, 2.0, 0.02)
    N: int = 62
    model: str = "full"
    dmrg: DmrgConfig = field(default_factory=DmrgConfig)
    workers: int = 1
    output_dir: Path = Path("spinphonon_out")
    resume: bool = False
    seed: int = 0
    Delta: float = 1.0
    coefficients: str | None = None
    checkpoints: bool = False

    def __post_init__(self):
        self.g_range = tuple(float(x) for x in self.g_range)
        self.h_range = tuple(float(x) for x in self.h_range)
        self.output_dir = Path(self.output_dir)
        for name, r in (("g", self.g_range), ("h", self.h_range)):
            if len(r) != 3 or r[2] <= 0:
                raise ConfigError(f"{name} range needs a positive step")
            if r[1] < r[0]:
                raise ConfigError(f"{name} range is empty")
        if self.g_range[0] < 0 or self.h_range[0] < 0:
            raise ConfigError("g and h must be non-negative")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}")
        if self.N < 24:
            raise ConfigError("N must be at least 24 for the central observable window")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        if self.Delta <= 0:
            raise ConfigError("Delta must be positive")

    @classmethod
    def from_env(cls, **kw) -> "SweepConfig":
        """Build a config, letting environment variables override dir and workers."""
        if os.environ.get(ENV_OUTPUT_DIR):
            kw["output_dir"] = os.environ[ENV_OUTPUT_DIR]
        if os.environ.get(ENV_WORKERS):
            try:
                kw["workers"] = int(os.environ[ENV_WORKERS])
            except ValueError:
                raise ConfigError(f"{ENV_WORKERS} must be an integer") from None
        return cls(**kw)

    @property
    def g_values(self) -> np.ndarray:
        return range_values(self.g_range)

    @property
    def h_values(self) -> np.ndarray:
        return range_values(self.h_range)

    def physics(self) -> dict:
        """Fields that determine numeric output (the hash input)."""
        return {"g_range": self.g_range, "h_range": self.h_range, "N": self.N,
                "model": self.model, "dmrg": asdict(self.dmrg), "seed": self.seed,
                "Delta": self.Delta, "eta": self.eta_record()}

    def config_hash(self) -> str:
        blob = json.dumps(self.physics(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def eta_record(self) -> dict:
        if self.coefficients is None:
            p = QuantumParams(g=0.0, h=0.0)
            return {"eta0": p.eta0, "eta_a": p.eta_a, "eta_b": p.eta_b, "L": p.L}
        rec = read_coefficients(self.coefficients)
        return {"eta0": rec["eta0"], "eta_a": rec["eta_a_over_a"], "eta_b": rec["eta_b_over_a"],
                "L": rec["L_over_a"]}

    def params(self, g: float) -> QuantumParams:
        return QuantumParams(g=float(g), h=0.0, Delta=self.Delta, N=self.N, **self.eta_record())

    def check_output_dir(self):
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            probe = self.output_dir / ".write_probe"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise ConfigError(f"output directory {self.output_dir} is not writable: {exc}") from exc


def sector_seed(seed: int, g: float, S: int) -> int:
    """Deterministic per-(g, sector) seed, independent of grid layout and ordering."""
    key = f"{seed}:{round(float(g), 9)!r}:{int(S)}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "little")


def atomic_write_json(path: Path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=1)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _read_json(path: Path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None


# ---------------------------------------------------------------- one g column

class SectorTable:
    """Lazily solved sectors at fixed g, cached in memory and on disk."""

    def __init__(self, cfg: SweepConfig, g: float, tag: str | None = None, store: bool = True):
        self.cfg, self.g = cfg, float(g)
        self.H = build_model_mpo(cfg.model, cfg.params(g))
        self.sectors = [S for S in allowed_sectors(self.H) if S <= 0]
        self.tag = tag or f"g{self.g:.6f}"
        self.store = store
        self.hash = cfg.config_hash()
        self._data: dict = {}
        self._states: dict = {}

    def _path(self, S: int) -> Path:
        return self.cfg.output_dir / "sectors" / f"{self.tag}_S{S}.json"

    def _load(self, S: int):
        if S in self._data:
            return self._data[S]
        if self.store:
            rec = _read_json(self._path(S))
            if rec is not None and rec.get("config_hash") == self.hash and rec.get("g") == self.g:
                self._data[S] = rec
                return rec
        return None

    def _save(self, S: int):
        if self.store:
            atomic_write_json(self._path(S), self._data[S])

    def _solve(self, S: int):
        dcfg = replace(self.cfg.dmrg, seed=sector_seed(self.cfg.seed, self.g, S))
        psi, rep = dmrg_sector(self.H, S, dcfg)
        self._states[S] = psi
        if self.cfg.checkpoints:
            write_mps(self._path(S).with_suffix(".mps"), psi)
        rec = self._load(S) or {}
        rec.update(config_hash=self.hash, g=self.g, S=S, energy0=rep.final_energy,
                   converged=rep.converged, report=rep.as_dict())
        self._data[S] = rec
        self._save(S)
        log.info("g=%.4f S=%d E=%.10f sweeps=%d converged=%s (%.1fs)", self.g, S,
                 rep.final_energy, rep.sweeps, rep.converged, rep.wall_time)
        return rec

    def record(self, S: int) -> dict:
        if S not in self.sectors:
            raise ConfigError(f"sector {S} is not available")
        return self._load(S) or self._solve(S)

    def energy(self, S: int) -> float:
        return self.record(S)["energy0"]

    def converged(self, S: int) -> bool:
        return self.record(S)["converged"]

    def energies(self) -> dict:
        """Energies of every sector solved so far."""
        return {S: self._data[S]["energy0"] for S in self.sectors if self._load(S) is not None}

    def complete(self) -> dict:
        for S in self.sectors:
            self.record(S)
        return self.energies()

    def observables(self, S: int) -> ObservableSet:
        rec = self.record(S)
        stored = rec.get("observables")
        if stored is not None and stored.get("version") == OBSERVABLES_VERSION:
            return ObservableSet.from_dict(rec["observables"])
        if S not in self._states:  # energy cached on disk but state not kept
            rec = self._solve(S)
        obs = order_parameters(self._states[S])
        rec["observables"] = obs.to_dict()
        self._save(S)
        return obs

    def descend(self, h: float, start: int) -> int:
        """Local minimum of E_S(0) + h S over sectors, starting from ``start``."""
        idx = self.sectors.index(start)

        def e(j):
            return self.energy(self.sectors[j]) + h * self.sectors[j]

        for step in (-1, 1):
            while 0 <= idx + step < len(self.sectors) and e(idx + step) < e(idx):
                idx += step
        return self.sectors[idx]

    def probe(self, h: float = 0.0) -> int:
        """Rough ground sector at field h from a cheap unblocked run."""
        cfg = replace(self.cfg.dmrg, seed=sector_seed(self.cfg.seed, self.g, 1),
                      check_hermitian=False)
        H = build_model_mpo(self.cfg.model, replace(self.cfg.params(self.g), h=float(h))) if h else self.H
        S = probe_sector(H, cfg, allowed_sectors(self.H))
        return min(max(S, self.sectors[0]), self.sectors[-1])


def kink_grid(energies: dict, h_step: float) -> np.ndarray:
    """Field grid reaching past saturation, used for the magnetization-kink search."""
    wins = sector_windows(energies)
    top = wins[-1].h_low if len(wins) > 1 else 1.0
    return range_values((0.0, max(top, h_step) + 2 * h_step, h_step))


def kink_at_or_above(table: SectorTable, h: float, h_step: float) -> float:
    """Highest magnetization kink, searched only down to the field h.

    Sectors are solved from saturation downwards.  With k solved sectors the
    hull is exact above the midpoint of the second-lowest window, so the
    smoothed curve and its kink flags are final there.  The scan stops at the
    first kink (it is the highest one) or once the final region reaches below
    h, returning -inf in the latter case: no kink lies at or above h.
    """
    solved = {}
    for S in sorted(table.sectors):
        solved[S] = table.energy(S)
        wins = sector_windows(solved)
        if len(wins) < 3 or S == max(table.sectors):
            continue
        low = (wins[1].h_low + wins[1].h_high) / 2
        kgrid = kink_grid(solved, h_step)
        flags = kink_flags(kgrid, smoothed_magnetization(solved, table.cfg.N, kgrid))
        final = np.zeros_like(flags)
        final[1:] = kgrid[:-1] >= low
        if np.any(flags & final):
            return float(np.max(kgrid[flags & final]))
        if low <= h - h_step:
            return -np.inf
    kgrid = kink_grid(solved, h_step)
    return smf_lower_field(kgrid, smoothed_magnetization(solved, table.cfg.N, kgrid))


def window_width(energies: dict, S: int) -> float:
    for w in sector_windows(energies):
        if w.sector == S:
            return w.width
    return 0.0


def _record(cfg, table: SectorTable, g, h, S, ctx_kw) -> dict:
    energies = table.energies()
    rec0 = table.record(S)
    converged = bool(rec0["converged"])
    obs = table.observables(S)
    ctx = PointContext(h=float(h), hplus_flips=hplus_flip_count(g, h, cfg.Delta, cfg.N),
                       window_width=window_width(energies, S), converged=converged, **ctx_kw)
    D = rec0["report"]["bond_dim_used"]
    energy = rec0["energy0"] + h * S
    if converged:
        label = classify_phase(obs, ctx)
        rec = point_record(g, h, cfg.N, D, energy, True, obs, label)
        rec["criterion"] = {k: v for k, v in label.criterion.items()
                            if isinstance(v, (int, float, str, bool)) or v is None}
    else:
        rec = point_record(g, h, cfg.N, D, energy, False, obs, None)
    rec["sector"] = int(S)
    rec["config_hash"] = cfg.config_hash()
    return rec


def solve_column(cfg: SweepConfig, gi: int, h_indices=None) -> list:
    """All grid points (or a subset) of one g column; returns (gi, hi, record) tuples."""
    g = float(cfg.g_values[gi])
    hs = cfg.h_values
    h_indices = range(len(hs)) if h_indices is None else h_indices
    table = SectorTable(cfg, g, tag=f"g{gi:04d}")
    energies = table.complete()
    h_step = cfg.h_range[2] if len(hs) > 1 else 0.02
    kgrid = kink_grid(energies, h_step)
    kink = smf_lower_field(kgrid, smoothed_magnetization(energies, cfg.N, kgrid))
    out = []
    for hi in h_indices:
        h = float(hs[hi])
        S = ground_sector(energies, h)
        rec = _record(cfg, table, g, h, S, {"h_step": h_step, "smf_lower_h": kink})
        atomic_write_json(cfg.output_dir / "points" / f"g{gi:04d}_h{hi:04d}.json", rec)
        out.append((gi, hi, rec))
    return out


# ---------------------------------------------------------------- public operations

def run_point(cfg: SweepConfig, g: float, h: float, table: SectorTable | None = None) -> dict:
    """Ground state and phase label at one (g, h).

    The ground sector is found by descent from a cheap probe; the sectors two
    steps on either side are always solved so that the width of the ground
    window is known.  The full sector table is only computed when the
    classifier needs the magnetization kink.
    """
    if g < 0 or h < 0:
        raise ConfigError("g and h must be non-negative")
    cfg.check_output_dir()
    table = table or SectorTable(cfg, g)
    S = table.descend(h, table.probe(h))
    k = table.sectors.index(S)
    for j in range(max(0, k - 2), min(len(table.sectors), k + 3)):
        table.record(table.sectors[j])
    S = table.descend(h, S)
    h_step = cfg.h_range[2]
    rec = _record(cfg, table, g, h, S, {"h_step": h_step,
                                        "smf_lower_h": lambda: kink_at_or_above(table, h, h_step)})
    rec["sector_energies"] = {str(s): e for s, e in table.energies().items()}
    return rec


@dataclass
class SweepResult:
    records: list
    manifest: dict

    @property
    def failed(self) -> list:
        return self.manifest.get("failed", [])

    @property
    def unconverged(self) -> list:
        return [(r["g"], r["h"]) for r in self.records if not r["converged"]]


def _column_job(cfg: SweepConfig, gi: int, h_indices):
    try:
        return gi, solve_column(cfg, gi, h_indices), None
    except (WindowError, ClassificationError, ArithmeticError, ValueError, RuntimeError) as exc:
        log.error("column g index %d failed: %s", gi, exc)
        return gi, [], f"{type(exc).__name__}: {exc}"


def _manifest_path(cfg):
    return cfg.output_dir / "manifest.json"


def run_sweep(cfg: SweepConfig) -> SweepResult:
    """All (g, h) grid points, one worker task per g column.

    Completed points listed in the manifest are skipped on resume; sector
    results already on disk are reused.  A failing column does not stop the
    others; its points are reported in ``manifest['failed']``.
    """
    cfg.check_output_dir()
    t0 = time.perf_counter()
    h_hash = cfg.config_hash()
    old = _read_json(_manifest_path(cfg))
    completed = set()
    if old is not None:
        if not cfg.resume:
            raise ConfigError(f"{cfg.output_dir} already holds a sweep; pass resume or use a new directory")
        if old.get("config_hash") != h_hash:
            raise ConfigError("existing sweep was produced by a different configuration")
        completed = {tuple(p) for p in old.get("completed", [])}
    # a point counts as done only if its record is on disk and matches the config
    completed = {(gi, hi) for gi, hi in completed
                 if (_read_json(cfg.output_dir / "points" / f"g{gi:04d}_h{hi:04d}.json") or {})
                 .get("config_hash") == h_hash}
    ng, nh = len(cfg.g_values), len(cfg.h_values)
    todo = {gi: [hi for hi in range(nh) if (gi, hi) not in completed] for gi in range(ng)}
    todo = {gi: his for gi, his in todo.items() if his}
    manifest = {"config_hash": h_hash, "version": __version__, "config": cfg.physics(),
                "completed": sorted(completed), "failed": [],
                "wall_time": (old or {}).get("wall_time", 0.0)}
    atomic_write_json(_manifest_path(cfg), manifest)

    def finish(gi, recs, err):
        if err is not None:
            manifest["failed"].extend([gi, hi] for hi in todo[gi])
            manifest.setdefault("errors", {})[str(gi)] = err
        for _, hi, _rec in recs:
            completed.add((gi, hi))
        manifest["completed"] = sorted(completed)
        atomic_write_json(_manifest_path(cfg), manifest)

    if cfg.workers == 1 or len(todo) <= 1:
        for gi, his in todo.items():
            finish(*_column_job(cfg, gi, his))
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futs = [pool.submit(_column_job, cfg, gi, his) for gi, his in todo.items()]
            for fut in as_completed(futs):
                finish(*fut.result())
    manifest["wall_time"] += time.perf_counter() - t0
    manifest["completed"] = sorted(completed)
    manifest["failed"] = sorted(manifest["failed"])
    atomic_write_json(_manifest_path(cfg), manifest)
    records = aggregate(cfg)
    return SweepResult(records, manifest)


def aggregate(cfg: SweepConfig, csv_name: str = "phase_diagram.csv") -> list:
    """Collect point records into a CSV, refusing records of another configuration."""
    h_hash = cfg.config_hash()
    records = []
    for path in sorted((cfg.output_dir / "points").glob("g*_h*.json")):
        rec = _read_json(path)
        if rec is None:
            continue
        if rec.get("config_hash") != h_hash:
            raise ConfigError(f"{path.name} belongs to a different configuration")
        records.append(rec)
    records.sort(key=lambda r: (r["g"], r["h"]))
    tmp = cfg.output_dir / f".{csv_name}.tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS + ("sector", "config_hash"), extrasaction="ignore")
        w.writeheader()
        w.writerows(records)
    os.replace(tmp, cfg.output_dir / csv_name)
    return records


def classical_cli(J_values, h_values, params: ClassicalParams = ClassicalParams(), path=None) -> list:
    """Grid of optimal dimerization and triplet fractions; J and h in units of V_L."""
    rows = []
    for J in J_values:
        for h in h_values:
            sol = minimize_dimerization(float(J), float(h), params)
            rows.append({"J": float(J), "h": float(h), "delta_star": sol.delta_star,
                         "dimerized": sol.dimerized, "T_S": sol.T_S, "T_W": sol.T_W,
                         "energy_per_atom": sol.energy_per_atom})
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f".{path.name}.tmp")
        with open(tmp, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["J", "h"])
            w.writeheader()
            w.writerows(rows)
        os.replace(tmp, path)
    return rows
