"""``spinphonon`` command line.

Exit codes: 0 success, 2 configuration error, 3 some grid points failed,
4 some results are flagged as unconverged.
"""

from __future__ import annotations

import json
from collections import Counter
import logging
import sys
from pathlib import Path

import click

from .dmrg import DmrgConfig
from .sweep import (ENV_OUTPUT_DIR, ENV_WORKERS, ConfigError, SweepConfig, atomic_write_json,
                    classical_cli, parse_range, range_values, run_point, run_sweep)

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_UNCONVERGED = 0, 2, 3, 4

out_dir_option = click.option("--output-dir", "-o", envvar=ENV_OUTPUT_DIR, default="spinphonon_out",
                              show_default=True, type=click.Path(file_okay=False),
                              help=f"Output directory (env {ENV_OUTPUT_DIR}).")


def _fail(msg: str, code: int = EXIT_CONFIG):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _dump(obj):
    click.echo(json.dumps(obj, indent=1, default=float))


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for progress, -vv for DMRG sweeps.")
def main(verbose):
    """Spin-motion chains: Wannier coefficients, classical dimerization, DMRG and ED."""
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(message)s")


@main.command()
@click.option("--vl", type=float, default=20.0, show_default=True, help="Trap depth in E_R.")
@click.option("--l-over-a", type=float, default=2.0, show_default=True, help="Interaction range L/a.")
@out_dir_option
def wannier(vl, l_over_a, output_dir):
    """Wannier overlaps eta_0, eta_a, eta_b and the band gap."""
    from .lattice import LatticeError, LatticeSpec, coefficient_record, write_coefficients
    try:
        rec = coefficient_record(LatticeSpec(V_L_over_ER=vl, L_over_a=l_over_a))
    except (ValueError, LatticeError) as exc:
        _fail(str(exc))
    path = Path(output_dir) / "coefficients.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_coefficients(path, rec)
    _dump(rec)


@main.command()
@click.option("--j-max", type=float, default=2.0, show_default=True, help="Largest J in units of V_L.")
@click.option("--h-max", type=float, default=1.0, show_default=True, help="Largest field in units of V_L.")
@click.option("--step", type=float, default=0.02, show_default=True, help="Grid step for J and h.")
@click.option("--h-step", type=float, default=None, help="Separate field step (defaults to --step).")
@click.option("--plot", is_flag=True, help="Also render a PNG (needs matplotlib).")
@out_dir_option
def classical(j_max, h_max, step, h_step, plot, output_dir):
    """Optimal classical dimerization and triplet fractions on a (J, h) grid."""
    if step <= 0 or (h_step is not None and h_step <= 0) or j_max < 0 or h_max < 0:
        _fail("grid bounds must be non-negative and steps positive")
    J = range_values((0.0, j_max, step))
    h = range_values((0.0, h_max, h_step or step))
    path = Path(output_dir) / "classical.csv"
    rows = classical_cli(J, h, path=path)
    if plot:
        from .plotting import classical_map
        classical_map(rows, path.with_suffix(".png"))
    click.echo(f"wrote {len(rows)} rows to {path}")


def _dmrg_config(bond, tol, d_retry, sweeps, seed):
    return DmrgConfig(D=bond, dE_tol=tol, D_retry=max(d_retry or int(round(1.4 * bond)), bond),
                      max_sweeps=sweeps, seed=seed)


dmrg_options = [
    click.option("--n", "N", type=int, default=62, show_default=True, help="Number of atoms."),
    click.option("--bond", type=int, default=100, show_default=True, help="Bond dimension D."),
    click.option("--tol", type=float, default=1e-7, show_default=True, help="Relative energy tolerance."),
    click.option("--d-retry", type=int, default=None, help="Escalation bond dimension (default 1.4 D)."),
    click.option("--sweeps", type=int, default=6, show_default=True, help="Sweeps before escalation."),
    click.option("--model", type=click.Choice(["full", "effective", "hplus"]), default="full",
                 show_default=True),
    click.option("--seed", type=int, default=0, show_default=True),
    click.option("--coefficients", type=click.Path(dir_okay=False, exists=True), default=None,
                 help="Coefficient JSON from `spinphonon wannier` (defaults: V_L = 20 E_R, L = 2a)."),
]


def _with(options):
    def deco(f):
        for opt in reversed(options):
            f = opt(f)
        return f
    return deco


@main.command()
@click.option("--g", type=float, required=True, help="Coupling g in units of Delta.")
@click.option("--h", type=float, required=True, help="Field h in units of Delta.")
@_with(dmrg_options)
@click.option("--plot", is_flag=True, help="Also render the site profiles (needs matplotlib).")
@out_dir_option
def dmrg(g, h, N, bond, tol, d_retry, sweeps, model, seed, coefficients, plot, output_dir):
    """Ground state and phase label at a single (g, h)."""
    try:
        cfg = SweepConfig(g_range=(g, g, 1.0), h_range=(h, h, 0.02), N=N, model=model,
                          dmrg=_dmrg_config(bond, tol, d_retry, sweeps, seed), seed=seed,
                          output_dir=output_dir, coefficients=coefficients)
        rec = run_point(cfg, g, h)
    except (ConfigError, ValueError) as exc:
        _fail(str(exc))
    path = Path(output_dir) / f"point_g{g:g}_h{h:g}.json"
    atomic_write_json(path, rec)
    if plot:
        from .plotting import profiles
        sec = json.loads((Path(output_dir) / "sectors" / f"g{g:.6f}_S{rec['sector']}.json").read_text())
        profiles(sec["observables"], path.with_suffix(".png"))
    _dump({k: v for k, v in rec.items() if k != "sector_energies"})
    if not rec["converged"]:
        sys.exit(EXIT_UNCONVERGED)


@main.command()
@click.option("--g", "g_text", default="0:2:0.02", show_default=True, help="start:stop:step in Delta.")
@click.option("--h", "h_text", default="0:2:0.02", show_default=True, help="start:stop:step in Delta.")
@_with(dmrg_options)
@click.option("--workers", type=int, envvar=ENV_WORKERS, default=1, show_default=True,
              help=f"Worker processes (env {ENV_WORKERS}).")
@click.option("--resume", is_flag=True, help="Skip points already completed in the output directory.")
@click.option("--checkpoints", is_flag=True, help="Keep binary MPS checkpoints of every sector.")
@click.option("--plot", is_flag=True, help="Also render phase-diagram PNGs (needs matplotlib).")
@out_dir_option
def sweep(g_text, h_text, N, bond, tol, d_retry, sweeps, model, seed, coefficients, workers, resume,
          checkpoints, plot, output_dir):
    """Parallel (g, h) grid with checkpoint/resume; writes phase_diagram.csv."""
    try:
        cfg = SweepConfig(g_range=parse_range(g_text), h_range=parse_range(h_text), N=N, model=model,
                          dmrg=_dmrg_config(bond, tol, d_retry, sweeps, seed), workers=workers,
                          output_dir=output_dir, resume=resume, seed=seed, coefficients=coefficients,
                          checkpoints=checkpoints)
        res = run_sweep(cfg)
    except (ConfigError, ValueError) as exc:
        _fail(str(exc))
    if plot:
        from .plotting import magnetization_curves, phase_diagram
        phase_diagram(res.records, cfg.output_dir / "phase_diagram.png")
        magnetization_curves(res.records, cfg.output_dir / "magnetization.png")
    counts = dict(sorted(Counter(str(r["phase"]) for r in res.records).items()))
    click.echo(f"{len(res.records)} points, phases {counts}, hash {res.manifest['config_hash']}")
    if res.failed:
        click.echo(f"{len(res.failed)} points failed: see {cfg.output_dir / 'manifest.json'}", err=True)
        sys.exit(EXIT_PARTIAL)
    if res.unconverged:
        click.echo(f"{len(res.unconverged)} points unconverged", err=True)
        sys.exit(EXIT_UNCONVERGED)


@main.command()
@click.option("--n", "N", type=int, default=8, show_default=True, help="Number of atoms (4^N <= 4^10).")
@click.option("--g", type=float, required=True)
@click.option("--h", type=float, required=True)
@click.option("--model", type=click.Choice(["full", "effective", "hplus"]), default="full", show_default=True)
@click.option("--sector", type=int, default=None, help="Restrict to one total sigma^z sector.")
def ed(N, g, h, model, sector):
    """Exact ground energy (and all sector energies) of a short chain."""
    from .ed import EDError, dense_from_mpo, ground_energy_by_sector, ground_state_exact
    from .models import QuantumParams, build_model_mpo
    try:
        m = dense_from_mpo(build_model_mpo(model, QuantumParams(g=g, h=h, N=N)))
        if sector is not None:
            e, _ = ground_state_exact(m, sector)
            _dump({"N": N, "g": g, "h": h, "model": model, "sector": sector, "energy": e})
            return
        by = ground_energy_by_sector(m)
    except (ValueError, EDError) as exc:
        _fail(str(exc))
    best = min(by, key=lambda s: (by[s], s))
    _dump({"N": N, "g": g, "h": h, "model": model, "energy": by[best], "sector": best,
           "M_z": best / (2 * N), "sector_energies": {str(s): e for s, e in by.items()}})


if __name__ == "__main__":
    main()
