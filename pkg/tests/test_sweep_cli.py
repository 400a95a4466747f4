import csv
import json
import os
import subprocess
import sys
import time
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
from click.testing import CliRunner

from spinphonon.classical import minimize_dimerization
from spinphonon.cli import main
from spinphonon.dmrg import DmrgConfig
from spinphonon.sweep import (ENV_OUTPUT_DIR, ENV_WORKERS, ConfigError, SweepConfig, aggregate,
                              atomic_write_json, classical_cli, parse_range, range_values,
                              run_point, run_sweep, sector_seed)

FAST = DmrgConfig(D=16, D_retry=24, dE_tol=1e-8, max_sweeps=6)
NUMERIC = ("energy", "M_z", "Phi", "D_T", "D_x")


def cfg_for(tmp_path, **kw):
    base = dict(g_range=(0.2, 0.3, 0.1), h_range=(0.0, 0.1, 0.1), N=24, model="effective",
                dmrg=FAST, output_dir=tmp_path)
    base.update(kw)
    return SweepConfig(**base)


def same_records(a, b, tol=1e-10):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert (x["g"], x["h"], x["phase"], x["sector"]) == (y["g"], y["h"], y["phase"], y["sector"])
        for k in NUMERIC:
            assert abs(x[k] - y[k]) <= tol * max(1.0, abs(x[k]))


def test_parse_range():
    assert parse_range("0:2:0.02") == (0.0, 2.0, 0.02)
    assert parse_range("1.5") == (1.5, 1.5, 1.0)
    assert len(range_values(parse_range("0:2:0.02"))) == 101
    assert range_values((0, 0.3, 0.1))[-1] == 0.3
    for bad in ("a:b:c", "0:1"):
        with pytest.raises(ConfigError):
            parse_range(bad)


@pytest.mark.parametrize("kw", [dict(g_range=(0, 1, 0)), dict(h_range=(1, 0, 0.1)),
                                dict(g_range=(-1, 0, 0.1)), dict(model="xyz"), dict(N=10),
                                dict(workers=0)])
def test_config_validation(tmp_path, kw):
    with pytest.raises(ConfigError):
        cfg_for(tmp_path, **kw)


def test_output_dir_must_be_writable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ConfigError):
        cfg_for(blocker / "sub").check_output_dir()


def test_env_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_OUTPUT_DIR, str(tmp_path / "env"))
    monkeypatch.setenv(ENV_WORKERS, "3")
    cfg = SweepConfig.from_env(N=24)
    assert cfg.output_dir == tmp_path / "env" and cfg.workers == 3
    monkeypatch.setenv(ENV_WORKERS, "many")
    with pytest.raises(ConfigError):
        SweepConfig.from_env()


def test_hash_ignores_execution_settings(tmp_path):
    a = cfg_for(tmp_path)
    assert a.config_hash() == cfg_for(tmp_path / "x", workers=4, resume=True).config_hash()
    assert a.config_hash() != cfg_for(tmp_path, seed=1).config_hash()
    assert a.config_hash() != cfg_for(tmp_path, N=26).config_hash()


def test_sector_seed_stable():
    assert sector_seed(0, 0.3, -2) == sector_seed(0, 0.30000000001, -2)
    assert sector_seed(0, 0.3, -2) != sector_seed(0, 0.3, -4)
    assert sector_seed(0, 0.3, -2) != sector_seed(1, 0.3, -2)


def test_atomic_write(tmp_path):
    atomic_write_json(tmp_path / "a" / "r.json", {"x": 1})
    assert json.loads((tmp_path / "a" / "r.json").read_text()) == {"x": 1}
    assert [p.name for p in (tmp_path / "a").iterdir()] == ["r.json"]


def test_run_point_zero_coupling(tmp_path):
    cfg = cfg_for(tmp_path, model="full", N=24)
    rec = run_point(cfg, 0.0, 1.0)
    assert rec["phase"] == "P" and rec["converged"]
    assert rec["energy"] == pytest.approx(-24 * 2.0, abs=1e-9)
    assert rec["flipped_count"] == 0


def test_run_point_deterministic(tmp_path):
    a = run_point(cfg_for(tmp_path / "a"), 0.3, 0.05)
    b = run_point(cfg_for(tmp_path / "b"), 0.3, 0.05)
    same_records([a], [b])
    with pytest.raises(ConfigError):
        run_point(cfg_for(tmp_path / "c"), 0.3, -0.1)


def test_sweep_two_by_two(tmp_path):
    cfg = cfg_for(tmp_path)
    res = run_sweep(cfg)
    assert len(res.records) == 4 and not res.failed
    assert {(r["g"], r["h"]) for r in res.records} == {(0.2, 0.0), (0.2, 0.1), (0.3, 0.0), (0.3, 0.1)}
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["config_hash"] == cfg.config_hash() and len(man["completed"]) == 4
    assert all(r["config_hash"] == cfg.config_hash() for r in res.records)
    rows = list(csv.DictReader(open(tmp_path / "phase_diagram.csv")))
    assert len(rows) == 4
    # refuse to overwrite without resume, refuse to resume with another config
    with pytest.raises(ConfigError):
        run_sweep(cfg)
    with pytest.raises(ConfigError):
        run_sweep(cfg_for(tmp_path, seed=5, resume=True))
    # resuming a finished sweep does nothing and returns the same records
    t0 = time.perf_counter()
    again = run_sweep(cfg_for(tmp_path, resume=True))
    assert time.perf_counter() - t0 < 5
    same_records(res.records, again.records, tol=0)


def test_aggregation_rejects_foreign_records(tmp_path):
    cfg = cfg_for(tmp_path)
    run_sweep(cfg)
    path = next((tmp_path / "points").glob("*.json"))
    rec = json.loads(path.read_text())
    rec["config_hash"] = "0" * 16
    path.write_text(json.dumps(rec))
    with pytest.raises(ConfigError):
        aggregate(cfg)


def test_workers_do_not_change_results(tmp_path):
    a = run_sweep(cfg_for(tmp_path / "serial"))
    b = run_sweep(cfg_for(tmp_path / "pool", workers=2))
    same_records(a.records, b.records)


def test_partial_failure_reported(tmp_path, monkeypatch):
    import spinphonon.sweep as sw
    real = sw.solve_column

    def flaky(cfg, gi, his):
        if gi == 1:
            raise RuntimeError("synthetic failure")
        return real(cfg, gi, his)

    monkeypatch.setattr(sw, "solve_column", flaky)
    res = run_sweep(cfg_for(tmp_path))
    assert sorted(map(tuple, res.failed)) == [(1, 0), (1, 1)]
    assert len(res.records) == 2
    monkeypatch.setattr(sw, "solve_column", real)
    res = run_sweep(cfg_for(tmp_path, resume=True))
    assert len(res.records) == 4 and not res.failed


def _sweep_cmd(out):
    code = "from spinphonon.cli import main; main()"
    return [sys.executable, "-c", code, "sweep", "--g", "0.1:0.3:0.1", "--h", "0:0.1:0.1",
            "--n", "24", "--bond", "16", "--d-retry", "24", "--tol", "1e-8", "--model", "effective",
            "--output-dir", str(out)]


def test_crash_and_resume(tmp_path):
    ref = tmp_path / "ref"
    assert subprocess.run(_sweep_cmd(ref), capture_output=True).returncode == 0
    out = tmp_path / "crash"
    proc = subprocess.Popen(_sweep_cmd(out), stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
    deadline = time.time() + 300
    while time.time() < deadline:
        man = (out / "manifest.json")
        done = json.loads(man.read_text())["completed"] if man.exists() else []
        if len(done) >= 2:
            break
        time.sleep(0.05)
    proc.kill()
    proc.wait()
    done = json.loads((out / "manifest.json").read_text())["completed"]
    assert 2 <= len(done) < 6, "the sweep should have been interrupted mid-way"
    resumed = subprocess.run(_sweep_cmd(out) + ["--resume"], capture_output=True)
    assert resumed.returncode == 0, resumed.stderr
    a = list(csv.DictReader(open(ref / "phase_diagram.csv")))
    b = list(csv.DictReader(open(out / "phase_diagram.csv")))
    assert len(a) == 6
    for x, y in zip(a, b):
        assert x["phase"] == y["phase"] and x["sector"] == y["sector"]
        assert abs(float(x["energy"]) - float(y["energy"])) < 1e-10


def test_classical_cli(tmp_path):
    rows = classical_cli([0.0, 1.0], [0.0, 0.5], path=tmp_path / "c.csv")
    assert all(r["delta_star"] == 0 for r in rows if r["J"] == 0)
    for r in rows:
        sol = minimize_dimerization(r["J"], r["h"])
        assert r["delta_star"] == sol.delta_star and r["T_S"] == sol.T_S
    assert len(list(csv.DictReader(open(tmp_path / "c.csv")))) == 4


# ---------------------------------------------------------------- command line

def test_cli_exit_codes(tmp_path):
    r = CliRunner()
    res = r.invoke(main, ["sweep", "--g", "0:1:0", "--output-dir", str(tmp_path)])
    assert res.exit_code == 2
    res = r.invoke(main, ["classical", "--step", "-1", "--output-dir", str(tmp_path)])
    assert res.exit_code == 2
    res = r.invoke(main, ["dmrg", "--g", "0.3", "--h", "0", "--n", "8", "--output-dir", str(tmp_path)])
    assert res.exit_code == 2
    res = r.invoke(main, ["ed", "--n", "11", "--g", "1", "--h", "0"])
    assert res.exit_code == 2


def test_cli_unconverged_exit(tmp_path):
    res = CliRunner().invoke(main, ["dmrg", "--g", "1.7", "--h", "0.2", "--n", "24", "--bond", "2",
                                    "--d-retry", "2", "--sweeps", "1", "--tol", "1e-14",
                                    "--output-dir", str(tmp_path)])
    assert res.exit_code == 4
    rec = json.loads(next(tmp_path.glob("point_*.json")).read_text())
    assert rec["converged"] is False and rec["phase"] is None


def test_cli_ed_json():
    res = CliRunner().invoke(main, ["ed", "--n", "4", "--g", "0", "--h", "0.5"])
    assert res.exit_code == 0
    out = json.loads(res.output)
    assert out["energy"] == pytest.approx(-6.0) and out["sector"] == -4


def test_cli_dmrg_and_wannier_and_classical(tmp_path, monkeypatch):
    r = CliRunner()
    res = r.invoke(main, ["wannier", "--output-dir", str(tmp_path)])
    assert res.exit_code == 0
    rec = json.loads((tmp_path / "coefficients.json").read_text())
    assert abs(rec["eta0"] - 0.54) < 0.02
    res = r.invoke(main, ["dmrg", "--g", "0.3", "--h", "0.2", "--n", "24", "--bond", "16",
                          "--model", "effective", "--coefficients", str(tmp_path / "coefficients.json"),
                          "--output-dir", str(tmp_path)])
    assert res.exit_code == 0, res.output
    assert json.loads(res.output)["phase"] == "P"
    monkeypatch.setenv(ENV_OUTPUT_DIR, str(tmp_path / "envdir"))
    res = r.invoke(main, ["classical", "--j-max", "1", "--h-max", "0.5", "--step", "0.5"])
    assert res.exit_code == 0
    assert len(list(csv.DictReader(open(tmp_path / "envdir" / "classical.csv")))) == 6


def test_cli_sweep_and_plot(tmp_path):
    pytest.importorskip("matplotlib")
    res = CliRunner().invoke(main, ["sweep", "--g", "0.3", "--h", "0:0.1:0.1", "--n", "24",
                                    "--bond", "16", "--model", "effective", "--plot",
                                    "--output-dir", str(tmp_path)])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "phase_diagram.png").stat().st_size > 0
    assert (tmp_path / "magnetization.png").exists()


class _SyntheticTable:
    """Sector energies with prescribed window edges; counts the sectors solved."""

    def __init__(self, edges, N=24):
        self.cfg = SimpleNamespace(N=N)
        self.sectors = list(range(-N, 1, 2))
        self._E = {0: 0.0}
        for k, b in enumerate(edges, start=1):
            self._E[-2 * k] = self._E[-2 * k + 2] + 2 * b
        self.solved = set()

    def energy(self, S):
        self.solved.add(S)
        return self._E[S]


def test_partial_kink_scan_agrees_with_full_table():
    from spinphonon.sweep import kink_at_or_above, kink_grid
    from spinphonon.observables import smf_lower_field, smoothed_magnetization
    # narrow windows up to h = 0.12, then wide ones: M(h) flattens there
    edges = np.concatenate([0.02 * np.arange(1, 7), 0.12 + 0.1 * np.arange(1, 7)])
    E = _SyntheticTable(edges)._E
    kg = kink_grid(E, 0.005)
    ref = smf_lower_field(kg, smoothed_magnetization(E, 24, kg))
    assert 0.1 < ref < 0.2
    for h in (0.0, ref - 0.01, ref, ref + 0.01, 0.5):
        table = _SyntheticTable(edges)
        got = kink_at_or_above(table, h, 0.005)
        if ref >= h:
            assert got == ref
        else:
            assert got < h
    # a point far above the kink stops the downward scan early
    table = _SyntheticTable(edges)
    kink_at_or_above(table, 0.5, 0.005)
    assert len(table.solved) < len(table.sectors)


def test_partial_kink_scan_without_kink(tmp_path):
    from spinphonon.sweep import SectorTable, kink_at_or_above, kink_grid
    from spinphonon.observables import smf_lower_field, smoothed_magnetization
    cfg = cfg_for(tmp_path, N=24, h_range=(0.0, 0.2, 0.005))
    E = SectorTable(cfg, 0.3, store=False).complete()
    kg = kink_grid(E, 0.005)
    assert smf_lower_field(kg, smoothed_magnetization(E, 24, kg)) == -np.inf
    for h in (0.0, 0.05, 0.2):
        assert kink_at_or_above(SectorTable(cfg, 0.3), h, 0.005) < h
