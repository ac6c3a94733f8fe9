import json
import math

import numpy as np
import pytest

from cocycle_kam import cli, spectral
from cocycle_kam.frequency import torus_distance


def run(tmp_path, cmd, cfg, *extra, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return cli.main([cmd, "--config", str(path), "--out", str(tmp_path / "out"), *extra])


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0], [list(map(float, ln.split(","))) for ln in lines[1:]]


def test_kam_run_free(tmp_path):
    assert run(tmp_path, "kam-run", {"model": {"lam": 0.0}, "kam": {"E": 0.5}}) == 0
    out = json.loads((tmp_path / "out" / "kam_run.json").read_text())
    assert out["header"]["stop_cause"] == "max_steps"
    assert all(s["branch"] == "NonResonant" and s["f_prime_c0"] == 0 for s in out["steps"])


def test_kam_run_amo(tmp_path):
    assert run(tmp_path, "kam-run", {"model": {"lam": 1e-4}, "kam": {"E": 0.0}}) == 0
    out = json.loads((tmp_path / "out" / "kam_run.json").read_text())
    assert len(out["steps"]) >= 3
    assert out["separation"]["pass"] and "ck0" in out
    first = out["steps"][0]
    if first["branch"] == "Resonant":
        # the chosen site resonates with the unperturbed constant, checked from scratch
        rho = math.acos(0.0)
        alpha = out["header"]["alpha"][0]
        d = torus_distance(2 * rho - first["n_star"][0] * alpha)
        assert min(d, torus_distance(-2 * rho - first["n_star"][0] * alpha)) < first["eps_used"] ** 0.16


def test_kam_run_gate_violation(tmp_path):
    assert run(tmp_path, "kam-run", {"model": {"lam": 10.0}}) == 2


def test_config_errors(tmp_path, capsys):
    assert run(tmp_path, "kam-run", {"model": {"lam": 0.0}, "bogus": 1}) == 1
    assert run(tmp_path, "kam-run", {"model": {"lam": 0.0, "colour": 1}}) == 1
    assert run(tmp_path, "kam-run", {"scheme": {"sigma": 0.5}}) == 1
    assert cli.main(["kam-run", "--config", str(tmp_path / "missing.json")]) == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate", "--config", "x"])
    assert exc.value.code == 1
    assert "config error" in capsys.readouterr().err


def test_dry_run(tmp_path, capsys):
    assert run(tmp_path, "kam-run", {"model": {"lam": 1e-4}}, "--dry-run") == 0
    gv = json.loads(capsys.readouterr().out)
    assert gv["ck_norm"] <= gv["gate"] and len(gv["steps"]) >= 2
    assert all(s["N"] > 0 and s["eps"] > 0 for s in gv["steps"])
    assert not (tmp_path / "out" / "kam_run.json").exists()
    assert run(tmp_path, "kam-run", {"model": {"lam": 10.0}}, "--dry-run") == 2


def test_sweep_free_ids_law(tmp_path):
    cfg = {"model": {"lam": 0.0}, "sweep": {"min": -3, "max": 3, "count": 601, "n_iters": 5000}}
    assert run(tmp_path, "sweep", cfg) == 0
    header, rows = read_csv(tmp_path / "out" / "sweep.csv")
    assert header == cli.SWEEP_HEADER and len(rows) == 601
    E = np.array([r[0] for r in rows])
    ids = np.array([r[4] for r in rows])
    law = np.where(E <= -2, 0.0, np.where(E >= 2, 1.0, 1 - np.arccos(np.clip(E / 2, -1, 1)) / math.pi))
    assert np.abs(ids - law).max() <= 5e-3
    assert all(E[i] < E[i + 1] for i in range(600))
    assert not (tmp_path / "out" / "sweep.csv.checkpoint").exists()


def test_sweep_empty_grid(tmp_path):
    assert run(tmp_path, "sweep", {"model": {"lam": 0.0}, "sweep": {"list": []}}) == 0
    assert (tmp_path / "out" / "sweep.csv").read_text() == cli.SWEEP_HEADER + "\n"


def test_sweep_byte_identical(tmp_path):
    cfg = {"model": {"lam": 0.3}, "sweep": {"min": -2.5, "max": 2.5, "count": 11, "n_iters": 2000}}
    assert run(tmp_path, "sweep", cfg, "--seed", "3") == 0
    first = (tmp_path / "out" / "sweep.csv").read_bytes()
    assert run(tmp_path, "sweep", cfg, "--seed", "3") == 0
    assert (tmp_path / "out" / "sweep.csv").read_bytes() == first
    assert b"\r" not in first


def test_sweep_checkpoint_resume(tmp_path, monkeypatch):
    cfg = {"model": {"lam": 0.3}, "sweep": {"min": -2.5, "max": 2.5, "count": 20, "n_iters": 2000}}
    assert run(tmp_path, "sweep", cfg) == 0
    want = (tmp_path / "out" / "sweep.csv").read_bytes()
    (tmp_path / "out" / "sweep.csv").unlink()

    real = spectral.sweep
    calls = []

    def flaky(*a, **k):
        calls.append(1)
        if len(calls) > 1:
            raise KeyboardInterrupt
        return real(*a, **k)

    monkeypatch.setattr(spectral, "sweep", flaky)
    with pytest.raises(KeyboardInterrupt):
        run(tmp_path, "sweep", cfg)
    ck = (tmp_path / "out" / "sweep.csv.checkpoint").read_text().splitlines()
    assert len(ck) == 8
    monkeypatch.setattr(spectral, "sweep", real)
    seen = []
    monkeypatch.setattr(spectral, "sweep", lambda m, grid, *a, **k: seen.extend(grid) or real(m, grid, *a, **k))
    assert run(tmp_path, "sweep", cfg) == 0
    assert len(seen) == 12
    assert (tmp_path / "out" / "sweep.csv").read_bytes() == want


def test_stratify_ten_points(tmp_path):
    cfg = {"model": {"lam": 1e-4}, "sweep": {"min": -1.5, "max": 1.5, "count": 10},
           "scheme": {"max_steps": 2}, "stratify": {"checks": False}}
    assert run(tmp_path, "stratify", cfg) == 0
    out = json.loads((tmp_path / "out" / "stratify.json").read_text())
    assert [e["E"] for e in out] == pytest.approx(list(np.linspace(-1.5, 1.5, 10)))
    alpha = 2 * math.pi * (math.sqrt(5) - 1) / 2
    for e in out:
        assert e["m"] is not None
        if e["m"] == 1:
            # independent check: the site resonates with the free rotation arccos(E/2)
            rho = math.acos(e["E"] / 2)
            n = e["n_star"][0]
            assert min(torus_distance(2 * rho - n * alpha), torus_distance(-2 * rho - n * alpha)) < 0.25


def test_holder_free_interior(tmp_path):
    cfg = {"model": {"lam": 0.0}, "holder": {"ids": [{"E": 0.0, "eps": [0.02, 0.07, 0.2, 0.7]}]}}
    assert run(tmp_path, "holder", cfg) == 0
    fit = json.loads((tmp_path / "out" / "holder.json").read_text())["fits"][0]
    assert fit["exponent"] == pytest.approx(1.0, abs=0.05)


def test_cover_empty_stratum(tmp_path):
    cfg = {"model": {"lam": 0.0}, "sweep": {"list": [0.3, 1.1]}, "cover": {"m": [1]}}
    assert run(tmp_path, "cover", cfg) == 0
    rep = json.loads((tmp_path / "out" / "cover.json").read_text())["reports"][0]
    assert rep["count"] == 0 and rep["bound"] == 0.0


def test_spectrum_coarse_grid_is_numeric_failure(tmp_path):
    cfg = {"model": {"lam": 0.1}, "sweep": {"min": -1, "max": 1, "count": 11}}
    assert run(tmp_path, "spectrum", cfg) == 4


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "cocycle_kam", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "kam-run" in res.stdout
