"""cocycle-kam command line driver.

Every subcommand reads one JSON config (--config), writes its artifacts under
--out (or outputs.dir) and is deterministic for a fixed config and --seed.

Exit codes: 0 ok, 1 bad config/usage, 2 entry gate, 3 failed audit or check, 4 numeric failure.
"""
import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from .cocycle import csv_row, OrbitStats
from .fourier import FourierSeries
from .frequency import Frequency
from .kam_scheme import (SchemeError, SchemeParams, calibrate_c, eps_schedule, run_scheme, schedule,
                         verify_resonance_separation, ck0_report)
from .kam_step import GateError, KamError, KamParams, window_N
from .lie2 import Lie2Error
from . import spectral

log = logging.getLogger("cocycle_kam")

EXIT_OK, EXIT_CONFIG, EXIT_GATE, EXIT_AUDIT, EXIT_NUMERIC = 0, 1, 2, 3, 4
SWEEP_HEADER = "E,le,le_err,rho,ids,uh_flag"

TOP_KEYS = {"model", "scheme", "kam", "sweep", "holder", "stratify", "cover", "spectrum", "outputs", "seed"}
SECTION_KEYS = {
    "model": {"potential", "lam", "theta", "frequency"},
    "kam": {"E", "horizon"},
    "sweep": {"min", "max", "count", "list", "n_iters", "n_phases", "horizon"},
    "holder": {"ids", "le", "n_iters"},
    "stratify": {"checks", "n_iters", "c_h", "n_phases"},
    "cover": {"m", "C", "n_phases", "budget"},
    "spectrum": {"n_sites", "n_phases", "horizon"},
    "outputs": {"dir", "checkpoint", "conjugations"},
}
SCHEME_KEYS = {"k", "sigma", "s", "M", "D", "D_tilde", "c_user", "t_sep", "max_steps", "k0", "slack", "s_f", "floor"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: spectral.SchrodingerModel
    scheme: SchemeParams
    grid: np.ndarray
    sections: dict
    out_dir: str
    checkpoint: bool
    conjugations: bool
    seed: int
    raw: dict


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object")
    extra = set(obj) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


def _potential(spec):
    if spec in (None, "almost_mathieu"):
        return FourierSeries.from_modes({(1,): 1.0, (-1,): 1.0}, 1, "real")
    if isinstance(spec, dict) and set(spec) == {"modes"}:
        # [[n..., re, im], ...]; n is a list of ints
        modes = {}
        for row in spec["modes"]:
            n, re, im = row
            modes[tuple(int(x) for x in np.atleast_1d(n))] = complex(re, im)
        dim = len(next(iter(modes))) if modes else 1
        return FourierSeries.from_modes(modes, dim, "real")
    raise ConfigError("model.potential must be 'almost_mathieu' or {'modes': [[n, re, im], ...]}")


def _grid(sweep):
    if "list" in sweep:
        if {"min", "max", "count"} & set(sweep):
            raise ConfigError("sweep takes either list or min/max/count")
        return np.asarray(sorted(float(x) for x in sweep["list"]))
    if not sweep:
        return np.zeros(0)
    try:
        lo, hi, n = float(sweep["min"]), float(sweep["max"]), int(sweep["count"])
    except KeyError as exc:
        raise ConfigError(f"sweep grid needs min, max and count (missing {exc})") from None
    if n < 0 or hi < lo or not (math.isfinite(lo) and math.isfinite(hi)):
        raise ConfigError("bad sweep grid")
    return np.linspace(lo, hi, n) if n != 1 else np.array([lo])


def load_config(obj, out=None, seed=None, slack=None, conjugations=False):
    _check_keys(obj, TOP_KEYS, "config")
    for name, allowed in SECTION_KEYS.items():
        _check_keys(obj.get(name, {}), allowed, name)
    sch = dict(obj.get("scheme", {}))
    _check_keys(sch, SCHEME_KEYS, "scheme")
    if slack is not None:
        sch["slack"] = float(slack)
    m = obj.get("model", {})
    try:
        freq = Frequency.from_config(m.get("frequency", {}))
        V = _potential(m.get("potential"))
        model = spectral.SchrodingerModel(V, float(m.get("lam", 0.0)), freq, float(m.get("theta", 0.0)))
        scheme = SchemeParams(**sch).resolve(freq.tau)
    except (ValueError, TypeError, spectral.SpectralError) as exc:
        raise ConfigError(str(exc)) from None
    seed = int(obj.get("seed", 0) if seed is None else seed)
    if seed:
        # the seed only moves the base phase of every orbit family
        model.theta = float(model.theta + np.random.default_rng(seed).uniform(0, 2 * math.pi))
    outputs = obj.get("outputs", {})
    return RunConfig(model=model, scheme=scheme, grid=_grid(obj.get("sweep", {})),
                     sections={k: obj.get(k, {}) for k in SECTION_KEYS}, out_dir=out or outputs.get("dir", "."),
                     checkpoint=bool(outputs.get("checkpoint", True)),
                     conjugations=bool(conjugations or outputs.get("conjugations", False)), seed=seed, raw=obj)


def _clean(x):
    """JSON-safe copy: numpy scalars/arrays to lists, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def _write_json(path, obj):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        json.dump(_clean(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")
    log.info("wrote %s", path)


def _header(cfg):
    return {"frequency": cfg.model.freq.header(), "lam": cfg.model.lam, "theta": cfg.model.theta, "seed": cfg.seed}


# -- dry run --------------------------------------------------------------------------------------

def gate_values(cfg, E=0.0):
    """Entry gate, scale schedule l_j, eps_{l_j} and truncation windows N_j, without running anything."""
    p, freq = cfg.scheme, cfg.model.freq
    A, f = spectral.normal_form(cfg.model, E)
    normA = float(np.linalg.norm(A, 2))
    gate = (4 * normA) ** -4
    ls = schedule(p.M, p.s, p.max_steps + 1)
    if p.c_user == "auto":
        e1 = f.analytic_norm(1.0 / ls[0])
        c = calibrate_c(e1 if e1 > 0 else gate, ls[0], normA, p, freq.tau)
    else:
        c = float(p.c_user)
    rows = []
    for a, b in zip(ls, ls[1:]):
        eps = eps_schedule(a, c, normA, p, freq.tau)
        kp = KamParams(1.0 / a, 1.0 / b, p.sigma, freq.kappa, freq.tau, eps, slack=p.slack, D=p.D,
                       D_tilde=p.D_tilde)
        # no truncation window exists once eps reaches 1 (far outside the gate)
        rows.append({"l": a, "eps": eps, "N": window_N(kp) if eps < 1 else None})
    return {"E": E, "gate": gate, "ck_norm": f.ck_norm(p.k), "k": p.k, "c": c, "steps": rows}


# -- subcommands ----------------------------------------------------------------------------------

def cmd_kam_run(cfg, jobs=1):
    sec = cfg.sections["kam"]
    E = float(sec.get("E", 0.0))
    try:
        A, f = spectral.normal_form(cfg.model, E)
        run = run_scheme(A, f, cfg.scheme, cfg.model.freq, horizon=int(sec.get("horizon", 1000)),
                         keep_conjugations=cfg.conjugations)
    except GateError as exc:
        log.error("gate: %s", exc)
        return EXIT_GATE
    except (KamError, SchemeError, Lie2Error, spectral.SpectralError) as exc:
        log.error("numeric: %s", exc)
        return EXIT_NUMERIC
    out = run.to_json(cfg.model.freq, cfg.conjugations)
    out["header"].update(_header(cfg))
    out["header"]["E"] = E
    sep_ok, pairs = verify_resonance_separation(run.records, cfg.scheme.t_sep)
    out["separation"] = {"pass": sep_ok, "pairs": pairs}
    if run.records:
        out["ck0"] = ck0_report(run.records, cfg.scheme.k0, cfg.scheme, cfg.model.freq.tau)
    _write_json(os.path.join(cfg.out_dir, "kam_run.json"), out)
    if run.stop_cause == "numeric":
        return EXIT_NUMERIC
    return EXIT_OK if run.passed else EXIT_AUDIT


def _sweep_key(E):
    return repr(float(E))


def cmd_sweep(cfg, jobs=1):
    sec = cfg.sections["sweep"]
    n_iters, n_phases = int(sec.get("n_iters", 20_000)), int(sec.get("n_phases", 8))
    horizon = int(sec.get("horizon", 64))
    path = os.path.join(cfg.out_dir, "sweep.csv")
    ck_path = path + ".checkpoint"
    os.makedirs(cfg.out_dir, exist_ok=True)
    done = {}
    if cfg.checkpoint and os.path.exists(ck_path):
        with open(ck_path) as fh:
            for line in fh:
                try:
                    row = json.loads(line)
                except json.JSONDecodeError:
                    break  # torn last line of an interrupted run
                done[row["key"]] = row
        log.info("resuming sweep: %d of %d energies done", len(done), cfg.grid.size)
    todo = [E for E in cfg.grid if _sweep_key(E) not in done]
    ck = open(ck_path, "a") if cfg.checkpoint else None
    try:
        # chunked so each finished chunk is checkpointed before the next starts
        chunk = max(1, 8 * max(jobs, 1))
        for s in range(0, len(todo), chunk):
            for E, st, uh in spectral.sweep(cfg.model, todo[s:s + chunk], n_iters, n_phases, horizon, jobs):
                row = {"key": _sweep_key(E), "le": st.le_estimate, "le_err": st.le_std_error,
                       "rho": st.rotation_estimate, "uh": bool(uh), "n": st.n_iters}
                done[row["key"]] = row
                if ck:
                    ck.write(json.dumps(row) + "\n")
                    ck.flush()
    finally:
        if ck:
            ck.close()
    with open(path, "w", newline="\n") as fh:
        fh.write(SWEEP_HEADER + "\n")
        for E in cfg.grid:
            row = done[_sweep_key(E)]
            st = OrbitStats(le_estimate=row["le"], le_std_error=row["le_err"], rotation_estimate=row["rho"],
                            n_iters=row["n"])
            fields = csv_row(E, st, row["uh"]).split(",")
            ids = 1.0 - row["rho"] / math.pi
            fh.write(",".join(fields[:4] + [f"{ids:.17g}", fields[4]]) + "\n")
    if cfg.checkpoint and os.path.exists(ck_path):
        os.remove(ck_path)
    log.info("wrote %s", path)
    return EXIT_OK


def _stratify_checks(cfg, entries):
    sec = cfg.sections["stratify"]
    n_iters = int(sec.get("n_iters", 20_000))
    ok = True
    for e in entries:
        if e.m is None:
            e.checks = {"classified": False}
            continue
        if e.m < 1 or not sec.get("checks", True):
            continue
        loc = spectral.check_rotation_localization(e, cfg.model, cfg.scheme, n_iters=n_iters)
        try:
            gr = spectral.transfer_growth_check(cfg.model, e, cfg.scheme, c_h=float(sec.get("c_h", 1.0)),
                                               n_phases=int(sec.get("n_phases", 256)))
            gr.pop("profile")
        except spectral.SpectralError as exc:
            gr = {"pass": None, "inconclusive": str(exc)}
        e.checks = {"rotation_localization": loc, "transfer_growth": gr}
        ok &= bool(loc["pass"]) and gr["pass"] is not False
    return ok


def _stratified(cfg, jobs):
    entries = spectral.stratify(cfg.model, cfg.grid, cfg.scheme, jobs)
    ok = _stratify_checks(cfg, entries)
    sep = [verify_resonance_separation(e.run.records, cfg.scheme.t_sep)[0]
           for e in entries if e.run is not None and len(e.run.resonant_steps) >= 2]
    return entries, ok and all(sep)


def cmd_stratify(cfg, jobs=1):
    entries, ok = _stratified(cfg, jobs)
    _write_json(os.path.join(cfg.out_dir, "stratify.json"), [e.to_json() for e in entries])
    return EXIT_OK if ok else EXIT_AUDIT


def cmd_holder(cfg, jobs=1):
    sec = cfg.sections["holder"]
    n_iters = int(sec.get("n_iters", 20_000))
    rows, ok = [], True
    for item in sec.get("ids", []):
        try:
            r = spectral.holder_fit_ids(cfg.model, float(item["E"]), item["eps"], n_iters)
        except spectral.SpectralError as exc:
            r = {"pass": None, "inconclusive": str(exc)}
        rows.append({"kind": "ids", "E": float(item["E"]), **r})
    for item in sec.get("le", []):
        r = spectral.holder_fit_le(cfg.model, float(item["E"]), item["deltas"], n_iters)
        rows.append({"kind": "le", "E": float(item["E"]), **r})
    ok = all(r["pass"] is not False for r in rows)
    _write_json(os.path.join(cfg.out_dir, "holder.json"), {"header": _header(cfg), "fits": rows})
    return EXIT_OK if ok else EXIT_AUDIT


def cmd_cover(cfg, jobs=1):
    sec = cfg.sections["cover"]
    entries, _ = _stratified(cfg, jobs)
    reports = [spectral.measure_cover_experiment(cfg.model, entries, int(m), float(sec.get("C", 1.0)),
                                                 int(sec.get("n_phases", 64)), int(sec.get("budget", 10 ** 5)))
               for m in sec.get("m", [1])]
    _write_json(os.path.join(cfg.out_dir, "cover.json"), {"header": _header(cfg), "reports": reports})
    return EXIT_OK


def cmd_spectrum(cfg, jobs=1):
    sec = cfg.sections["spectrum"]
    eigs = spectral.finite_volume_eigenvalues(cfg.model, int(sec.get("n_sites", 2000)), int(sec.get("n_phases", 8)))
    est = spectral.spectrum_estimate(cfg.model, cfg.grid, eigs, horizon=int(sec.get("horizon", 64)), jobs=jobs)
    _write_json(os.path.join(cfg.out_dir, "spectrum.json"),
                {"header": _header(cfg), "intervals": est["intervals"], "step": est["step"],
                 "uh_count": int(np.sum(est["uh"]))})
    return EXIT_OK


COMMANDS = {"kam-run": cmd_kam_run, "sweep": cmd_sweep, "stratify": cmd_stratify, "holder": cmd_holder,
            "cover": cmd_cover, "spectrum": cmd_spectrum}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="cocycle-kam", description="KAM reduction and spectral diagnostics for Schrodinger cocycles")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out", help="output directory (overrides outputs.dir)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--slack", type=float)
    p.add_argument("--emit-conjugations", action="store_true")
    p.add_argument("--dry-run", action="store_true", help="validate the config and print the gate values")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=os.environ.get("COCYCLE_KAM_LOG", "error").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
        cfg = load_config(raw, args.out, args.seed, args.slack, args.emit_conjugations)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.jobs < 1:
        print("config error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.dry_run:
        E = float(cfg.sections["kam"].get("E", cfg.grid[0] if cfg.grid.size else 0.0))
        try:
            gv = gate_values(cfg, E)
        except (Lie2Error, spectral.SpectralError) as exc:
            print(f"numeric: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(json.dumps(_clean(gv), indent=1, sort_keys=True))
        return EXIT_OK if gv["ck_norm"] <= gv["gate"] or args.command not in ("kam-run",) else EXIT_GATE
    try:
        return COMMANDS[args.command](cfg, args.jobs)
    except GateError as exc:
        print(f"gate: {exc}", file=sys.stderr)
        return EXIT_GATE
    except (KamError, SchemeError, Lie2Error, spectral.SpectralError) as exc:
        print(f"numeric: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
