"""Dispatch of validated configurations to the toolkit and serialization of results.

Every experiment returns a report dictionary and a set of CSV tables.  The
report holds the config echo, a version tag, per-check verdicts and numeric
payloads; wall time is kept out of it so identical inputs give identical
bytes.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .control import build_profile
from .dynamics import closed_loop_nonlinear, global_control_experiment, simulate
from .errors import (AccuracyError, AliasingError, BlowUpError, ConfigError, DegenerateProfileError,
                     HokdvError, IllPosedHorizonError, RangeError, ResolutionError)
from .estimates import (HJ_CHECKS, check_gap, hj_eval, hj_identity_suite, l4_ratio_trend,
                        plateau_check, strichartz_sum, sup_M_scan, threshold_b)
from .feedback import (build_L_lambda, closed_loop_linear_simulate, decay_rate_estimate,
                       energy_balance_check, spectral_abscissa)
from .moment import assemble_moment_system, refine_control, synthesize_control, verify_reach
from .spectral import FourierField, l2_norm, random_field, read_field_csv, write_field_csv

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
NUMERIC_ERRORS = (RangeError, AccuracyError, BlowUpError, ResolutionError, AliasingError,
                  IllPosedHorizonError, DegenerateProfileError, FloatingPointError, OverflowError)


def version_tag() -> str:
    return f"v{__version__}"


def _check(passed, value=None, limit=None, note: str = "") -> dict:
    out = {"passed": bool(passed)}
    if value is not None:
        out["value"] = value
    if limit is not None:
        out["limit"] = limit
    if note:
        out["note"] = note
    return out


def _profile(cfg):
    a = cfg["profile_start"]
    return build_profile((a, a + cfg["profile_len"]), cfg["profile_shape"])


def _random_data(cfg, j, N, rng, norm=None):
    mm = cfg.get("max_mode", 0) or None
    return random_field(j, N, rng, norm=cfg["norm"] if norm is None else norm,
                        decay=cfg["decay"], max_mode=mm)


# ------------------------------------------------------------------ experiments


def run_simulate(cfg):
    j, N = cfg["j"], cfg["N"]
    if cfg["initial"] == "cos":
        u0 = FourierField.from_function(j, N, lambda x: cfg["amplitude"] * np.cos(x))
    elif cfg["initial"] == "random":
        u0 = _random_data(cfg, j, N, np.random.default_rng(cfg["seed"]))
    else:
        if not cfg["initial_file"]:
            raise ConfigError("initial = 'file' needs initial_file")
        u0 = read_field_csv(cfg["initial_file"])
        if (u0.order_j, u0.trunc_N) != (j, N):
            raise ConfigError(f"initial_file holds (j, N) = ({u0.order_j}, {u0.trunc_N}), "
                              f"config asks for ({j}, {N})")
    traj = simulate(u0, cfg["T"], cfg["dt"], nonlinear=cfg["nonlinear"], store_every=cfg["store_every"])
    inv = traj.invariants()
    drift = np.abs(inv - inv[0]) / np.maximum(np.abs(inv[0]), 1e-300)
    rows = [("t", "M", "E", "H", "l2")]
    rows += [(float(t), *map(float, q), float(n)) for t, q, n in zip(traj.times, inv, traj.l2_norms())]
    checks = {
        "mass_drift": _check(np.max(np.abs(inv[:, 0] - inv[0, 0])) <= 1e-12,
                             float(np.max(np.abs(inv[:, 0] - inv[0, 0]))), 1e-12),
        "energy_drift": _check(drift[:, 1].max() <= cfg["drift_tol"], float(drift[:, 1].max()),
                               cfg["drift_tol"]),
        "hamiltonian_drift": _check(drift[:, 2].max() <= cfg["drift_tol"], float(drift[:, 2].max()),
                                    cfg["drift_tol"]),
    }
    payload = {"final_l2": float(l2_norm(traj.final)), "snapshots": len(traj)}
    return checks, payload, {"invariants": rows}, {"final_field": traj.final}


def run_control(cfg):
    j, N = cfg["j"], cfg["N"]
    if cfg["n_modes"] > N:
        raise ConfigError(f"n_modes = {cfg['n_modes']} exceeds N = {N}")
    rng = np.random.default_rng(cfg["seed"])
    prof = _profile(cfg)
    u0 = _random_data(cfg, j, N, rng)
    u1 = _random_data(cfg, j, N, rng)
    system = assemble_moment_system(j, cfg["T"], n_modes=cfg["n_modes"])
    sig = synthesize_control(u0, u1, prof, system, beta_mode=cfg["beta_mode"])
    scale = l2_norm(u1)
    formula = verify_reach(u0, u1, sig, prof).residual_l2 / scale
    checks = {
        "biorthogonality": _check(system.biorthogonality_residual() <= 1e-10,
                                  float(system.biorthogonality_residual()), 1e-10),
        "formula_residual": _check(formula <= cfg["formula_tol"], float(formula), cfg["formula_tol"]),
    }
    payload = {"formula_residual": float(formula), "gram_condition": float(system.cond_estimate),
               "control_norm": sig.control_norm(prof, N)}
    final = sig
    if cfg["refine"]:
        final = refine_control(u0, u1, sig, prof)
        refined = verify_reach(u0, u1, final, prof)
        res = refined.residual_l2 / scale
        checks["refined_residual"] = _check(res <= cfg["refined_tol"], float(res), cfg["refined_tol"])
        payload["refined_residual"] = float(res)
    reach = verify_reach(u0, u1, final, prof)
    means = [float(s.coeffs[N].real) for s in reach.states]
    mdev = max(abs(m - means[0]) for m in means)
    checks["mean_invariance"] = _check(mdev <= 1e-12, mdev, 1e-12)
    rows = [("k", "re", "im")] + [(k, float(h.real), float(h.imag))
                                  for k, h in zip(system.mode_set, sig.h_coeffs)]
    path = [("t", "l2", "residual_to_target")]
    path += [(float(t), float(l2_norm(s)), float(l2_norm(s - u1))) for t, s in zip(reach.times, reach.states)]
    return checks, payload, {"control_coeffs": rows, "path": path}, {"initial": u0, "target": u1}


def run_stabilize(cfg):
    j, N, lam = cfg["j"], cfg["N"], cfg["lam"]
    rng = np.random.default_rng(cfg["seed"])
    prof = _profile(cfg)
    u0 = _random_data(cfg, j, N, rng)
    checks, payload = {}, {}
    if cfg["nonlinear"]:
        gain = build_L_lambda(prof, j, N, lam) if lam > 0 else None
        mode = "gain" if gain is not None else "simple_damping"
        traj = closed_loop_nonlinear(u0, prof, cfg["T"], cfg["dt"], mode=mode, gain=gain,
                                     store_every=cfg["store_every"])
    else:
        gain = build_L_lambda(prof, j, N, lam)
        traj = closed_loop_linear_simulate(u0, gain, cfg["T"], cfg["dt"], cfg["store_every"])
    gamma, r2, flags = decay_rate_estimate(traj)
    dev = traj.deviation_norms()
    payload.update(gamma=gamma, r2=r2, flags=flags, final_deviation=float(dev[-1]))
    checks["decay"] = _check(gamma > 0 and r2 >= 0.95, gamma, note=f"R2 = {r2:.6f}")
    if lam > 0 and not cfg["nonlinear"]:
        absc = spectral_abscissa(gain)
        payload["spectral_abscissa"] = absc
        checks["rate_vs_lambda"] = _check(gamma >= cfg["rate_fraction"] * lam, gamma,
                                          cfg["rate_fraction"] * lam)
        rel = abs(gamma + absc) / abs(absc)
        checks["rate_vs_abscissa"] = _check(rel <= 0.05, rel, 0.05)
    if lam == 0:
        bal = energy_balance_check(traj, prof)
        payload["energy_defect"] = bal["relative"]
        checks["energy_identity"] = _check(bal["relative"] <= 1e-6, bal["relative"], 1e-6)
    rows = [("t", "deviation_l2")] + [(float(t), float(d)) for t, d in zip(traj.times, dev)]
    return checks, payload, {"decay": rows}, {"initial": u0}


def run_global_control(cfg):
    j, N = cfg["j"], cfg["N"]
    rng = np.random.default_rng(cfg["seed"])
    prof = _profile(cfg)
    u0 = _random_data(cfg, j, N, rng)
    u1 = _random_data(cfg, j, N, rng)
    rep = global_control_experiment(u0, u1, prof, stabilize_tol=cfg["stabilize_tol"],
                                    T_local=cfg["T_local"], dt=cfg["dt"],
                                    max_damping_time=cfg["max_damping_time"])
    term = rep.residuals.get("terminal_relative", math.nan)
    checks = {
        "pipeline": _check(rep.success, note=rep.message or rep.phase),
        "terminal_residual": _check(rep.success and term <= cfg["terminal_tol"],
                                    None if math.isnan(term) else term, cfg["terminal_tol"]),
        "reversal": _check(rep.reversal_defect <= 1e-10, rep.reversal_defect, 1e-10),
    }
    payload = {"times": rep.times, "residuals": rep.residuals, "phase": rep.phase}
    if rep.picard is not None:
        payload["picard_history"] = rep.picard.residual_history
    tables = {}
    if rep.verification is not None:
        v = rep.verification
        tables["path"] = [("t", "l2", "residual_to_target")] + [
            (float(t), float(np.linalg.norm(c)), float(np.linalg.norm(c - u1.coeffs)))
            for t, c in zip(v.times, v.coeffs)]
    return checks, payload, tables, {"initial": u0, "target": u1}


def run_verify_lemmas(cfg):
    rng = np.random.default_rng(cfg["seed"])
    checks, payload = {}, {"gap": [], "hj": []}
    gap_rows = [("j", "k_max", "ok", "monotone", "min_margin")]
    hj_rows = [("j", "check", "max_error", "passed")]
    for j in range(1, cfg["j_max"] + 1):
        g = check_gap(j, cfg["k_max"])
        payload["gap"].append(g.as_dict())
        gap_rows.append((j, cfg["k_max"], g.ok, g.monotone, g.min_margin))
        checks[f"gap_j{j}"] = _check(g.ok and g.monotone, g.min_margin)
        h = hj_identity_suite(j, cfg["trials"], rng, cfg["rtol"])
        payload["hj"].append(h.as_dict())
        for name in HJ_CHECKS:
            hj_rows.append((j, name, h.max_errors[name], h.passed[name]))
        checks[f"hj_j{j}"] = _check(h.ok, max(h.max_errors.values()), cfg["rtol"])
    spots = [hj_eval(1, 2.0, 1.0) == 2.0, hj_eval(1, 2.0, 0.0) == 8.0,
             abs(hj_eval(3, 5.0, 2.5) - 2 * 2.5 ** 7) <= 1e-12 * 2 * 2.5 ** 7]
    checks["spot_values"] = _check(all(spots))
    return checks, payload, {"gap": gap_rows, "hj": hj_rows}, {}


def run_strichartz(cfg):
    j, b = cfg["j"], cfg["b"]
    thr = threshold_b(j)
    side = (Fraction(b) > thr) - (Fraction(b) < thr)
    plat = plateau_check(j, b, cfg["k_max"], cfg["tau_max"], cfg["doublings"], cfg["plateau_tol"])
    scan = sup_M_scan(j, b, cfg["k_max"], cfg["tau_max"])
    spot = strichartz_sum(1, 0.5, 0, 4).value
    checks = {
        "exceptional_sets": _check(plat.max_count <= 3, plat.max_count, 3),
        "spot_value": _check(abs(spot - 1 / math.sqrt(257)) <= 1e-12, spot),
    }
    payload = {"threshold": f"{thr.numerator}/{thr.denominator}", "side": side,
               "sups": plat.sups, "growth": plat.growth, "argmax": list(scan.argmax)}
    if side > 0:
        checks["plateau"] = _check(plat.plateau, plat.growth, cfg["plateau_tol"])
    elif side < 0:
        checks["growth_below_threshold"] = _check(plat.growth > cfg["plateau_tol"], plat.growth)
    tables = {"scan": [("tau", "k", "M")] + [tuple(r) for r in scan.table]}
    if cfg["ensemble"]:
        tr = l4_ratio_trend(j, b, cfg["ensemble_N"], cfg["seed"], cfg["draws"])
        payload["ensemble"] = tr.as_dict()
        if side > 0:
            checks["l4_ratio_bounded"] = _check(tr.variation <= cfg["ratio_variation"], tr.variation,
                                                cfg["ratio_variation"])
        elif side < 0:
            checks["l4_ratio_increasing"] = _check(tr.increasing, tr.max_ratios[-1])
        tables["ensemble"] = [("N", "max_ratio")] + list(zip(tr.Ns, tr.max_ratios))
    return checks, payload, tables, {}


EXPERIMENTS = {
    "simulate": run_simulate,
    "control": run_control,
    "stabilize": run_stabilize,
    "global-control": run_global_control,
    "verify-lemmas": run_verify_lemmas,
    "strichartz": run_strichartz,
}


# ------------------------------------------------------------------ orchestration


def _clean(obj):
    """Make numpy scalars and tuples JSON-friendly; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def run(subcommand: str, cfg: dict) -> tuple:
    """Run one experiment; returns (report, tables, fields).

    Numeric toolkit errors become a report with status 'numeric_error'.
    """
    report = {"subcommand": subcommand, "version": version_tag(), "config": cfg}
    try:
        checks, payload, tables, fields = EXPERIMENTS[subcommand](cfg)
    except NUMERIC_ERRORS as exc:
        report.update(status="numeric_error", passed=False, checks={},
                      error=f"{type(exc).__name__}: {exc}")
        return _clean(report), {}, {}
    passed = all(c["passed"] for c in checks.values())
    report.update(status="pass" if passed else "fail", passed=passed, checks=checks, results=payload)
    return _clean(report), tables, fields


def exit_code(report: dict) -> int:
    if report.get("status") == "numeric_error":
        return EXIT_NUMERIC
    return EXIT_PASS if report.get("passed") else EXIT_FAIL


def report_bytes(report: dict) -> bytes:
    return (json.dumps(report, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def write_outputs(outdir: Path, report: dict, tables: dict, fields: dict) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "report.json").write_bytes(report_bytes(report))
    for name, rows in tables.items():
        with open(outdir / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(rows)
    for name, u in fields.items():
        write_field_csv(u, outdir / f"{name}_field.csv")


def make_run_dir(root: Path, subcommand: str, now: Optional[datetime] = None) -> Path:
    now = now or datetime.now(timezone.utc)
    base = root / f"{subcommand}-{now.strftime('%Y%m%dT%H%M%SZ')}"
    path, n = base, 1
    while path.exists():
        path = Path(f"{base}-{n}")
        n += 1
    path.mkdir(parents=True)
    return path


def _job(args):
    subcommand, cfg, outdir = args
    t0 = time.perf_counter()
    report, tables, fields = run(subcommand, cfg)
    write_outputs(Path(outdir), report, tables, fields)
    return exit_code(report), time.perf_counter() - t0


def thread_cap() -> int:
    raw = os.environ.get("HOKDV_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"HOKDV_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"HOKDV_THREADS must be a positive integer, got {raw!r}")
    return n


def run_jobs(subcommand: str, configs: list, run_dir: Path) -> list:
    """Run one or more configs; with several, each gets run_dir/job-<i> and up to
    HOKDV_THREADS of them run in parallel processes.  Returns (exit code, seconds) per job."""
    if len(configs) == 1:
        return [_job((subcommand, configs[0], str(run_dir)))]
    jobs = [(subcommand, cfg, str(run_dir / f"job-{i:03d}")) for i, cfg in enumerate(configs)]
    workers = min(thread_cap(), len(jobs))
    if workers == 1:
        return [_job(a) for a in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_job, jobs))


__all__ = ["run", "run_jobs", "exit_code", "report_bytes", "write_outputs", "make_run_dir",
           "EXPERIMENTS", "HokdvError", "EXIT_PASS", "EXIT_FAIL", "EXIT_CONFIG", "EXIT_NUMERIC"]
