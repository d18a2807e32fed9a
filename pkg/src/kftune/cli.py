"""Command-line entry point: ``kftune {tune,validate,lqr,replay}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESETS, ConfigError, RunConfig, load
from .harness import (
    VALIDATION_STREAM,
    ReplayFormatError,
    TuningObjective,
    evaluate_candidate,
    matched_process_noise,
    process_noise_from_design,
    read_replay_csv,
    replay,
    rmse_validation,
)
from .consistency import StatSeries, j_nis
from .skycrane import REFERENCE_K_LIN, RiccatiError, gain_discrepancy
from .tpbo import TuningProblem, run_tpbo

log = logging.getLogger("kftune")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _num(x) -> str:
    return repr(float(x))


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _resolved(cfg: RunConfig) -> dict:
    return {"experiment": asdict(cfg.experiment), "tuning": asdict(cfg.tuning),
            "validate": asdict(cfg.validate)}


class Manifest:
    """Run manifest written last, listing only files that exist."""

    def __init__(self, command: str, cfg: RunConfig, out: Path):
        self.out = out
        self.data = {
            "tool": "kftune",
            "version": __version__,
            "command": command,
            "seed": cfg.experiment.seed,
            "config": cfg.entries,
            "resolved": _resolved(cfg),
            "started": _now(),
            "outputs": [],
        }

    def add(self, path: Path) -> Path:
        self.data["outputs"].append(path.name)
        return path

    def write(self) -> None:
        self.data["finished"] = _now()
        self.data["outputs"] = [p for p in self.data["outputs"] if (self.out / p).exists()]
        with open(self.out / f"manifest_{self.data['command']}.json", "w") as fh:
            json.dump(self.data, fh, indent=2)
            fh.write("\n")


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _load_config(args) -> RunConfig:
    cfg = load(args.config, args.preset, args.set or (), args.seed, args.threads)
    if args.threads is None and "experiment.threads" not in cfg.entries:
        cfg = replace(cfg, experiment=replace(cfg.experiment, threads=os.cpu_count() or 1))
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_tune(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    man = Manifest("tune", cfg, out)
    exp, tun = cfg.experiment, cfg.tuning
    objective = TuningObjective(exp)
    problem = TuningProblem(
        objective, tun.bounds, n_seed=tun.n_seed, max_iterations=tun.max_iterations,
        min_improvement=tun.min_improvement, patience=tun.patience, rng_seed=exp.seed,
        dof=tun.dof, optimize_dof=tun.optimize_dof, kernel_family=tun.kernel,
        center=tun.center, direct_evaluations=tun.direct_evaluations, n_starts=tun.n_starts,
    )
    d = tun.bounds.dim
    trace_path = man.add(out / "trace.csv")
    with open(trace_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration"] + [f"q{i + 1}" for i in range(d)] + ["cost", "incumbent_cost"])

        def sink(rec):
            w.writerow([rec.iteration] + [_num(a) for a in rec.point]
                       + [_num(rec.cost), _num(rec.incumbent_cost)])
            fh.flush()
            q = ", ".join(f"{a:.5g}" for a in rec.point)
            print(f"[{rec.tag} {rec.iteration:3d}] q=({q}) cost={rec.cost:.5g} "
                  f"incumbent={rec.incumbent_cost:.5g}", flush=True)

        t0 = time.perf_counter()
        trace = run_tpbo(problem, sink)
    q_best, c_best = trace.best
    _write_json(man.add(out / "surrogate_samples.json"), {
        "samples": [{"point": s.point.tolist(), "value": s.value, "tag": s.tag}
                    for s in trace.samples],
        "hyperparameters": trace.hyperparameters,
        "stop_reason": trace.stop_reason,
        "warnings": trace.warnings,
    })
    Q = process_noise_from_design(q_best, exp.parameterization, exp.fixed_qz)
    _write_json(man.add(out / "best.json"), {
        "q": q_best.tolist(),
        "cost": c_best,
        "parameterization": exp.parameterization,
        "fixed_qz": exp.fixed_qz,
        "Q": Q.tolist(),
        "n_evaluations": len(trace.samples),
        "stop_reason": trace.stop_reason,
    })
    man.data["wall_time_s"] = round(time.perf_counter() - t0, 3)
    man.write()
    print(f"best q=({', '.join(f'{a:.6g}' for a in q_best)}) cost={c_best:.6g} "
          f"after {len(trace.samples)} evaluations ({trace.stop_reason})")
    return EXIT_OK


def _read_candidate(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read candidate file {path}: {exc}") from None
    if not text.strip():
        raise UsageError(f"candidate file {path} is empty")
    try:
        data = json.loads(text)
        q = np.atleast_1d(np.asarray(data["q"], dtype=float))
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"candidate file {path}: expected a JSON object with 'q' ({exc})") from None
    if q.size == 0 or not np.all(np.isfinite(q)) or np.any(q < 0):
        raise UsageError(f"candidate file {path}: 'q' must be non-empty, finite and non-negative")
    data["q"] = q
    return data


def _candidate_config(cfg: RunConfig, cand: dict) -> RunConfig:
    changes = {}
    if "parameterization" in cand:
        changes["parameterization"] = cand["parameterization"]
    if "fixed_qz" in cand:
        changes["fixed_qz"] = float(cand["fixed_qz"])
    try:
        exp = replace(cfg.experiment, **changes)
        process_noise_from_design(cand["q"], exp.parameterization, exp.fixed_qz)
    except ValueError as exc:
        raise UsageError(f"candidate does not fit the configuration: {exc}") from None
    return replace(cfg, experiment=exp)


def cmd_validate(args) -> int:
    cfg = _load_config(args)
    cand = _read_candidate(args.candidate)
    cfg = _candidate_config(cfg, cand)
    out = _out_dir(args)
    man = Manifest("validate", cfg, out)
    exp = replace(cfg.experiment, n_runs=cfg.validate.n_runs)
    ev = evaluate_candidate(cand["q"], exp, VALIDATION_STREAM)
    _write_json(man.add(out / "consistency.json"), {
        "q": cand["q"].tolist(),
        "Q": ev.Q.tolist(),
        "cost_stat": exp.cost,
        "cost": ev.cost,
        "verdict": ev.report.verdict,
        "n_excluded": ev.n_excluded,
        "nees": ev.nees_report.to_dict(),
        "nis": ev.nis_report.to_dict(),
    })
    ev.report.to_csv(man.add(out / "consistency.csv"))
    rows = rmse_validation([cand["q"]], exp, cfg.validate.n_repeats, VALIDATION_STREAM + 1)
    with open(man.add(out / "rmse.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["candidate", "channel", "median", "q25", "q75", "n_runs"])
        for r in rows:
            w.writerow([r["candidate"], r["channel"], _num(r["median"]), _num(r["q25"]),
                        _num(r["q75"]), r["n_runs"]])
    man.write()
    for rep in (ev.nees_report, ev.nis_report):
        print(f"{rep.stat.upper()}: verdict={rep.verdict} pass_fraction={rep.pass_fraction:.3f} "
              f"cost={rep.cost:.5g} bounds=[{rep.bounds.lower:.4g}, {rep.bounds.upper:.4g}]")
    print(f"verdict ({exp.cost}): {ev.report.verdict}")
    return EXIT_OK


def cmd_lqr(args) -> int:
    cfg = _load_config(args)
    exp = cfg.experiment
    try:
        design = exp.lqr()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = gain_discrepancy(design.K_lin, REFERENCE_K_LIN)
    eig = np.linalg.eigvals(design.closed_loop_matrix(exp.params))
    stable = bool(np.all(eig.real < 0))
    print(f"{'entry':>8} {'computed':>14} {'reference':>14} {'rel_delta':>10}")
    for r in rows:
        print(f"K[{r['row']},{r['col']}]".rjust(8)
              + f" {r['computed']:14.6f} {r['reference']:14.6f} {r['rel_delta']:10.2e}")
    worst = max(r["rel_delta"] for r in rows)
    print(f"max relative delta {worst:.3e}; Riccati residual {design.residual:.3e}")
    print("closed-loop eigenvalues: " + ", ".join(f"{e.real:.4g}{e.imag:+.4g}j" for e in eig))
    print(f"stabilizing: {'yes' if stable else 'NO'}")
    out = _out_dir(args)
    man = Manifest("lqr", cfg, out)
    _write_json(man.add(out / "lqr.json"), {
        "K_lin": design.K_lin.tolist(),
        "reference": REFERENCE_K_LIN.tolist(),
        "entries": rows,
        "max_rel_delta": worst,
        "riccati_residual": design.residual,
        "eigenvalues": {"real": eig.real.tolist(), "imag": eig.imag.tolist()},
        "stabilizing": stable,
    })
    man.write()
    return EXIT_OK if stable else EXIT_RUNTIME


def cmd_replay(args) -> int:
    cfg = _load_config(args)
    try:
        t, z, u = read_replay_csv(args.measurements)
    except OSError as exc:
        raise UsageError(f"cannot read {args.measurements}: {exc}") from None
    except ReplayFormatError as exc:
        raise UsageError(f"{args.measurements}: {exc}") from None
    exp = cfg.experiment
    if args.candidate:
        cand = _read_candidate(args.candidate)
        cfg = _candidate_config(cfg, cand)
        exp = cfg.experiment
        Q = process_noise_from_design(cand["q"], exp.parameterization, exp.fixed_qz)
    else:
        Q = matched_process_noise(exp)
    if t.size > 1 and not np.allclose(np.diff(t), exp.dt, rtol=1e-6, atol=1e-9):
        log.warning("time column spacing differs from experiment.dt=%g", exp.dt)
    series = replay(exp, z, u, Q)
    cost = j_nis(StatSeries(series, 4, 1), exp.discard_steps)
    out = _out_dir(args)
    man = Manifest("replay", cfg, out)
    with open(man.add(out / "nis.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "t", "nis"])
        for k, (tk, v) in enumerate(zip(t, series), start=1):
            w.writerow([k, _num(tk), _num(v)])
    _write_json(man.add(out / "replay.json"), {"Q": Q.tolist(), "n_steps": int(series.size),
                                               "mean_nis": float(series.mean()), "j_nis": cost})
    man.write()
    print(f"steps={series.size} mean NIS={series.mean():.5g} J_NIS={cost:.5g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment config file")
    common.add_argument("--preset", metavar="NAME", help=f"one of {', '.join(PRESETS)}")
    common.add_argument("--set", metavar="K=V", action="append", help="override a config key (repeatable)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--threads", type=int, help="worker threads per evaluation")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="kftune", description="Kalman-filter process-noise auto-tuning")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("tune", parents=[common], help="run Bayesian optimization over Q")
    p.set_defaults(func=cmd_tune)
    p = sub.add_parser("validate", parents=[common], help="consistency and RMSE check of a candidate")
    p.add_argument("candidate", help="best.json from a tune run")
    p.set_defaults(func=cmd_validate)
    p = sub.add_parser("lqr", parents=[common], help="compute and compare the LQR gain")
    p.set_defaults(func=cmd_lqr)
    p = sub.add_parser("replay", parents=[common], help="NIS and J_NIS over recorded data")
    p.add_argument("measurements", help="CSV with header t,z1,z2,z3,z4,u1,u2")
    p.add_argument("--candidate", metavar="PATH", help="best.json supplying Q (default: matched Q)")
    p.set_defaults(func=cmd_replay)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"kftune: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RiccatiError, FloatingPointError, np.linalg.LinAlgError, OSError, ValueError) as exc:
        print(f"kftune: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
