"""Command-line interface.

Exit codes: 0 success, 1 failed checks, 2 invalid configuration,
3 numerical blow-up, 4 input/output error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, build, config_hash, linear_validation, load, validate

log = logging.getLogger("slowfast")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_IO = 0, 1, 2, 3, 4


def _parser():
    p = argparse.ArgumentParser(prog="slowfast", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON); default: linear validation")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("--eps", help="comma-separated eps list")
    common.add_argument("--figures", action="store_true", help="also write PNG figures")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="one coupled run")
    sub.add_parser("measure", parents=[common], help="evolution-measure ensemble and diagnostics")
    sub.add_parser("bbar", parents=[common], help="averaged-drift estimation")
    sub.add_parser("average", parents=[common], help="averaged-equation run")
    sub.add_parser("sweep", parents=[common], help="convergence experiment over eps")
    sub.add_parser("check", parents=[common], help="invariant suite")
    sub.add_parser("schema", help="print the config JSON schema")
    return p


def _load_config(args) -> dict:
    cfg = load(args.config) if args.config else linear_validation()
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.eps:
        try:
            eps = [float(e) for e in args.eps.split(",") if e.strip()]
        except ValueError:
            raise ConfigError(f"--eps: cannot parse {args.eps!r}") from None
        cfg.setdefault("experiment", {})["eps"] = eps
    if args.out:
        cfg["output"] = args.out
    return cfg


def _outdir(cfg: dict, command: str) -> Path:
    out = Path(cfg.get("output", "runs")) / f"{command}-{config_hash(cfg)[:12]}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_jsonl(path: Path, rows):
    with open(path, "w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def cmd_simulate(setup, args, out):
    from .integrators import integrate_coupled
    from .records import RunRecord, write_run_record
    cfg = setup.base
    t0 = time.perf_counter()
    rec = integrate_coupled(cfg, streams=[0], record_every=max(1, cfg.n_macro // 200))
    rec.to_csv(out / "slow.csv", "slow")
    rec.to_csv(out / "fast.csv", "fast")
    rec.to_jsonl(out / "norms.jsonl")
    run = RunRecord(setup.config, config_hash(setup.config), {"master": cfg.seed, "streams": [0, 1]},
                    {"times": rec.times, "slow_sup": rec.slow_norm[:, 0], "fast_sup": rec.fast_norm[:, 0]},
                    list(rec.summary_lines()), {"eps": cfg.eps, **{k: v for k, v in rec.meta.items()}},
                    time.perf_counter() - t0)
    write_run_record(run, out)
    if args.figures:
        from .plotting import plot_trajectory
        plot_trajectory(rec, cfg.basis, out / "slow.png", "slow")
        plot_trajectory(rec, cfg.basis, out / "fast.png", "fast")
    return {"final_slow_sup": float(rec.slow_norm[-1, 0])}


def cmd_measure(setup, args, out):
    from .measures import (TestFunctionDictionary, estimate_evolution_measure,
                           mixing_decay_estimate, tightness_proxy)
    m = setup.config["measure"]
    cfg = setup.sim(eps=1.0)
    K = cfg.basis.n_modes
    x = setup.field({"modes": m["start"]})
    T_burn = m.get("burn_in")
    mu = estimate_evolution_measure(x, m["time"], cfg, T_burn, m["ensemble"])
    mu.save(out / "measure")
    y = np.zeros(K)
    y[0] = 1.0 + float(cfg.basis.sup_norm(x))
    mix = mixing_decay_estimate(x, y, cfg, m["lags"], N=min(m["ensemble"], 1024),
                                dictionary=TestFunctionDictionary(cfg.basis), s=m["time"],
                                T_burn=mu.meta["T_burn"])
    tight = tightness_proxy(mu, 0.25)
    rows = [{"time": mu.time, "T_burn": mu.meta["T_burn"], "N": mu.n,
             "moment2": mu.moment(2), "moment4": mu.moment(4),
             "holder_quantiles": tight.quantiles,
             "mixing_rate": mix.rate if mix.conclusive else None, "mixing_r2": mix.r2,
             "mixing_note": mix.note}]
    rows += [{"lag": float(l), "gap": float(g), "se": float(s)}
             for l, g, s in zip(mix.lags, mix.gaps, mix.se)]
    _write_jsonl(out / "summary.jsonl", rows)
    if args.figures:
        from .plotting import plot_measure
        plot_measure(mu, out / "measure.png")
    return rows[0]


def cmd_bbar(setup, args, out):
    from .averaging import closed_form_bbar, estimate_bbar_ergodic
    b = setup.config["bbar"]
    cfg = setup.sim(eps=1.0)
    x = setup.base.x0
    est = estimate_bbar_ergodic(x, b["horizon"], cfg, s0=b["start"], N_paths=b["paths"],
                                burn_in=b.get("burn_in"))
    row = est.to_dict()
    ref = None
    try:
        ref = closed_form_bbar(cfg)(x[None])[0]
        row["closed_form"] = [float(c) for c in ref]
    except ValueError as exc:
        row["closed_form"] = None
        log.info("%s", exc)
    _write_jsonl(out / "bbar.jsonl", [row])
    np.savetxt(out / "bbar.csv", np.column_stack([np.arange(len(est.value)), est.value, est.se]),
               delimiter=",", header="mode,value,se", comments="", fmt="%.17g")
    if args.figures:
        from .plotting import plot_bbar
        plot_bbar([est], ref, out / "bbar.png")
    return {"mode0": float(est.value[0]), "error": est.error}


def cmd_average(setup, args, out):
    from .experiments import drift_oracle
    from .integrators import integrate_averaged
    cfg = setup.base
    rec = integrate_averaged(cfg, drift_oracle(setup, cfg), streams=[0],
                             record_every=max(1, cfg.n_macro // 200))
    rec.to_csv(out / "averaged.csv", "slow")
    rec.to_jsonl(out / "norms.jsonl")
    if args.figures:
        from .plotting import plot_trajectory
        plot_trajectory(rec, cfg.basis, out / "averaged.png")
    return {"final_sup": float(rec.slow_norm[-1, 0])}


def cmd_sweep(setup, args, out):
    from .experiments import convergence_experiment
    from .records import write_run_record
    res = convergence_experiment(setup.config, workers=max(1, args.workers), partial_dir=out)
    write_run_record(res.record, out)
    if args.figures:
        from .plotting import plot_sweep
        plot_sweep(res, out / "exceedance.png")
    for c in res.cells:
        s = c.summary()
        print(f"eps={s['eps']:<6g} P={s['proportion']:.3f} "
              f"[{s['wilson_low']:.3f}, {s['wilson_high']:.3f}] median gap {s['gap_quantiles']['0.5']:.4g}")
    return {"eta": res.eta, "nonincreasing": res.nonincreasing()}


def cmd_check(setup, args, out):
    from .checks import run_checks
    results = run_checks(setup)
    for r in results:
        print(r.line())
    _write_jsonl(out / "checks.jsonl", [r.__dict__ for r in results])
    return {"passed": all(r.passed for r in results)}


COMMANDS = {"simulate": cmd_simulate, "measure": cmd_measure, "bbar": cmd_bbar,
            "average": cmd_average, "sweep": cmd_sweep, "check": cmd_check}


def main(argv=None) -> int:
    from .integrators import BlowUpError
    args = _parser().parse_args(argv)
    if args.command == "schema":
        from .config import SCHEMA
        print(json.dumps(SCHEMA, indent=1))
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        setup = build(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        out = _outdir(setup.config, args.command)
        result = COMMANDS[args.command](setup, args, out)
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps({"command": args.command, "out": str(out), **result}, default=str))
    if args.command == "check" and not result["passed"]:
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
