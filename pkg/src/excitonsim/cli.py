"""Command-line entry point: ``excitonsim {run,scan,validate-expansion,rates}``.

Exit codes: 0 success, 1 configuration error, 2 solver failure, 3 validation failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import experiments as ex
from .bath import (
    EXPANSION_TOL,
    DegeneratePolesError,
    FixedPointError,
    QuadratureError,
    SpectralDensity,
    expand_correlation,
    expansion_error,
    set_eta,
)
from .config import KEYS, ConfigError, ExperimentConfig, load_config
from .heom import HEOMBlowUp, HierarchyTooLarge
from .model import ExcitonNetwork
from .redfield import PropagationError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VALIDATION = 0, 1, 2, 3
SOLVER_ERRORS = (HEOMBlowUp, HierarchyTooLarge, PropagationError, QuadratureError, FixedPointError,
                 DegeneratePolesError, FloatingPointError, np.linalg.LinAlgError)
SCAN_PARAMS = {"eta": float, "L": int, "temperature": float}

log = logging.getLogger("excitonsim")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _add_config_flags(p):
    p.add_argument("--config", help="key/value configuration file")
    p.add_argument("--experiment", help="named experiment (fig3 ... fig13)")
    p.add_argument("--out", dest="directory_flag", help="output directory (alias of --directory)")
    p.add_argument("-v", "--verbose", action="store_true")
    for section, key, parser, default, help_text in KEYS:
        p.add_argument(f"--{key.replace('_', '-')}" if key != "L" else "--L", dest=key, type=str,
                       default=None, help=f"[{section}] {help_text} (default: {default})")


def _parsers():
    top = _Parser(prog="excitonsim", description="Dissipative exciton dynamics: Redfield and HEOM.")
    sub = top.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="run one experiment")
    _add_config_flags(run)
    run.add_argument("--validate-expansion", action="store_true", help="only check the bath expansion")
    scan = sub.add_parser("scan", help="run an experiment for several values of one parameter")
    _add_config_flags(scan)
    scan.add_argument("--param", required=True, choices=sorted(SCAN_PARAMS))
    scan.add_argument("--values", required=True, help="comma-separated values")
    val = sub.add_parser("validate-expansion", help="compare the correlation expansion with quadrature")
    _add_config_flags(val)
    val.add_argument("--shapes", default="thin,broad")
    val.add_argument("--temperatures", default="298,10000")
    rates = sub.add_parser("rates", help="Redfield rate table over eta")
    _add_config_flags(rates)
    rates.add_argument("--etas", help="comma-separated eta values (default: the fig3 grid)")
    return top


def _split(text, conv=float):
    vals = [v for v in str(text).replace(";", ",").split(",") if v.strip()]
    try:
        return [conv(v.strip()) for v in vals]
    except ValueError as exc:
        raise ConfigError(f"cannot parse value list {text!r}: {exc}") from None


def build_config(args) -> ExperimentConfig:
    """defaults < experiment preset < config file < command-line flags."""
    file_vals = load_config(args.config) if args.config else {}
    name = args.experiment or file_vals.pop("experiment", None) or "custom"
    file_vals.pop("experiment", None)
    cfg = ExperimentConfig().updated(**ex.preset(name))
    if file_vals:
        cfg = cfg.updated(**file_vals)
    cli = {}
    for section, key, parser, _, _ in KEYS:
        raw = getattr(args, key, None)
        if raw is None:
            continue
        try:
            cli[key] = parser(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"--{key.replace('_', '-')} {raw!r}: {exc}") from None
    if getattr(args, "directory_flag", None):
        cli["directory"] = args.directory_flag
    if cli:
        cfg = cfg.updated(**cli)
    return cfg


def cmd_run(args) -> int:
    if args.validate_expansion:
        return cmd_validate(args)
    cfg = build_config(args)
    result = ex.execute(cfg)
    if "peak_coherence" in result:
        print(f"peak |rho_D+D-| = {result['peak_coherence']:.4f} at {result['time_to_peak_fs']:.1f} fs; "
              f"late purity {result['asymptotic_purity']:.4f}")
    if "deltas" in result:
        for a, b, d in result["deltas"]:
            print(f"L={a} -> L={b}: sup |delta Re rho_D-D+| = {d:.3e}")
    print(f"outputs written to {cfg.directory}")
    return EXIT_OK


def _scan_one(job):
    cfg, directory = job
    try:
        res = ex.execute(cfg, directory)
        return {k: res.get(k, math.nan) for k in ("peak_coherence", "time_to_peak_fs", "half_life_fs",
                                                   "asymptotic_purity")} | {"status": "ok"}
    except SOLVER_ERRORS + (ConfigError, ValueError) as exc:
        return {"status": f"error: {type(exc).__name__}: {exc}".replace("\n", " ")}


def cmd_scan(args) -> int:
    cfg = build_config(args)
    conv = SCAN_PARAMS[args.param]
    values = _split(args.values, conv)
    if not values:
        raise ConfigError("scan: --values is empty")
    base = cfg.directory
    os.makedirs(base, exist_ok=True)
    jobs = []
    for v in values:
        sub = cfg.updated(**{args.param: v})
        jobs.append((sub, os.path.join(base, f"{args.param}={v}")))
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_scan_one, jobs))
    else:
        results = [_scan_one(j) for j in jobs]
    cols = ["peak_coherence", "time_to_peak_fs", "half_life_fs", "asymptotic_purity"]
    with open(os.path.join(base, "scan.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([args.param] + cols + ["status"])
        for v, r in zip(values, results):
            w.writerow([repr(v)] + [repr(float(r.get(c, math.nan))) for c in cols] + [r["status"]])
    failed = [v for v, r in zip(values, results) if r["status"] != "ok"]
    for v, r in zip(values, results):
        print(f"{args.param}={v}: {r['status']}")
    return EXIT_SOLVER if failed else EXIT_OK


def cmd_validate(args) -> int:
    cfg = build_config(args)
    shapes = [s.strip() for s in getattr(args, "shapes", "thin,broad").split(",") if s.strip()]
    temps = _split(getattr(args, "temperatures", "298,10000"))
    eta = cfg.eta if cfg.eta is not None else 0.01
    j12 = None if cfg.j12_cm is None else ex.units.cm_to_au(cfg.j12_cm)
    net = ExcitonNetwork.canonical(j12, cfg.ratio, cfg.noise_site)
    rows = []
    worst = 0.0
    for shape in shapes:
        if shape not in ("thin", "broad"):
            raise ConfigError(f"unknown shape {shape!r}")
        for temp in temps:
            try:
                bath = set_eta(SpectralDensity.named(shape), eta, net, temp, cfg.n_matsubara)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            expn = expand_correlation(bath)
            err = expansion_error(bath, expn)
            worst = max(worst, err)
            rows.append((shape, temp, expn.n_matsubara, err))
            print(f"{shape:5s} T={temp:8.1f} K  Matsubara={expn.n_matsubara:2d}  "
                  f"relative sup error={err:.3e}  {'PASS' if err < EXPANSION_TOL else 'FAIL'}")
            os.makedirs(cfg.directory, exist_ok=True)
            expn.save(os.path.join(cfg.directory, f"coefficients_{shape}_{temp:g}K.txt"))
    if rows:
        with open(os.path.join(cfg.directory, "validation.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["shape", "temperature_k", "n_matsubara", "relative_sup_error"])
            for r in rows:
                w.writerow([r[0], repr(float(r[1])), r[2], repr(float(r[3]))])
    return EXIT_OK if worst < EXPANSION_TOL else EXIT_VALIDATION


def cmd_rates(args) -> int:
    cfg = build_config(args)
    if cfg.experiment == "custom":
        cfg = cfg.updated(experiment="fig3")
    etas = _split(args.etas) if args.etas else list(ex.FIG3_ETAS)
    if not etas:
        raise ConfigError("rates: empty eta list")
    if cfg.eta is None and cfg.p is None:
        cfg = cfg.updated(eta=etas[0])
    os.makedirs(cfg.directory, exist_ok=True)
    rows = ex.rates_table(cfg, etas)
    ex.write_rates_csv(rows, os.path.join(cfg.directory, "rates.csv"))
    ex.write_plot_script(os.path.join(cfg.directory, "plot.gp"), panels=(), rates=True)
    for eta, r in rows:
        print(f"eta={eta:.4g}  spread={ex.rate_spread(r):.3f}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "scan": cmd_scan, "validate-expansion": cmd_validate, "rates": cmd_rates}


def main(argv=None) -> int:
    try:
        args = _parsers().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
