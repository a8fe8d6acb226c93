"""Command-line entry point: ``nlbs --config run.json [--out DIR] ...``.

Exit status: 0 on success, 2 for configuration problems, 3 when the
numerics fail (blow-up, non-convergence, escaped paths, ...).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import config as cfgmod
from .convergence import convergence_study
from .errors import ConfigError, NLBSError
from .hedge import HedgeRunConfig, refinement_study
from .impact import LinearImpact, NoImpact, make_nonlinearity
from .io import (read_surface_json, write_plot, write_surface_csv, write_surface_json,
                 write_table_csv, write_table_json)
from .payoffs import facelift
from .pde import solve

log = logging.getLogger("nlbs")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _tables(cfg, out, name, header, rows):
    rows = list(rows)
    if cfg.fmt in ("csv", "both"):
        write_table_csv(os.path.join(out, name + ".csv"), header, rows)
    if cfg.fmt in ("json", "both"):
        write_table_json(os.path.join(out, name + ".json"), header, rows)


def _surface(cfg, out, name, surf):
    if cfg.fmt in ("csv", "both"):
        write_surface_csv(surf, os.path.join(out, name + ".csv"))
    if cfg.fmt in ("json", "both"):
        write_surface_json(surf, os.path.join(out, name + ".json"))


def _summary(out, name, data):
    with open(os.path.join(out, name), "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_price(cfg, out):
    surf = solve(cfg.payoff, cfg.impact, cfg.sigma, cfg.maturity, cfg.grid, cfg.facelift_first)
    base = solve(cfg.payoff, NoImpact(), cfg.sigma, cfg.maturity, cfg.grid, cfg.facelift_first)
    _surface(cfg, out, "surface", surf)
    header = ["S", "u_impact", "u_no_impact"]
    cols = [surf.prices, surf.values[0], base.values[0]]
    scales = cfg.block("price").get("lambda_scales", [])
    if scales and not isinstance(cfg.impact, LinearImpact):
        raise ConfigError(["price/lambda_scales: only valid with a linear impact block"])
    for k in scales:
        s = solve(cfg.payoff, LinearImpact(cfg.impact.lam * k), cfg.sigma, cfg.maturity,
                  cfg.grid, cfg.facelift_first)
        header.append(f"u_lambda_x{k:g}")
        cols.append(s.values[0])
    write_plot(os.path.join(out, "price_curves.txt"), header, cols)
    diff = surf.values - base.values
    _summary(out, "price_summary.json", {
        "impact": surf.metadata["impact"],
        "facelifted": surf.metadata["facelifted"],
        "min_u_impact_minus_u_no_impact": float(diff.min()),
        "max_u_impact_minus_u_no_impact": float(diff.max()),
        "max_gamma_c": float(surf.gamma_c.max()),
        "max_nl_last_change": float(max(h[-1] for h in surf.nl_history)),
    })
    log.info("price: max(u - u0) = %.6g, min(u - u0) = %.3g", diff.max(), diff.min())


def cmd_facelift(cfg, out):
    lam = cfg.block("facelift").get("Lambda")
    if lam is None:
        lam = cfg.impact.upper_bound
    res = facelift(cfg.payoff, lam, cfg.grid)
    s = cfg.grid.prices
    raw = cfg.payoff(s)
    rows = zip(s, raw, res.lifted_values, res.active_set.astype(int))
    _tables(cfg, out, "facelift", ["S", "payoff", "lifted", "active"], rows)
    write_plot(os.path.join(out, "facelift.txt"), ["S", "payoff", "lifted"],
               [s, raw, res.lifted_values])
    log.info("facelift: Lambda=%g, %d PSOR sweeps, max violation %.3g",
             lam, res.sweeps, res.max_violation)


def cmd_hedge(cfg, out):
    h = cfg.block("hedge")
    if "surface_file" in h:
        surf = read_surface_json(h["surface_file"])
    else:
        surf = solve(cfg.payoff, cfg.impact, cfg.sigma, cfg.maturity, cfg.grid,
                     cfg.facelift_first)
    steps = h.get("steps", [100])
    hc = HedgeRunConfig(surf, cfg.impact, cfg.sigma, h["s0"], steps[-1],
                        h.get("n_paths", 10_000), cfg.seed)
    rows, reports = refinement_study(hc, steps)
    fine = reports[-1]
    _tables(cfg, out, "hedge_paths", ["path_id", "S_T", "delta_term", "impact_term", "error"],
            fine.rows())
    _tables(cfg, out, "refinement", ["n_steps", "rms_error", "mean_error", "escaped"],
            [(r.n_steps, r.rms_error, r.mean_error, r.escaped) for r in rows])
    _summary(out, "hedge_summary.json", {**fine.summary(), "seed": cfg.seed})
    for r in rows:
        log.info("hedge: n_steps=%d rms=%.6g mean=%.3g escaped=%d",
                 r.n_steps, r.rms_error, r.mean_error, r.escaped)


def cmd_converge(cfg, out):
    c = cfg.block("converge")
    rows, _ = convergence_study(cfg.payoff, cfg.sigma, c["gamma_max"],
                                c.get("n_list", [1, 2, 4, 8]), cfg.grid, cfg.maturity,
                                c.get("tau_frac", 0.05))
    _tables(cfg, out, "convergence", ["n", "sup_distance", "max_gamma_excess"],
            [(r.n, r.sup_distance, r.max_gamma_excess) for r in rows])
    for r in rows:
        log.info("converge: n=%g distance=%.6g excess=%.6g", r.n, r.sup_distance,
                 r.max_gamma_excess)


def cmd_supply_curve(cfg, out):
    sc = cfg.block("supply_curve")
    g = np.linspace(sc["gamma_min"], sc["gamma_max"], sc.get("n_points", 201))
    eps = cfg.raw.get("grid", {}).get("epsilon")
    nl = make_nonlinearity(cfg.impact, cfg.sigma, cap=None if eps is None else 1.0 / eps)
    mu = np.asarray(nl.mu(g), dtype=float)
    vol = cfg.sigma * np.sqrt(mu)
    _tables(cfg, out, "supply_curve", ["gamma_c", "sigma_eff", "mu"], zip(g, vol, mu))
    write_plot(os.path.join(out, "supply_curve.txt"), ["gamma_c", "sigma_eff"], [g, vol])
    log.info("supply-curve: %d points", g.size)


COMMANDS = {
    "price": cmd_price,
    "facelift": cmd_facelift,
    "hedge": cmd_hedge,
    "converge": cmd_converge,
    "supply-curve": cmd_supply_curve,
}


def _parser():
    p = argparse.ArgumentParser(prog="nlbs", description="Option pricing under market impact.")
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--seed", type=int, help="64-bit seed (overrides the config)")
    p.add_argument("--format", choices=("csv", "json", "both"), help="table format")
    p.add_argument("--quiet", action="store_true", help="suppress progress messages")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    try:
        cfg = cfgmod.load(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError(["--seed: must fit in 64 bits"])
            cfg.seed = args.seed
        if args.format:
            cfg.fmt = args.format
        out = args.out or cfg.out_dir
        os.makedirs(out, exist_ok=True)
        COMMANDS[cfg.command](cfg, out)
    except ConfigError as exc:
        for line in exc.errors:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except NLBSError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
