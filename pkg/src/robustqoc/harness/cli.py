"""Command line entry point.

    robustqoc optimize config.json      # solve every seed (sweep ignored)
    robustqoc sweep config.json         # solve every (sweep value, seed) cell
    robustqoc metrics solution.json     # re-evaluate a saved solution
    robustqoc compare a.json b.json     # paired E_V report of two configs
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .config import ConfigError, load_config
from .reports import paired_comparison, report_pareto, report_pauli_scan, write_table
from .runner import cross_evaluate, load_solution, run, solution_trajectory, verify_solution
from .scenarios import spec_from_dict


def _print_rows(rows) -> None:
    for r in rows:
        print(
            f"seed={r.seed:<3d} {r.sweep_param or 'value'}={r.sweep_value:<8g} {r.status:<10s} "
            f"F={r.fidelity:.6f} E_V={r.E_V:.3e} E_fine={r.E_fine:.3e} {r.wall_time:.1f}s"
        )


def cmd_optimize(args) -> int:
    cfg = replace(load_config(args.config), sweep=None)
    result = run(cfg)
    _print_rows(result.rows)
    print(f"wrote {result.csv_path}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if cfg.sweep is None:
        raise ConfigError("a sweep needs a 'sweep' entry", "sweep", source=args.config)
    result = run(cfg)
    _print_rows(result.rows)
    threshold = cfg.base_spec().fidelity_min
    frontier = report_pareto(result.rows, threshold)
    path = write_table(frontier.table(), result.csv_path.with_name(f"{cfg.label}_pareto.csv"))
    print(f"wrote {result.csv_path} and {path}")
    return 0


def cmd_metrics(args) -> int:
    sol = load_solution(args.solution)
    spec = spec_from_dict(sol["spec"])
    out = {
        "metrics": cross_evaluate(spec, solution_trajectory(sol), args.oversample),
        "constraints": verify_solution(sol),
    }
    if args.pauli:
        out["pauli_scan"] = [asdict(r) for r in report_pauli_scan(sol)]
    print(json.dumps(out, indent=1))
    return 0


def cmd_compare(args) -> int:
    runs = [run(load_config(path)) for path in (args.config_a, args.config_b)]
    cmp = paired_comparison(runs[0].rows, runs[1].rows, args.key)
    for p in cmp["pairs"]:
        mark = "<" if p["a_lower"] else (">=" if p["compared"] else "n/a")
        print(f"value={p['sweep_value']:<8g} seed={p['seed']:<3d} {p['a']:.3e} {mark:>3s} {p['b']:.3e}")
    print(f"A lower {args.key} on {cmp['n_a_lower']}/{cmp['n_compared']} compared pairs")
    if args.output:
        write_table(cmp["pairs"], args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustqoc", description="Robust gate design experiments.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="solve a config for every seed")
    p.add_argument("config")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("sweep", help="solve a config over its sweep values and seeds")
    p.add_argument("config")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("metrics", help="cross-evaluate a saved solution")
    p.add_argument("solution")
    p.add_argument("--oversample", type=int, default=None, help="fine-grid substeps per interval")
    p.add_argument("--pauli", action="store_true", help="add the two-qubit Pauli scan")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("compare", help="paired report of two configs")
    p.add_argument("config_a")
    p.add_argument("config_b")
    p.add_argument("--key", default="E_V", help="result column to compare")
    p.add_argument("--output", type=Path, default=None, help="write the pairs as CSV")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
