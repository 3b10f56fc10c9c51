"""Command-line entry points: ``wulff``, ``torsion``, ``deficits`` and ``anisolab run``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .deficits import deficit_report
from .domain import build_domain, describe
from .experiments import SCENARIOS, ScenarioConfig, emit_report, run_scenario
from .integrand import make_integrand
from .io import dumps, load_json, read_solution, write_solution
from .torsion import SolverConfig, solve_torsion, torsion_from_field
from .wulff import build_wulff


def _write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def wulff_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="wulff", description="Sample a Wulff shape and report "
                                     "its volume, moment constant and gauge moments.")
    parser.add_argument("--integrand", required=True, help="integrand JSON file")
    parser.add_argument("--spacing", required=True, type=float)
    parser.add_argument("--scale", type=float, default=1.0)
    parser.add_argument("--out", required=True, help="report JSON path")
    args = parser.parse_args(argv)
    F = make_integrand(load_json(args.integrand))
    K = build_wulff(F, args.spacing, scale=args.scale)
    report = K.to_json()
    report["momentConstantName"] = "C_K"
    _write_text(args.out, dumps(report))
    return 0


def _split_pair(text):
    parts = [p for p in text.split(",") if p]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected two comma-separated paths: solution,report")
    return parts


def torsion_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="torsion", description="Solve the anisotropic torsion "
                                     "problem on a domain.")
    parser.add_argument("--domain", required=True, help="domain JSON file")
    parser.add_argument("--integrand", required=True, help="integrand JSON file")
    parser.add_argument("--spacing", required=True, type=float)
    parser.add_argument("--tol", type=float, default=SolverConfig.tol)
    parser.add_argument("--out", required=True, type=_split_pair,
                        help="solution binary and report JSON, comma separated")
    args = parser.parse_args(argv)
    Fspec = load_json(args.integrand)
    Dspec = load_json(args.domain)
    F = make_integrand(Fspec)
    D = build_domain(Dspec, args.spacing, integrand=F)
    T = solve_torsion(D, F, SolverConfig(tol=args.tol))
    sol_path, report_path = args.out
    write_solution(sol_path, D.grid, T.u, {"integrand": Fspec, "domain": Dspec,
                                          "quantity": "torsion potential"})
    report = {"geometry": describe(D, F), "torsion": T.to_json(), "solution": sol_path}
    _write_text(report_path, dumps(report))
    return 0


def deficits_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="deficits", description="Evaluate the deficit suite on "
                                     "a domain, optionally with a stored torsion potential.")
    parser.add_argument("--domain", required=True, help="domain JSON file")
    parser.add_argument("--integrand", required=True, help="integrand JSON file")
    parser.add_argument("--spacing", type=float,
                        help="grid spacing (defaults to the one stored with --torsion)")
    parser.add_argument("--torsion", help="solution binary written by the torsion command")
    parser.add_argument("--out", required=True, help="report JSON path")
    args = parser.parse_args(argv)
    F = make_integrand(load_json(args.integrand))
    header = grid = values = None
    if args.torsion:
        header, grid, values = read_solution(args.torsion)
    spacing = args.spacing if args.spacing is not None else (grid.spacing if grid else None)
    if spacing is None:
        parser.error("--spacing is required without --torsion")
    D = build_domain(load_json(args.domain), spacing, integrand=F)
    T = None
    if grid is not None:
        if grid != D.grid:
            parser.error("stored solution grid does not match the domain grid")
        T = torsion_from_field(D, F, values)
    K = build_wulff(F, spacing)
    report = {"geometry": describe(D, F), "deficits": deficit_report(D, F, K, T).to_json()}
    _write_text(args.out, dumps(report))
    return 0


def anisolab_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="anisolab", description="Scenario runner.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario and write its reports")
    run.add_argument("scenario", choices=SCENARIOS)
    run.add_argument("--config", required=True, help="scenario config JSON")
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--svg", action="store_true", help="also write the SVG plot")
    run.add_argument("--timing", action="store_true",
                     help="record wall time in the JSON provenance (breaks byte-identity)")
    args = parser.parse_args(argv)
    cfg = ScenarioConfig.from_file(args.config)
    if cfg.scenario != args.scenario:
        parser.error(f"config is for scenario {cfg.scenario!r}, not {args.scenario!r}")
    report = run_scenario(cfg, jobs=max(1, args.jobs))
    formats = [f for f in ("json", "csv") if f in cfg.outputs]
    if args.svg:
        if "svg" not in cfg.outputs:
            parser.error("--svg needs outputs.svg in the config")
        formats.append("svg")
    emit_report(report, formats, include_timing=args.timing)
    for a in report.assertions:
        print(f"{'PASS' if a['passed'] else 'FAIL'} {a['name']}")
    print(f"{report.scenario}: {'all assertions passed' if report.passed else 'FAILED: ' + ', '.join(report.failures)}")
    return 0 if report.passed else 1


def _entry(main):
    def run():
        sys.exit(main())
    return run


wulff = _entry(wulff_main)
torsion = _entry(torsion_main)
deficits = _entry(deficits_main)
anisolab = _entry(anisolab_main)
