"""Command line surface: run, study, compare, presets.

Exit status is the machine-readable verdict: 0 means the run completed
with every requested inequality check passing, 1 means at least one check
was violated beyond its tolerance, 2 is a configuration or usage problem,
and 3 is a solver failure.  Output lands in the scenario's [output]
directory unless --output overrides it; relative directories resolve
against DNFLOW_OUTPUT_ROOT when that variable is set.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

from .evolution import ConfigurationError, EvolutionError, run_evolution
from .comparison import (ComparisonRun, check_gronwall_l1, check_l1_contraction,
                         check_positive_part, run_pair)
from .config import (ConfigError, ScenarioConfig, build_comparison,
                     build_evolution, load_scenario, preset_description,
                     preset_names, preset_text)
from .report import RunArtifacts, emit_report
from .study import refinement_study, scenario_monitors

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3

OUTPUT_ROOT_VAR = "DNFLOW_OUTPUT_ROOT"


def resolve_output(sc: ScenarioConfig, override: Optional[str]) -> Path:
    """--output beats [output] directory; the env root anchors relative paths."""
    directory = Path(override if override is not None else sc.output.directory)
    if not directory.is_absolute():
        root = os.environ.get(OUTPUT_ROOT_VAR)
        if root:
            directory = Path(root) / directory
    return directory


def _load(path: str) -> ScenarioConfig:
    return load_scenario(path)


def _apply_flags(sc: ScenarioConfig, args) -> ScenarioConfig:
    if getattr(args, "no_figures", False):
        sc = replace(sc, output=replace(sc.output, figures=False))
    return sc


def _comparison_reports(sc: ScenarioConfig, cr: ComparisonRun) -> tuple:
    """Whichever pairwise checks the scenario makes applicable."""
    mon = sc.monitors
    kwargs = {}
    if mon.gronwall_absolute is not None:
        kwargs["absolute"] = mon.gronwall_absolute
    if mon.gronwall_relative is not None:
        kwargs["relative"] = mon.gronwall_relative
    reports = [check_gronwall_l1(cr, **kwargs)]
    if cr.source.monotone:
        reports.append(check_positive_part(cr, **kwargs))
    if cr.source.is_zero and sc.effective_forcing2 == sc.forcing:
        reports.append(check_l1_contraction(cr))
    return tuple(reports)


def _finish(art: RunArtifacts, outdir: Path, failure: Optional[str]) -> int:
    emit_report(art, outdir)
    report = (outdir / "report.txt").read_text().rstrip("\n")
    print(report)
    print(f"bundle: {outdir}")
    if failure is not None:
        print(f"solver failure: {failure}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_VIOLATION if art.violations else EXIT_OK


def _cmd_run(args) -> int:
    sc = _apply_flags(_load(args.config), args)
    outdir = resolve_output(sc, args.output)

    if sc.comparison_configured:
        cr = build_comparison(sc)
        try:
            run_pair(cr)
        except EvolutionError as err:
            art = RunArtifacts(sc, trajectory=err.trajectory)
            return _finish(art, outdir, str(err))
        reports = scenario_monitors(sc, cr.first)
        creports = _comparison_reports(sc, cr) if sc.monitors.enabled else ()
        art = RunArtifacts(sc, trajectory=cr.first, reports=tuple(reports),
                           comparison=cr, comparison_reports=creports)
        return _finish(art, outdir, None)

    cfg = build_evolution(sc)
    try:
        traj = run_evolution(cfg)
    except EvolutionError as err:
        art = RunArtifacts(sc, trajectory=err.trajectory)
        return _finish(art, outdir, str(err))
    reports = scenario_monitors(sc, traj)
    art = RunArtifacts(sc, trajectory=traj, reports=tuple(reports))
    return _finish(art, outdir, None)


def _cmd_compare(args) -> int:
    sc = _apply_flags(_load(args.config), args)
    if not sc.comparison_configured:
        raise ConfigError("initial2", None,
                          "compare needs a second initial datum")
    return _cmd_run(args)


def _cmd_study(args) -> int:
    sc = _apply_flags(_load(args.config), args)
    outdir = resolve_output(sc, args.output)
    result = refinement_study(sc, args.levels, args.target)
    art = RunArtifacts(sc, study=result)
    emit_report(art, outdir)
    print((outdir / "study.txt").read_text().rstrip("\n"))
    print(f"bundle: {outdir}")
    if result.failure is not None:
        print(f"solver failure: {result.failure}", file=sys.stderr)
        return EXIT_SOLVER
    if any(r.checks_failed for r in result.rows):
        return EXIT_VIOLATION
    return EXIT_OK


def _cmd_presets(args) -> int:
    if args.action == "list":
        width = max(len(n) for n in preset_names())
        for name in preset_names():
            print(f"{name:<{width}}  {preset_description(name)}")
        return EXIT_OK
    if args.name is None:
        print("presets show needs a preset name", file=sys.stderr)
        return EXIT_CONFIG
    print(preset_text(args.name), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dnflow",
        description="implicit stepping and inequality monitors for doubly "
                    "nonlinear diffusion")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("config", help="scenario document path")
        p.add_argument("--output", default=None,
                       help="output directory (overrides [output])")
        p.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")

    p_run = sub.add_parser("run", help="run a scenario and write its bundle")
    common(p_run)
    p_run.set_defaults(handler=_cmd_run)

    p_cmp = sub.add_parser("compare",
                           help="run a two-member scenario and check the "
                                "pairwise bounds")
    common(p_cmp)
    p_cmp.set_defaults(handler=_cmd_compare)

    p_study = sub.add_parser("study", help="re-run under refinement")
    common(p_study)
    p_study.add_argument("--levels", type=int, default=3,
                         help="refinement levels (at least 3)")
    p_study.add_argument("--target", choices=("time", "space"),
                         default="time", help="which mesh to halve")
    p_study.set_defaults(handler=_cmd_study)

    p_pre = sub.add_parser("presets", help="list or show shipped scenarios")
    p_pre.add_argument("action", choices=("list", "show"))
    p_pre.add_argument("name", nargs="?", default=None,
                       help="preset name (for show)")
    p_pre.set_defaults(handler=_cmd_presets)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 for --help
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigurationError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as err:
        print(f"cannot read config: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except EvolutionError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
