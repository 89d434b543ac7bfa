"""Output bundles: delimited data, a plain-text verdict, and figures.

Everything a run leaves on disk goes through this module.  Data files are
deterministic byte for byte for a fixed scenario document: floats render
at full round-trip precision (%.17g), column order is fixed, and
wall-clock information is confined to metadata.txt, which is the one file
allowed to differ between reruns.  Figures render through the Agg backend
into the same directory when the [output] section asks for them.

The report.txt verdict lists one line per inequality check with its
pass/fail state and worst slack.  With monitors disabled it carries only
the run metadata block.
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .grid import GridField, norm
from .elliptic_step import potential_integral
from .evolution import MonitorReport, Trajectory
from .comparison import ComparisonRun
from .config import ScenarioConfig, serialize_scenario
from .study import StudyResult


# -- value formatting -------------------------------------------------------------

def format_value(value) -> str:
    """One cell of a data file; fixed rendering so reruns agree byte for byte."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    if isinstance(value, tuple):
        return "x".join(str(c) for c in value)
    return str(value)


def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, newline="\n")
    return path


def _write_csv(path: Path, header: tuple, rows) -> Path:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    return _write_text(path, "\n".join(lines) + "\n")


# -- bundle contents --------------------------------------------------------------

@dataclass
class RunArtifacts:
    """What a CLI verb hands to emit_report.

    Any subset may be present: a scenario run fills trajectory and reports,
    a comparison adds the pair and its checks, a refinement study fills
    study.  report.txt and the data files adapt to whichever parts exist.
    """

    scenario: ScenarioConfig
    trajectory: Optional[Trajectory] = None
    reports: tuple = ()
    comparison: Optional[ComparisonRun] = None
    comparison_reports: tuple = ()
    study: Optional[StudyResult] = None

    @property
    def all_reports(self) -> tuple:
        return tuple(self.reports) + tuple(self.comparison_reports)

    @property
    def violations(self) -> int:
        return sum(1 for r in self.all_reports for c in r.checks if not c.passed)


# -- individual writers -----------------------------------------------------------

def write_config(sc: ScenarioConfig, outdir: Path) -> Path:
    return _write_text(outdir / "config.ini", serialize_scenario(sc))


def write_metadata(outdir: Path) -> Path:
    """The only file carrying wall-clock state; data files stay reproducible."""
    try:
        from importlib.metadata import version
        pkg = version("dnflow")
    except Exception:
        pkg = "unpackaged"
    lines = [
        "written = " + time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "dnflow = " + pkg,
        "python = " + sys.version.split()[0],
        "numpy = " + np.__version__,
    ]
    return _write_text(outdir / "metadata.txt", "\n".join(lines) + "\n")


_SERIES_HEADER = ("step", "time", "sup-u", "sup-beta", "l2-u", "flux-energy",
                  "residual", "iterations")


def write_series(traj: Trajectory, outdir: Path, name: str = "series.csv") -> Path:
    """Per-state curves, one row per recorded state; plot-ready columns."""
    flux = traj.config.flux
    records = {rec.index: rec for rec in traj.steps}
    rows = []
    for s in traj.states:
        rec = records.get(s.index - 1)
        rows.append((s.index, s.time, s.u.linf(), s.beta.linf(),
                     norm(s.u, "l2"), potential_integral(flux, s.u),
                     rec.residual_norm if rec else None,
                     rec.iterations if rec else None))
    return _write_csv(outdir / name, _SERIES_HEADER, rows)


def write_monitors(reports, outdir: Path) -> Path:
    rows = [(r.monitor, c.name, c.passed, c.worst_slack, c.worst_step)
            for r in reports for c in r.checks]
    return _write_csv(outdir / "monitors.csv",
                      ("monitor", "check", "passed", "worst-slack", "worst-step"),
                      rows)


def _snapshot_indices(traj: Trajectory, sc: ScenarioConfig) -> tuple:
    """Requested times snapped to the nearest realized state, deduplicated."""
    last = traj.states[-1]
    times = sc.output.snapshots
    if times is None:
        times = (0.0, last.time)
    tau = traj.config.tau
    seen, indices = set(), []
    for t in times:
        k = int(round(min(max(t, 0.0), last.time) / tau))
        k = min(k, last.index)
        if k not in seen:
            seen.add(k)
            indices.append(k)
    return tuple(indices)


def write_snapshots(traj: Trajectory, sc: ScenarioConfig, outdir: Path,
                    subdir: str = "snapshots") -> tuple:
    """Cell-center fields at the requested times: coordinates, u, beta."""
    grid = traj.states[0].u.grid
    axes = ("x", "y")[:grid.dim]
    mesh = grid.center_mesh()
    written = []
    for k in _snapshot_indices(traj, sc):
        state = traj.states[k]
        columns = [m.ravel() for m in mesh]
        columns += [state.u.values.ravel(), state.beta.values.ravel()]
        rows = zip(*(c.tolist() for c in columns))
        path = _write_csv(outdir / subdir / f"state-{k:04d}.csv",
                          axes + ("u", "beta"), rows)
        written.append(path)
    return tuple(written)


_COMPARISON_HEADER = ("step", "time", "l1-distance", "gronwall-bound", "slack",
                      "positive-part", "ordering-violations")


def write_comparison(cr: ComparisonRun, outdir: Path) -> Path:
    rows = [(r.step, r.time, r.l1, r.bound, r.slack, r.positive,
             r.ordering_violations) for r in cr.rows]
    return _write_csv(outdir / "comparison.csv", _COMPARISON_HEADER, rows)


_STUDY_HEADER = ("level", "cells", "tau", "termination", "termination-step",
                 "validity-steps", "extinction-time", "saturation-step",
                 "checks-passed", "checks-failed", "gradient-accumulation",
                 "analytic-error", "difference", "order")


def write_study(result: StudyResult, outdir: Path) -> tuple:
    rows = [(r.level, r.cells, r.tau, r.termination, r.termination_step,
             r.validity_steps, r.extinction_time, r.saturation_step,
             r.checks_passed, r.checks_failed, r.gradient_accumulation,
             r.analytic_error, r.difference, r.order) for r in result.rows]
    csv_path = _write_csv(outdir / "study.csv", _STUDY_HEADER, rows)

    lines = [f"refinement target: {result.target}",
             f"levels run: {len(result.rows)}", ""]
    for r in result.rows:
        cells = "x".join(str(c) for c in r.cells)
        lines.append(f"level {r.level}: cells {cells}, tau {r.tau:.6g}, "
                     f"{r.termination}, checks {r.checks_passed} pass"
                     f" / {r.checks_failed} fail")
        if r.extinction_time is not None:
            lines.append(f"  extinction time {r.extinction_time:.6g}")
        if r.analytic_error is not None:
            lines.append(f"  analytic amplitude error {r.analytic_error:.6g}")
        if r.difference is not None:
            lines.append(f"  distance to next level {r.difference:.6g}")
        if r.order is not None:
            lines.append(f"  observed order {r.order:.4f}")
    defined = [o for o in result.orders if o is not None]
    lines.append("")
    if defined:
        lines.append("observed orders: "
                     + ", ".join(f"{o:.4f}" for o in result.orders
                                 if o is not None))
    else:
        lines.append("observed orders: undefined (vanishing differences)")
    if result.failure is not None:
        lines.append(f"study aborted early: {result.failure}")
    txt_path = _write_text(outdir / "study.txt", "\n".join(lines) + "\n")
    return (csv_path, txt_path)


# -- the plain-text verdict --------------------------------------------------------

def _metadata_block(art: RunArtifacts) -> list:
    sc = art.scenario
    cells = "x".join(str(c) for c in sc.cells)
    lines = [
        f"graph: {sc.graph.kind}   flux: {sc.flux.kind} (p = {sc.flux.p:g})"
        f"   source: {sc.source.kind}",
        f"mode: {sc.mode}",
        f"grid: {cells} cells   steps: {sc.steps}"
        f"   tau: {sc.horizon / sc.steps:.6g}   horizon: {sc.horizon:g}",
    ]
    traj = art.trajectory
    if traj is not None:
        term = traj.termination
        suffix = "" if term.step is None else f" at step {term.step}"
        lines.append(f"termination: {term.kind}{suffix}")
        lines.append(f"truncation level: {traj.truncation_level:.6g}"
                     f"   validity steps: {traj.validity_steps}")
        if traj.steps:
            worst = max(rec.residual_norm for rec in traj.steps)
            iters = sum(rec.iterations for rec in traj.steps)
            lines.append(f"worst step residual: {worst:.3e}"
                         f"   newton iterations: {iters}")
    cr = art.comparison
    if cr is not None and cr.paired:
        lines.append(f"comparison pair: terminations "
                     f"{cr.first.termination.kind} / {cr.second.termination.kind}"
                     f"   lipschitz bound: {cr.lipschitz_bound:.6g}")
    if art.study is not None:
        lines.append(f"refinement study: target {art.study.target}, "
                     f"{len(art.study.rows)} levels")
    return lines


def _check_lines(reports) -> list:
    lines = []
    for rep in reports:
        for c in rep.checks:
            state = "pass" if c.passed else "FAIL"
            at = "" if c.worst_step is None else f" (step {c.worst_step})"
            lines.append(f"{c.name:<28} {state:<5} worst slack "
                         f"{c.worst_slack:.6e}{at}")
    return lines


def write_report(art: RunArtifacts, outdir: Path) -> Path:
    lines = _metadata_block(art)
    checks = _check_lines(art.all_reports)
    if checks:
        lines.append("")
        lines.extend(checks)
        lines.append("")
        bad = art.violations
        lines.append("verdict: pass" if bad == 0
                     else f"verdict: FAIL ({bad} violated)")
    return _write_text(outdir / "report.txt", "\n".join(lines) + "\n")


# -- figures -----------------------------------------------------------------------

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def render_run_figures(traj: Trajectory, outdir: Path) -> tuple:
    plt = _pyplot()
    times = [s.time for s in traj.states]
    flux = traj.config.flux

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(times, [s.u.linf() for s in traj.states], label="sup |u|")
    ax.plot(times, [s.beta.linf() for s in traj.states],
            label="sup |beta(u)|", linestyle="--")
    ax.set_xlabel("t")
    ax.legend()
    ax.set_title("sup norms")
    sup_path = outdir / "sup-curve.png"
    fig.savefig(sup_path, dpi=110)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(times, [potential_integral(flux, s.u) for s in traj.states])
    ax.set_xlabel("t")
    ax.set_ylabel("flux energy")
    ax.set_title("flux potential of u(t)")
    energy_path = outdir / "energy-curve.png"
    fig.savefig(energy_path, dpi=110)
    plt.close(fig)
    return (sup_path, energy_path)


def render_comparison_figure(cr: ComparisonRun, outdir: Path) -> Path:
    plt = _pyplot()
    t = [r.time for r in cr.rows]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(t, [r.l1 for r in cr.rows], label="L1 distance")
    ax.plot(t, [r.bound for r in cr.rows], label="envelope", linestyle="--")
    ax.plot(t, [r.positive for r in cr.rows], label="positive part",
            linestyle=":")
    ax.set_xlabel("t")
    ax.legend()
    ax.set_title("transformed-state distances")
    path = outdir / "comparison.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def render_study_figure(result: StudyResult, outdir: Path) -> Optional[Path]:
    pairs = [(r.tau, r.difference) for r in result.rows
             if r.difference is not None and r.difference > 0.0]
    if len(pairs) < 2:
        return None
    plt = _pyplot()
    taus = [p[0] for p in pairs]
    diffs = [p[1] for p in pairs]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.loglog(taus, diffs, marker="o", label="successive distance")
    # slope-one guide anchored on the coarsest pair
    guide = [diffs[0] * t / taus[0] for t in taus]
    ax.loglog(taus, guide, linestyle="--", label="order 1")
    ax.set_xlabel("tau")
    ax.invert_xaxis()
    ax.legend()
    ax.set_title(f"refinement distances ({result.target})")
    path = outdir / "study.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


# -- the bundle --------------------------------------------------------------------

def emit_report(art: RunArtifacts, directory) -> tuple:
    """Write the full bundle for whatever the artifacts contain.

    Returns the paths written.  Data files are deterministic; metadata.txt
    and the PNGs are not held to that.
    """
    outdir = Path(directory)
    outdir.mkdir(parents=True, exist_ok=True)
    written = [write_config(art.scenario, outdir), write_metadata(outdir)]

    if art.trajectory is not None:
        written.append(write_series(art.trajectory, outdir))
        written.extend(write_snapshots(art.trajectory, art.scenario, outdir))
    if art.all_reports:
        written.append(write_monitors(art.all_reports, outdir))
    if art.comparison is not None and art.comparison.paired:
        written.append(write_comparison(art.comparison, outdir))
        written.append(write_series(art.comparison.second, outdir,
                                    name="series-2.csv"))
    if art.study is not None:
        written.extend(write_study(art.study, outdir))
    written.append(write_report(art, outdir))

    if art.scenario.output.figures:
        if art.trajectory is not None:
            written.extend(render_run_figures(art.trajectory, outdir))
        if art.comparison is not None and art.comparison.paired:
            written.append(render_comparison_figure(art.comparison, outdir))
        if art.study is not None:
            fig = render_study_figure(art.study, outdir)
            if fig is not None:
                written.append(fig)
    return tuple(written)
