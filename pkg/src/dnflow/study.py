"""Refinement studies: rerun a scenario on halved steps and measure drift.

A study runs the same scenario at successively finer resolution, halving
the step size (``target="time"``) or the mesh width (``target="space"``)
per level, and records for each level the termination data, the monitor
verdicts, and the space-time L2 distance between the piecewise-linear
reconstructions of adjacent levels.  Observed orders come from successive
difference ratios, so they need at least three levels; a vanishing
difference leaves the order undefined and it is reported that way rather
than invented.

When the scenario is the linear special case (identity graph, quadratic
flux, no source, no forcing, eigenmode initial datum), each level also
records the sup distance between the final state and the closed-form
eigenmode amplitude of the implicit step, which decays geometrically per
step with factor 1/(1 + tau lambda_h).

Studies run the primary member of the scenario; comparison sections are
ignored here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from .config import ScenarioConfig, build_evolution, load_scenario, \
    monitor_tolerances
from .elliptic_step import potential_integral
from .evolution import (ConfigurationError, EvolutionError, Trajectory,
                        pl_l2_distance, run_evolution, standard_monitors)
from .grid import eigenmode_eigenvalue, first_eigenmode, inner, norm, \
    restrict_to

__all__ = [
    "StudyRow",
    "StudyResult",
    "refinement_study",
    "scenario_monitors",
    "analytic_heat_error",
]


@dataclass(frozen=True)
class StudyRow:
    level: int
    cells: tuple
    tau: float
    termination: str
    termination_step: Optional[int]
    validity_steps: int
    extinction_time: Optional[float]
    saturation_step: Optional[int]
    checks_passed: int
    checks_failed: int
    gradient_accumulation: float
    analytic_error: Optional[float]
    difference: Optional[float]      # L2(Q) drift to the next finer level
    order: Optional[float]           # log2 of successive difference ratio


@dataclass(frozen=True)
class StudyResult:
    target: str
    rows: tuple
    orders: tuple                    # the defined orders, coarse to fine
    failure: Optional[str] = None

    @property
    def completed(self) -> bool:
        return self.failure is None


def scenario_monitors(sc: ScenarioConfig, traj: Trajectory) -> list:
    """The monitor reports the scenario's toggles ask for."""
    mon = sc.monitors
    if not mon.enabled:
        return []
    reports = standard_monitors(traj, monitor_tolerances(sc))
    wanted = {"sup-bound": mon.sup, "energy": mon.energy,
              "chain-rule": mon.chain}
    return [r for r in reports if wanted.get(r.monitor, mon.mode)]


def analytic_heat_error(sc: ScenarioConfig, traj: Trajectory) -> Optional[float]:
    """Final-state sup error against the closed-form eigenmode amplitude.

    Defined for the linear scenario only: identity graph, single quadratic
    flux term, no source, no forcing, eigenmode initial datum.  Returns
    None elsewhere.
    """
    linear = (sc.graph.kind == "identity"
              and sc.flux.kind == "power" and sc.flux.p == 2.0
              and not sc.flux.epsilon
              and sc.source.kind == "zero"
              and sc.forcing is None
              and sc.initial.preset == "eigenmode")
    if not linear:
        return None
    grid = traj.grid
    tau = traj.tau
    lam = eigenmode_eigenvalue(grid)
    n = len(traj.states) - 1
    amplitude = sc.initial.amplitude / (1.0 + tau * lam) ** n
    exact = first_eigenmode(grid) * amplitude
    return (traj.states[-1].u - exact).linf()


def _shared_mesh_distance(coarse: Trajectory, fine: Trajectory) -> float:
    """L2(Q) distance when both runs share the time mesh but not the grid."""
    tau = coarse.tau
    common = min(len(coarse.states), len(fine.states))
    errors = [coarse.states[n].u - restrict_to(fine.states[n].u, coarse.grid)
              for n in range(common)]
    total = 0.0
    for a, b in zip(errors[:-1], errors[1:]):
        total += (tau / 3.0) * (norm(a, "l2") ** 2 + inner(a, b)
                                + norm(b, "l2") ** 2)
    return math.sqrt(max(total, 0.0))


def _level_scenario(sc: ScenarioConfig, level: int, target: str) -> ScenarioConfig:
    if target == "time":
        return replace(sc, steps=sc.steps * 2 ** level)
    cells = tuple(c * 2 ** level for c in sc.cells)
    initial = sc.initial
    if initial.preset == "samples":
        raise ConfigurationError(
            "space studies cannot rescale a samples initial datum")
    return replace(sc, cells=cells)


def refinement_study(scenario: Union[ScenarioConfig, str], levels: int,
                     target: str = "time") -> StudyResult:
    """Run ``levels`` halvings and collect drift, orders, and terminations.

    A level that fails to solve ends the study; the result carries the rows
    of every completed level and the failure message.
    """
    sc = scenario if isinstance(scenario, ScenarioConfig) \
        else load_scenario(scenario)
    if levels < 3:
        raise ConfigurationError("a study needs at least three levels")
    if target not in ("time", "space"):
        raise ConfigurationError(
            f"study target must be time or space, got {target!r}")

    trajectories = []
    rows = []
    failure = None
    for level in range(levels):
        level_sc = _level_scenario(sc, level, target)
        cfg = build_evolution(level_sc)
        try:
            traj = run_evolution(cfg)
        except EvolutionError as err:
            failure = f"level {level}: {err}"
            break
        reports = scenario_monitors(level_sc, traj)
        checks = [c for rep in reports for c in rep.checks]
        term = traj.termination
        accumulation = sum(traj.tau * potential_integral(cfg.flux, s.u)
                           for s in traj.states[1:])
        rows.append(StudyRow(
            level=level, cells=level_sc.cells, tau=traj.tau,
            termination=term.kind, termination_step=term.step,
            validity_steps=traj.validity_steps,
            extinction_time=(term.step * traj.tau
                             if term.kind == "extinct" else None),
            saturation_step=(term.step
                             if term.kind == "truncation_saturated" else None),
            checks_passed=sum(c.passed for c in checks),
            checks_failed=sum(not c.passed for c in checks),
            gradient_accumulation=accumulation,
            analytic_error=analytic_heat_error(level_sc, traj),
            difference=None, order=None))
        trajectories.append(traj)

    differences = []
    for coarse, fine in zip(trajectories[:-1], trajectories[1:]):
        if target == "time":
            differences.append(pl_l2_distance(coarse, fine))
        else:
            differences.append(_shared_mesh_distance(coarse, fine))
    orders = []
    for d_coarse, d_fine in zip(differences[:-1], differences[1:]):
        if d_coarse > 0.0 and d_fine > 0.0:
            orders.append(math.log2(d_coarse / d_fine))
        else:
            orders.append(None)

    for k, d in enumerate(differences):
        rows[k] = replace(rows[k], difference=d)
    for k, o in enumerate(orders):
        rows[k] = replace(rows[k], order=o)

    return StudyResult(target, tuple(rows),
                       tuple(o for o in orders if o is not None), failure)
