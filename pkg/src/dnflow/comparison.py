"""Two-solution comparison harness.

Runs a pair of trajectories that share the graph, the flux, the source, the
grid, the step size, and the truncation level, then certifies the distance
inequalities the scheme satisfies:

* an L1 Gronwall envelope
      ||beta(u1^n) - beta(u2^n)||_1
          <= e^{L t_n} D_0 + sum_{k<n} e^{L (t_n - k tau)} tau ||f1^k - f2^k||_1
  with D_0 the initial L1 distance and L the Lipschitz constant of the
  truncated source over the realized beta range;
* the positive-part analogue with (.)_+ in place of |.|, available when the
  source is monotone nondecreasing;
* the ordering corollary: transformed data ordered at time zero plus ordered
  forcing keep the transformed fields ordered nodewise at every step;
* exact per-step L1 contraction when the source vanishes and the forcings
  agree, where the envelope degenerates to a plain monotonicity statement.

The flux must be homogeneous (no spatial dependence); the contraction
argument tests the two stationarity conditions against the sign pattern of
the difference and a drifting coefficient would leave extra terms.

The checks run on whatever state range both trajectories computed, whether
or not a run terminated early, because the per-step argument only uses the
shared step operator and never the validity window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .elliptic_step import DEFAULT_STEP_TOL
from .evolution import (CheckResult, ConfigurationError, EvolutionConfig,
                        MODE_INVERSE_LIPSCHITZ, MonitorReport, Trajectory,
                        run_evolution, select_truncation_level)
from .graphs import FluxLaw, MonotoneGraph, SourceLaw, lipschitz_on_interval
from .grid import GridField, norm, positive_part_integral

__all__ = [
    "ComparisonRun",
    "DistanceRow",
    "run_pair",
    "check_gronwall_l1",
    "check_positive_part",
    "check_l1_contraction",
    "GRONWALL_ABSOLUTE",
    "GRONWALL_RELATIVE",
]

GRONWALL_ABSOLUTE = 1e-6
GRONWALL_RELATIVE = 1e-2


@dataclass(frozen=True)
class DistanceRow:
    """Distances and envelopes at one shared state index."""

    step: int
    time: float
    l1: float
    bound: float
    slack: float                 # bound - l1, before tolerance
    positive: float
    positive_bound: float
    ordering_violations: int     # nodes with beta(u1) > beta(u2)


@dataclass
class ComparisonRun:
    """A pair of problems differing only in initial datum and forcing.

    ``run_pair`` fills the result fields (trajectories, Lipschitz bound,
    per-step distance rows); the check functions call it on demand.  The
    truncation level defaults to the selection rule applied to whichever
    initial datum has the larger transformed sup norm, so both members see
    the same clamped source.
    """

    graph: MonotoneGraph
    flux: FluxLaw
    source: SourceLaw
    initial_1: GridField
    initial_2: GridField
    forcing_1: Optional[Callable]
    forcing_2: Optional[Callable]
    horizon: float
    steps: int
    truncation_level: Optional[float] = None
    step_tol: float = DEFAULT_STEP_TOL

    first: Optional[Trajectory] = field(default=None, repr=False)
    second: Optional[Trajectory] = field(default=None, repr=False)
    lipschitz_bound: Optional[float] = None
    rows: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.initial_1.grid != self.initial_2.grid:
            raise ConfigurationError("initial data live on different grids")
        if not self.flux.homogeneous:
            raise ConfigurationError(
                "comparison needs a homogeneous flux law; spatial coefficients "
                "break the sign-pattern argument behind the L1 estimates")

    @property
    def paired(self) -> bool:
        return self.first is not None and self.second is not None


def run_pair(cr: ComparisonRun) -> ComparisonRun:
    """Run both members on the shared discretization and log distances.

    Returns the same object with ``first``, ``second``, ``lipschitz_bound``
    and ``rows`` populated.  Solve failures propagate.
    """
    level = cr.truncation_level
    if level is None:
        n1 = float(np.max(np.abs(cr.graph.value(cr.initial_1.values))))
        n2 = float(np.max(np.abs(cr.graph.value(cr.initial_2.values))))
        wider = cr.initial_1 if n1 >= n2 else cr.initial_2
        level = select_truncation_level(cr.source, cr.graph, wider)

    def member(initial, forcing):
        cfg = EvolutionConfig(cr.graph, cr.flux, cr.source, forcing, initial,
                              cr.horizon, cr.steps,
                              mode=MODE_INVERSE_LIPSCHITZ,
                              truncation_level=level, step_tol=cr.step_tol)
        return run_evolution(cfg)

    cr.first = member(cr.initial_1, cr.forcing_1)
    cr.second = member(cr.initial_2, cr.forcing_2)
    cr.lipschitz_bound = _realized_lipschitz(cr, level)
    cr.rows = _distance_rows(cr)
    return cr


def _ensure_pair(cr: ComparisonRun) -> None:
    if not cr.paired:
        run_pair(cr)


def _realized_lipschitz(cr: ComparisonRun, level: float) -> float:
    radius = 0.0
    for traj in (cr.first, cr.second):
        for state in traj.states:
            radius = max(radius, float(np.max(np.abs(state.beta.values))))
    if radius == 0.0 or cr.source.is_zero:
        return 0.0
    capped = cr.source.with_cap(level)
    return lipschitz_on_interval(capped, -radius, radius, truncated=True)


def _forcing_difference(cr: ComparisonRun, k: int) -> Optional[GridField]:
    f1 = cr.first.steps[k].forcing_avg if k < len(cr.first.steps) else None
    f2 = cr.second.steps[k].forcing_avg if k < len(cr.second.steps) else None
    if f1 is None and f2 is None:
        return None
    if f1 is None:
        return f2 * (-1.0)
    if f2 is None:
        return f1
    return f1 - f2


def _distance_rows(cr: ComparisonRun) -> tuple:
    tau = cr.horizon / cr.steps
    lip = cr.lipschitz_bound
    common = min(len(cr.first.states), len(cr.second.states))

    rows = []
    drive_abs = 0.0        # sum_k e^{-L k tau} tau ||f1^k - f2^k||_1
    drive_pos = 0.0
    d0 = pos0 = None
    for n in range(common):
        s1, s2 = cr.first.states[n], cr.second.states[n]
        diff = s1.beta - s2.beta
        l1 = norm(diff, "l1")
        pos = positive_part_integral(diff)
        violations = int(np.count_nonzero(diff.values > 0.0))
        if n == 0:
            d0, pos0 = l1, pos
        growth = math.exp(lip * n * tau)
        bound = growth * d0 + growth * drive_abs
        pbound = growth * pos0 + growth * drive_pos
        rows.append(DistanceRow(n, n * tau, l1, bound, bound - l1,
                                pos, pbound, violations))
        df = _forcing_difference(cr, n)
        if df is not None:
            decay = math.exp(-lip * n * tau)
            drive_abs += decay * tau * norm(df, "l1")
            drive_pos += decay * tau * positive_part_integral(df)
    return tuple(rows)


# -- certificates ---------------------------------------------------------------


def _envelope_check(name, rows, value, bound, absolute, relative):
    worst = math.inf
    worst_step = None
    for row in rows:
        tolerance = absolute + relative * bound(row)
        slack = bound(row) + tolerance - value(row)
        if slack < worst:
            worst, worst_step = slack, row.step
    passed = worst >= 0.0
    return CheckResult(name, passed, worst, worst_step)


def check_gronwall_l1(cr: ComparisonRun,
                      absolute: float = GRONWALL_ABSOLUTE,
                      relative: float = GRONWALL_RELATIVE) -> MonitorReport:
    """L1 distance against its Gronwall envelope at every shared step.

    The tolerance at each step is ``absolute + relative * bound``; the
    envelope is a statement about exact minimizers and the computed pair
    carries discretization and solver error.  Violations are reported with
    their slack, never raised.
    """
    _ensure_pair(cr)
    check = _envelope_check("gronwall-l1", cr.rows,
                            lambda r: r.l1, lambda r: r.bound,
                            absolute, relative)
    quantities = {
        "lipschitz-bound": cr.lipschitz_bound,
        "initial-l1": cr.rows[0].l1 if cr.rows else 0.0,
        "final-l1": cr.rows[-1].l1 if cr.rows else 0.0,
        "shared-steps": float(len(cr.rows)),
    }
    return MonitorReport("comparison-gronwall", (check,), quantities)


def check_positive_part(cr: ComparisonRun,
                        absolute: float = GRONWALL_ABSOLUTE,
                        relative: float = GRONWALL_RELATIVE) -> MonitorReport:
    """Positive-part envelope, plus nodewise ordering when the data admit it.

    Needs a source flagged monotone; the envelope splits the source
    difference through its positive part, which only stays one-sided for
    nondecreasing laws.  The ordering check runs when beta(initial_1) <=
    beta(initial_2) everywhere and every realized forcing difference is
    nonpositive, and then demands zero violating nodes.
    """
    if not cr.source.monotone:
        raise ConfigurationError(
            "positive-part comparison needs a monotone source law")
    _ensure_pair(cr)
    checks = [_envelope_check("positive-part", cr.rows,
                              lambda r: r.positive, lambda r: r.positive_bound,
                              absolute, relative)]
    quantities = {
        "lipschitz-bound": cr.lipschitz_bound,
        "initial-positive-part": cr.rows[0].positive if cr.rows else 0.0,
        "final-positive-part": cr.rows[-1].positive if cr.rows else 0.0,
    }

    if _ordering_applies(cr):
        worst = 0.0
        worst_step = None
        for row in cr.rows:
            if row.ordering_violations > 0 and -float(row.ordering_violations) < worst:
                worst = -float(row.ordering_violations)
                worst_step = row.step
        checks.append(CheckResult("ordering", worst >= 0.0, worst, worst_step))
        quantities["ordering-violations"] = -worst
    return MonitorReport("comparison-positive-part", tuple(checks), quantities)


def _ordering_applies(cr: ComparisonRun) -> bool:
    start = cr.first.states[0].beta - cr.second.states[0].beta
    if float(np.max(start.values)) > 0.0:
        return False
    common = min(len(cr.first.steps), len(cr.second.steps))
    for k in range(common):
        df = _forcing_difference(cr, k)
        if df is not None and float(np.max(df.values)) > 0.0:
            return False
    return True


def check_l1_contraction(cr: ComparisonRun) -> MonitorReport:
    """Per-step L1 contraction, exact up to solver slop.

    Applies when the source vanishes and both members saw identical forcing
    averages; then each step is a plain resolvent application and the L1
    distance of the transformed fields cannot grow.  The allowance per step
    is ``8 tau step_tol sqrt(|domain|)``: each member solves its step
    equation to a residual of ``step_tol`` in the volume-weighted L2 norm,
    which perturbs the effective right-hand side by that much.
    """
    if not cr.source.is_zero:
        raise ConfigurationError("exact contraction needs a vanishing source")
    _ensure_pair(cr)
    common = min(len(cr.first.steps), len(cr.second.steps))
    for k in range(common):
        df = _forcing_difference(cr, k)
        if df is not None and float(np.max(np.abs(df.values))) != 0.0:
            raise ConfigurationError(
                "exact contraction needs identical forcing averages")

    tau = cr.horizon / cr.steps
    volume = cr.initial_1.grid.volume
    allowance = 8.0 * tau * cr.step_tol * math.sqrt(volume)
    worst = math.inf
    worst_step = None
    for prev, nxt in zip(cr.rows, cr.rows[1:]):
        slack = prev.l1 + allowance - nxt.l1
        if slack < worst:
            worst, worst_step = slack, nxt.step
    if worst is math.inf:
        worst, worst_step = 0.0, None
    passed = worst >= 0.0
    check = CheckResult("l1-contraction", passed, worst, worst_step)
    return MonitorReport("comparison-contraction", (check,),
                         {"initial-l1": cr.rows[0].l1 if cr.rows else 0.0,
                          "final-l1": cr.rows[-1].l1 if cr.rows else 0.0})
