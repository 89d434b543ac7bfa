"""Refinement studies and scenario-driven monitor selection."""

import pytest

from dnflow.config import parse_scenario
from dnflow.evolution import (
    ConfigurationError,
    EvolutionError,
    run_evolution,
)
from dnflow.config import build_evolution
from dnflow.study import (
    StudyResult,
    analytic_heat_error,
    refinement_study,
    scenario_monitors,
)

HEAT = """\
[domain]
cells = 16

[time]
horizon = 0.05
steps = 10

[graph]
kind = identity

[flux]
kind = power
p = 2

[initial]
preset = eigenmode
"""


def scenario(text=HEAT, **sections):
    for name, body in sections.items():
        text += "\n[" + name + "]\n" + body + "\n"
    return parse_scenario(text)


def run(sc):
    return run_evolution(build_evolution(sc))


# -- monitor selection ---------------------------------------------------------

def test_scenario_monitor_toggles():
    sc = scenario()
    traj = run(sc)
    assert [r.monitor for r in scenario_monitors(sc, traj)] == [
        "sup-bound", "energy", "chain-rule", "dissipation"]
    off = scenario(monitors="enabled = false")
    assert scenario_monitors(off, traj) == []
    no_sup = scenario(monitors="sup = false")
    assert [r.monitor for r in scenario_monitors(no_sup, traj)] == [
        "energy", "chain-rule", "dissipation"]
    no_mode = scenario(monitors="mode = false")
    assert [r.monitor for r in scenario_monitors(no_mode, traj)] == [
        "sup-bound", "energy", "chain-rule"]


def test_scenario_monitor_tolerance_override():
    sc = scenario(monitors="sup-tolerance = 1e-3")
    traj = run(sc)
    reports = scenario_monitors(sc, traj)
    assert reports[0].monitor == "sup-bound"
    assert reports[0].passed


# -- analytic amplitude --------------------------------------------------------

def test_analytic_heat_error_defined_for_the_linear_case():
    sc = scenario()
    error = analytic_heat_error(sc, run(sc))
    assert error is not None
    assert error < 1e-12


def test_analytic_heat_error_none_outside_linear_case():
    cases = [
        scenario(HEAT.replace("kind = identity",
                              "kind = power\nexponent = 3")),
        scenario(HEAT.replace("p = 2", "p = 3")),
        scenario(HEAT.replace("preset = eigenmode",
                              "preset = bump\namplitude = 1")),
        scenario(source="kind = linear"),
        scenario(forcing="kind = separable"),
    ]
    for sc in cases:
        assert analytic_heat_error(sc, run(sc)) is None


# -- study validation ----------------------------------------------------------

def test_study_validation():
    sc = scenario()
    with pytest.raises(ConfigurationError):
        refinement_study(sc, 2)
    with pytest.raises(ConfigurationError):
        refinement_study(sc, 3, target="mesh")
    sampled = scenario(HEAT.replace(
        "preset = eigenmode",
        "preset = samples\nsamples = " + ", ".join(["0.1"] * 16)))
    with pytest.raises(ConfigurationError):
        refinement_study(sampled, 3, target="space")


# -- time refinement -----------------------------------------------------------

def test_time_study_on_the_linear_case():
    result = refinement_study(scenario(), 3, target="time")
    assert isinstance(result, StudyResult)
    assert result.completed
    assert result.target == "time"
    assert [row.level for row in result.rows] == [0, 1, 2]
    assert [row.termination for row in result.rows] == ["completed"] * 3
    taus = [row.tau for row in result.rows]
    assert taus[0] == pytest.approx(2 * taus[1]) \
        and taus[1] == pytest.approx(2 * taus[2])
    assert all(row.cells == (16,) for row in result.rows)
    assert all(row.checks_failed == 0 for row in result.rows)
    assert all(row.analytic_error < 1e-11 for row in result.rows)
    diffs = [row.difference for row in result.rows[:-1]]
    assert all(d > 0.0 for d in diffs)
    assert diffs[1] < diffs[0]
    assert len(result.orders) == 1
    assert 0.8 <= result.orders[0] <= 1.2
    assert result.rows[-1].difference is None
    assert result.rows[-1].order is None


def test_space_study_on_the_linear_case():
    sc = scenario(HEAT.replace("cells = 16", "cells = 8"))
    result = refinement_study(sc, 3, target="space")
    assert result.completed
    assert [row.cells for row in result.rows] == [(8,), (16,), (32,)]
    assert all(row.tau == result.rows[0].tau for row in result.rows)
    diffs = [row.difference for row in result.rows[:-1]]
    assert all(d > 0.0 for d in diffs)
    assert len(result.orders) == 1
    assert 0.7 <= result.orders[0] <= 1.3


def test_degenerate_study_reports_undefined_orders():
    sc = scenario(HEAT.replace("preset = eigenmode",
                               "preset = constant\nvalue = 0"))
    result = refinement_study(sc, 3)
    assert result.completed
    assert [row.termination for row in result.rows] == ["extinct"] * 3
    assert all(row.extinction_time == 0.0 for row in result.rows)
    assert all(row.difference == 0.0 for row in result.rows[:-1])
    assert all(row.order is None for row in result.rows)
    assert result.orders == ()


def test_saturating_study_records_the_clamp():
    sc = scenario(HEAT.replace("horizon = 0.05\nsteps = 10",
                               "horizon = 0.5\nsteps = 50"),
                  source="kind = quadratic\ncoefficient = 30")
    result = refinement_study(sc, 3)
    assert result.completed
    first = result.rows[0]
    assert first.termination == "truncation_saturated"
    assert first.termination_step == 6
    assert first.saturation_step == 6
    assert first.extinction_time is None
    assert first.validity_steps == 3
    assert all(row.termination == "truncation_saturated"
               for row in result.rows)


def test_extinction_study_on_the_singular_flux():
    sc = scenario("""\
[domain]
cells = 32

[time]
horizon = 0.004
steps = 40

[graph]
kind = power
exponent = 3

[flux]
kind = power
p = 1.5

[initial]
preset = eigenmode
amplitude = 0.05

[mode]
kind = lipschitz
""")
    result = refinement_study(sc, 3)
    assert result.completed
    assert all(row.termination == "extinct" for row in result.rows)
    times = [row.extinction_time for row in result.rows]
    assert all(t is not None and 0.0 < t < 0.004 for t in times)
    # the extinction time settles as the step size shrinks
    assert abs(times[2] - times[1]) <= abs(times[1] - times[0]) + 1e-12


def test_failed_level_ends_the_study(monkeypatch):
    calls = {"n": 0}
    real = run_evolution

    def flaky(cfg):
        calls["n"] += 1
        if calls["n"] >= 2:
            raise EvolutionError("step did not converge", None)
        return real(cfg)

    monkeypatch.setattr("dnflow.study.run_evolution", flaky)
    result = refinement_study(scenario(), 3)
    assert not result.completed
    assert "level 1" in result.failure
    assert "step did not converge" in result.failure
    assert len(result.rows) == 1
    assert result.rows[0].difference is None
