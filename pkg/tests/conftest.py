"""Shared fixtures: every shipped preset run once per session.

The preset trajectories back most of the inequality tests, so they are
computed once and handed around.  Comparison presets carry their pair.
"""

import pytest

from dnflow import config as cfg
from dnflow.comparison import run_pair
from dnflow.evolution import run_evolution
from dnflow.study import scenario_monitors


class PresetRun:
    def __init__(self, name):
        self.name = name
        self.scenario = cfg.parse_scenario(cfg.preset_text(name))
        if self.scenario.comparison_configured:
            self.pair = run_pair(cfg.build_comparison(self.scenario))
            self.trajectory = self.pair.first
        else:
            self.pair = None
            self.trajectory = run_evolution(cfg.build_evolution(self.scenario))
        self.reports = tuple(scenario_monitors(self.scenario, self.trajectory))

    @property
    def checks(self):
        return [c for r in self.reports for c in r.checks]


@pytest.fixture(scope="session")
def preset_runs():
    return {name: PresetRun(name) for name in cfg.preset_names()}
