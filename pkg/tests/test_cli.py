"""Exit statuses, output resolution, and the printed verdicts."""

import pytest

from dnflow.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_SOLVER,
    EXIT_VIOLATION,
    OUTPUT_ROOT_VAR,
    main,
    resolve_output,
)
from dnflow.config import parse_scenario, preset_names
from dnflow.evolution import CheckResult, EvolutionError, MonitorReport

SCENARIO = """\
[domain]
cells = 12

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

[output]
directory = bundle
figures = false
"""

COMPARE = SCENARIO + """
[initial2]
preset = eigenmode
amplitude = 0.5
"""


@pytest.fixture
def rooted(tmp_path, monkeypatch):
    """A config file plus an output root, so nothing lands in the repo."""
    monkeypatch.setenv(OUTPUT_ROOT_VAR, str(tmp_path))

    def write(text, name="scenario.ini"):
        path = tmp_path / name
        path.write_text(text)
        return str(path)

    return tmp_path, write


def test_run_exit_ok(rooted, capsys):
    root, write = rooted
    assert main(["run", write(SCENARIO)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "verdict: pass" in out
    assert f"bundle: {root / 'bundle'}" in out
    assert (root / "bundle" / "report.txt").exists()
    assert (root / "bundle" / "series.csv").exists()
    assert not list((root / "bundle").glob("*.png"))


def test_output_override_beats_scenario(rooted, capsys):
    root, write = rooted
    target = root / "elsewhere"
    assert main(["run", write(SCENARIO), "--output", str(target)]) == EXIT_OK
    assert (target / "report.txt").exists()
    assert not (root / "bundle").exists()


def test_relative_override_resolves_against_root(rooted):
    root, write = rooted
    assert main(["run", write(SCENARIO), "--output", "named"]) == EXIT_OK
    assert (root / "named" / "report.txt").exists()


def test_no_env_root_means_cwd(tmp_path, monkeypatch):
    monkeypatch.delenv(OUTPUT_ROOT_VAR, raising=False)
    monkeypatch.chdir(tmp_path)
    cfg = tmp_path / "scenario.ini"
    cfg.write_text(SCENARIO)
    assert main(["run", str(cfg)]) == EXIT_OK
    assert (tmp_path / "bundle" / "report.txt").exists()
    from pathlib import Path
    assert resolve_output(parse_scenario(SCENARIO), None) == Path("bundle")


def test_no_figures_flag(rooted):
    root, write = rooted
    text = SCENARIO.replace("figures = false", "figures = true")
    assert main(["run", write(text), "--no-figures"]) == EXIT_OK
    assert (root / "bundle" / "report.txt").exists()
    assert not list((root / "bundle").glob("*.png"))


def test_compare_exit_ok(rooted, capsys):
    root, write = rooted
    assert main(["compare", write(COMPARE)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "gronwall-l1" in out
    assert "positive-part" in out
    assert "l1-contraction" in out
    assert "verdict: pass" in out
    assert (root / "bundle" / "comparison.csv").exists()
    assert (root / "bundle" / "series-2.csv").exists()


def test_run_verb_accepts_comparison_scenarios(rooted, capsys):
    root, write = rooted
    assert main(["run", write(COMPARE)]) == EXIT_OK
    assert (root / "bundle" / "comparison.csv").exists()


def test_compare_requires_second_member(rooted, capsys):
    root, write = rooted
    assert main(["compare", write(SCENARIO)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "configuration error" in err
    assert "second initial datum" in err


def test_missing_config_file(rooted, capsys):
    root, _ = rooted
    assert main(["run", str(root / "absent.ini")]) == EXIT_CONFIG
    assert "cannot read config" in capsys.readouterr().err


def test_malformed_config(rooted, capsys):
    root, write = rooted
    bad = SCENARIO.replace("p = 2", "p = 0.5")
    assert main(["run", write(bad)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "configuration error" in err
    assert "[flux] p" in err


def test_usage_errors_exit_2(capsys):
    assert main([]) == 2
    assert main(["frobnicate"]) == 2
    capsys.readouterr()


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    assert "run" in capsys.readouterr().out


def test_violation_exit(rooted, monkeypatch, capsys):
    root, write = rooted
    failing = MonitorReport("sup-bound", (
        CheckResult("sup-bound-step", False, -1e-3, 2),), {})
    monkeypatch.setattr("dnflow.cli.scenario_monitors",
                        lambda sc, traj: [failing])
    assert main(["run", write(SCENARIO)]) == EXIT_VIOLATION
    out = capsys.readouterr().out
    assert "verdict: FAIL (1 violated)" in out
    assert (root / "bundle" / "monitors.csv").exists()


def test_solver_failure_still_writes_partial_bundle(rooted, monkeypatch,
                                                    capsys):
    root, write = rooted
    from dnflow.config import build_evolution
    from dnflow.evolution import run_evolution as real_run
    partial = real_run(build_evolution(parse_scenario(SCENARIO)))

    def explode(cfg):
        raise EvolutionError("step 7: solve stalled", partial)

    monkeypatch.setattr("dnflow.cli.run_evolution", explode)
    assert main(["run", write(SCENARIO)]) == EXIT_SOLVER
    captured = capsys.readouterr()
    assert "solver failure: step 7: solve stalled" in captured.err
    assert (root / "bundle" / "report.txt").exists()
    assert (root / "bundle" / "series.csv").exists()


def test_study_verb(rooted, capsys):
    root, write = rooted
    assert main(["study", write(SCENARIO)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "refinement target: time" in out
    assert f"bundle: {root / 'bundle'}" in out
    assert (root / "bundle" / "study.csv").exists()


def test_study_level_validation(rooted, capsys):
    root, write = rooted
    assert main(["study", write(SCENARIO), "--levels", "2"]) == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err
    assert main(["study", write(SCENARIO), "--target", "depth"]) == 2
    capsys.readouterr()


def test_presets_list(capsys):
    assert main(["presets", "list"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == len(preset_names())
    width = max(len(n) for n in preset_names())
    for line, name in zip(lines, preset_names()):
        assert line.startswith(f"{name:<{width}}  ")
        assert len(line) > width + 2


def test_presets_show_round_trips(capsys):
    assert main(["presets", "show", "heat"]) == EXIT_OK
    text = capsys.readouterr().out
    sc = parse_scenario(text)
    assert sc.graph.kind == "identity"


def test_presets_show_diagnostics(capsys):
    assert main(["presets", "show"]) == EXIT_CONFIG
    assert "needs a preset name" in capsys.readouterr().err
    assert main(["presets", "show", "imaginary"]) == EXIT_CONFIG
    assert "unknown preset" in capsys.readouterr().err
