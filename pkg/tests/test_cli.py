import json

import pytest
from click.testing import CliRunner

from fieldnet import cli
from fieldnet.mna import read_csv
from fieldnet.netlist import parse


@pytest.fixture
def problem_path(tmp_path, bar_data):
    path = tmp_path / "bar.json"
    path.write_text(json.dumps(bar_data))
    return path


def _last_json(output: str) -> dict:
    return json.loads(output.strip().splitlines()[-1])


def test_extract_writes_a_netlist(problem_path, tmp_path) -> None:
    result = CliRunner().invoke(cli, ["extract", "-p", str(problem_path), "-o", str(tmp_path / "out")])
    assert result.exit_code == 0, result.output
    netlist = parse((tmp_path / "out" / "bar.cir").read_text())
    assert netlist.tran is not None
    assert f"({len(netlist)} elements)" in result.output


def test_extract_reports_problem_errors(tmp_path) -> None:
    path = tmp_path / "broken.json"
    path.write_text(json.dumps({"name": "broken", "physics": "et"}))
    result = CliRunner().invoke(cli, ["extract", "-p", str(path), "-o", str(tmp_path)])
    assert result.exit_code == 1
    report = _last_json(result.output)
    assert report["ok"] is False
    assert report["error"] == "ProblemException"
    assert "missing required key 'grid'" in report["message"]


def test_solve_mna_without_problem(tmp_path) -> None:
    path = tmp_path / "rc.cir"
    path.write_text("rc\nV1 in 0 DC 1\nR1 in out 1000\nC1 out 0 1e-06 ic=0\n.tran 1e-05 0.001 uic\n.end\n")
    result = CliRunner().invoke(cli, ["solve-mna", "-n", str(path), "-o", str(tmp_path), "-w", "1"])
    assert result.exit_code == 0, result.output
    traces = read_csv(tmp_path / "rc.mna.csv")
    assert traces.names == ["V(in)", "V(out)", "I(V1)"]


def test_verify_then_compare(problem_path, tmp_path) -> None:
    out = tmp_path / "out"
    runner = CliRunner()
    result = runner.invoke(cli, ["verify", "-p", str(problem_path), "-o", str(out), "-w", "1"])
    assert result.exit_code == 0, result.output
    summary = json.loads((out / "report.json").read_text())
    assert summary["ok"] is True
    assert summary["problems"]["bar"]["checks"]["census"]["passed"] is True

    result = runner.invoke(cli, ["compare", "-p", str(problem_path), "-o", str(out)])
    assert result.exit_code == 0, result.output
    report = json.loads((out / "bar.report.json").read_text())
    assert report["deltas"]["mid"]["passed"] is True


def test_verify_collects_failures(problem_path, tmp_path) -> None:
    missing = tmp_path / "missing.json"
    result = CliRunner().invoke(cli, ["verify", "-p", str(problem_path), "-p", str(missing), "-o", str(tmp_path)])
    assert result.exit_code == 1
    summary = json.loads((tmp_path / "report.json").read_text())
    assert summary["problems"]["bar"]["ok"] is True
    assert summary["problems"]["missing"]["error"] == "ProblemException"


def test_formulation_switch_is_rejected_for_et(problem_path, tmp_path) -> None:
    result = CliRunner().invoke(cli, ["extract", "-p", str(problem_path), "-o", str(tmp_path), "--formulation", "ea"])
    assert result.exit_code == 1
    assert _last_json(result.output)["error"] == "ConfigurationException"
