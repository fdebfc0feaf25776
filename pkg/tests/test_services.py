import json

import numpy as np
import pytest

from fieldnet.exceptions import ConfigurationException, ProblemException
from fieldnet.grid import Axis
from fieldnet.mna import SimResult, read_csv
from fieldnet.netlist import Tran
from fieldnet.problem import Physics, fixture_path, problem_from_dict
from fieldnet.services import (
    build_netlist,
    check_expectations,
    failure_report,
    flux_probes,
    resolve_formulation,
    solve_fit,
    tree_cotree,
    verify,
    write_report,
)


def _cavity(**extra) -> dict:
    data = {
        "name": "box",
        "physics": "em-eh",
        "grid": {a: {"length": 0.3, "cells": 3} for a in "xyz"},
        "materials": [{"lo": [0, 0, 0], "hi": [0.3, 0.3, 0.3]}],
        "boundary": {"pec": {"faces": ["xmin", "xmax", "ymin", "ymax", "zmin", "zmax"]}},
        "sources": [{"edges": [{"axis": "z", "at": [1, 1, 1]}], "ac": 1}],
        "analysis": {"type": "ac", "sweep": "lin", "points": 5, "fstart": 1e8, "fstop": 5e8},
        "observe": [
            {"name": "e", "kind": "edge", "edge": {"axis": "z", "at": [1, 1, 1]}},
            {"name": "f", "kind": "edge", "edge": {"axis": "z", "at": [2, 1, 1]}},
        ],
    }
    data.update(extra)
    return data


def test_resolve_formulation(bar_data) -> None:
    bar = problem_from_dict(bar_data)
    assert resolve_formulation(bar) == Physics.ET
    with pytest.raises(ConfigurationException, match="et problem"):
        resolve_formulation(bar, "eh")
    cavity = problem_from_dict(_cavity())
    assert resolve_formulation(cavity, "ea") == Physics.EA
    open_top = _cavity()
    open_top["boundary"] = {"pec": {"faces": ["xmin", "xmax", "ymin", "ymax", "zmin"]}, "abc": ["zmax"]}
    with pytest.raises(ConfigurationException, match="ABC"):
        resolve_formulation(problem_from_dict(open_top), "ea")


def test_build_netlist_carries_the_analysis(bar_data) -> None:
    netlist = build_netlist(problem_from_dict(bar_data))
    assert netlist.title == "fieldnet bar (et)"
    assert netlist.tran == Tran(1e-11, 1e-9, uic=True)
    assert netlist.options == {"method": "gear", "reltol": "0.001"}

    cavity = problem_from_dict(_cavity())
    ea = build_netlist(cavity, "ea")
    assert ea.title == "fieldnet box (em-ea)"
    assert ea.ac is not None and len(ea.ac.frequencies()) == 5
    assert "FIsum" in "".join(e.name for e in ea)


def test_flux_probes_name_chain_currents() -> None:
    cavity = problem_from_dict(_cavity())
    tc = tree_cotree(cavity)
    probes = flux_probes(cavity, tc)
    assert len(probes) == tc.n_tree + tc.n_cotree
    m = cavity.topo.edge(Axis.X, 1, 1, 1)
    assert probes[m].startswith(("I(EVe", "I(BVc", "I(BVt"))
    assert probes[m].endswith(f"{m}_1)")


def test_verify_electrothermal_bar(bar_data, tmp_path) -> None:
    report = verify(problem_from_dict(bar_data), tmp_path)
    assert report.passed
    assert report.deltas["mid"].delta < 1e-3
    assert report.checks["census"]["passed"]
    circuit = read_csv(tmp_path / "bar.mna.csv")
    reference = read_csv(tmp_path / "bar.fit.csv")
    assert circuit.names == reference.names == ["mid"]
    assert len(reference.axis) == 3 * (len(circuit.axis) - 1) + 1
    np.testing.assert_allclose(reference["mid"][-1], 0.5 * (1 - np.exp(-5)), rtol=1e-9)


def test_verify_cavity_formulations_agree() -> None:
    cavity = problem_from_dict(_cavity())
    eh = verify(cavity)
    ea = verify(cavity, formulation="ea")
    for report in (eh, ea):
        assert report.kind == "frequency"
        assert report.deltas["e"].delta < 1e-6


def test_verify_short_matched_line() -> None:
    data = json.loads(fixture_path("coax_matched").read_text())
    data["name"] = "short_line"
    data["grid"]["z"] = {"length": 0.3, "cells": 30}
    data["materials"][0]["hi"][2] = 0.3
    data["boundary"]["pec"]["boxes"][0]["hi"][2] = 0.3
    data["analysis"]["tstop"] = 5e-9
    data["observe"] = [
        {"name": "V2", "kind": "port", "path": [[0, 1, 30], [1, 1, 30]]},
        {"name": "Vmid", "kind": "port", "path": [[0, 1, 15], [1, 1, 15]]},
    ]
    data["tolerance"] = {"delta": 0.05}
    problem = problem_from_dict(data)
    reference = problem.observe(solve_fit(problem))
    assert np.all(np.isfinite(reference["V2"]))
    assert np.max(np.abs(reference["V2"])) < 1.1 * np.max(np.abs(reference["Vmid"]))
    report = verify(problem)
    assert report.deltas["V2"].delta < 0.05
    assert report.deltas["Vmid"].delta < 0.05
    assert report.passed


def test_check_expectations() -> None:
    open_top = _cavity(expect={
        "abc_impedance": {"value": 376.73, "tol": 1.0},
        "peak_ratio": {"numerator": "e", "denominator": "f", "value": 2.0, "tol": 0.01},
        "first_peak": {"observable": "e", "lo": 4.9, "hi": 5.1},
    })
    open_top["boundary"] = {"pec": {"faces": ["xmin", "xmax", "ymin", "ymax", "zmin"]}, "abc": ["zmax"]}
    problem = problem_from_dict(open_top)
    f = np.linspace(4.0, 6.0, 201)
    peak = 1 / (1 + 1j * (f - 5.0) / 0.05)
    circuit = SimResult(axis=f, traces={"e": 2 * peak, "f": peak}, kind="frequency")
    checks = check_expectations(problem, circuit, circuit)
    assert checks["abc_impedance"]["passed"]
    assert checks["peak_ratio"]["circuit"] == pytest.approx(2.0)
    assert checks["first_peak"]["frequency"] == pytest.approx(5.0)
    assert all(check["passed"] for check in checks.values())


def test_failure_reports(tmp_path) -> None:
    report = failure_report(ProblemException("bad grid", "$.grid"))
    assert report == {"ok": False, "error": "ProblemException", "message": "$.grid: bad grid"}
    path = tmp_path / "nested" / "report.json"
    write_report({"ok": True, "delta": np.float64(0.5)}, path)
    assert json.loads(path.read_text()) == {"ok": True, "delta": 0.5}
