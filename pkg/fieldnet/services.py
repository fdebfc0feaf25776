"""Pipelines behind the command surface: extract, solve with either engine, compare, verify."""

import json
import logging
import pathlib

import numpy as np

from fieldnet.compare import ComparisonReport, compare
from fieldnet.config import Config
from fieldnet.ea import TreeCotree, chain_plan, extract_ea, gauge_residual, probe_name, spanning_tree
from fieldnet.eh import extract_eh
from fieldnet.et import element_census, extract_et
from fieldnet.exceptions import ConfigurationException, FieldnetException
from fieldnet.fit import em_leapfrog, em_sweep, et_transient, find_resonances, refine_axis
from fieldnet.materials import gauge_matrix
from fieldnet.mna import SimResult, simulate, write_csv
from fieldnet.netlist import Ac, Netlist, Tran
from fieldnet.problem import AcAnalysis, Physics, ProblemFile, TransientAnalysis

logger = logging.getLogger(__name__)


def resolve_formulation(problem: ProblemFile, formulation: str | None = None) -> Physics:
    """Physics of the circuit side; em problems may switch between eh and ea."""
    if formulation is None:
        return problem.physics
    if not problem.physics.electromagnetic:
        raise ConfigurationException(f"{problem.name} is an et problem; --formulation applies to em problems")
    chosen = Physics(f"em-{formulation}")
    if chosen == Physics.EA and problem.abc is not None:
        raise ConfigurationException("ABC terminations are stamped on E-H netlists only")
    return chosen


def _directives(problem: ProblemFile, netlist: Netlist) -> Netlist:
    analysis = problem.analysis
    match analysis:
        case TransientAnalysis():
            netlist.tran = Tran(analysis.tstep, analysis.tstop, tmax=analysis.tmax, uic=True)
            # backward Euler is the first-order gear method
            method = "gear" if analysis.method == "euler" else analysis.method
            netlist.options = {"method": method, "reltol": repr(analysis.reltol)}
        case AcAnalysis():
            netlist.ac = Ac(analysis.sweep, analysis.points, analysis.fstart, analysis.fstop)
    return netlist


def tree_cotree(problem: ProblemFile) -> TreeCotree:
    return spanning_tree(problem.topo, problem.pec)


def build_netlist(problem: ProblemFile, formulation: str | None = None) -> Netlist:
    physics = resolve_formulation(problem, formulation)
    match physics:
        case Physics.ET:
            netlist = extract_et(problem.topo, problem.mats, problem.et_bcs, problem.et_init)
        case Physics.EH:
            netlist = extract_eh(problem.topo, problem.mats, list(problem.sources), problem.pec, problem.abc)
        case Physics.EA:
            gauge = gauge_matrix(problem.topo, Config.FIELDNET_SIGMA_GAUGE)
            netlist = extract_ea(problem.topo, problem.mats, tree_cotree(problem), list(problem.sources), gauge)
    netlist.title = f"fieldnet {problem.name} ({physics})"
    return _directives(problem, netlist)


def flux_probes(problem: ProblemFile, tc: TreeCotree) -> dict[int, str]:
    """Branch current carrying the magnetic flux of every E-A edge stamp."""
    chains = chain_plan(problem.topo, tc)
    return {m: f"I({probe_name(chains, m)})" for m in chains}


def solve_mna(
    problem: ProblemFile,
    netlist: Netlist | None = None,
    formulation: str | None = None,
    workers: int | None = None,
    extra_probes: list[str] | None = None,
) -> SimResult:
    """Run the circuit engine and keep the raw probe traces the observables need."""
    netlist = netlist if netlist is not None else build_netlist(problem, formulation)
    probes = problem.probes() + list(extra_probes or [])
    result = simulate(netlist, probes=list(dict.fromkeys(probes)), workers=workers)
    logger.info(f"Circuit run for {problem.name}: {len(result.axis)} samples")
    return result


def fit_time_axis(problem: ProblemFile, circuit_axis: np.ndarray | None = None) -> np.ndarray:
    """Circuit time points with every interval refined, or a uniform axis without a circuit run."""
    analysis = problem.analysis
    if circuit_axis is None:
        return analysis.uniform_axis()
    return refine_axis(circuit_axis, analysis.refinement)


def solve_fit(problem: ProblemFile, circuit_axis: np.ndarray | None = None, workers: int | None = None) -> SimResult:
    analysis = problem.analysis
    if problem.physics == Physics.ET:
        times = fit_time_axis(problem, circuit_axis)
        return et_transient(problem.topo, problem.mats, problem.et_bcs, problem.et_init, times, problem.probes())
    edges = problem.probe_edges()
    sources = list(problem.sources)
    if isinstance(analysis, AcAnalysis):
        frequencies = Ac(analysis.sweep, analysis.points, analysis.fstart, analysis.fstop).frequencies()
        return em_sweep(problem.topo, problem.mats, sources, frequencies, edges, problem.pec, problem.abc, workers)
    return em_leapfrog(
        problem.topo, problem.mats, sources, analysis.tstop, analysis.dt, edges, problem.pec, problem.abc
    )


def comparison_pairs(problem: ProblemFile) -> dict[str, list[tuple[str, str]]]:
    return {group: [(o.name, o.name) for o in members] for group, members in problem.groups().items()}


def _peak(trace: np.ndarray) -> float:
    return float(np.nanmax(np.abs(trace)))


def check_expectations(
    problem: ProblemFile,
    circuit: SimResult,
    reference: SimResult,
    netlist: Netlist | None = None,
    raw: SimResult | None = None,
    tc: TreeCotree | None = None,
) -> dict[str, dict]:
    """Evaluate the fixture's `expect` records against observed traces."""
    checks: dict[str, dict] = {}
    expect = problem.expect
    if expect.get("census") and netlist is not None:
        expected = element_census(problem.topo, problem.mats, problem.et_bcs)
        checks["census"] = {"elements": len(netlist), "expected": expected, "passed": len(netlist) == expected}
    if "first_peak" in expect:
        spec = expect["first_peak"]
        peaks = find_resonances(circuit.axis, circuit[spec["observable"]])
        first = peaks[0] if peaks else None
        passed = first is not None and spec["lo"] <= first <= spec["hi"]
        checks["first_peak"] = {"frequency": first, "lo": spec["lo"], "hi": spec["hi"], "passed": passed}
    if "peak_ratio" in expect:
        spec = expect["peak_ratio"]
        ratios = {
            side: _peak(result[spec["numerator"]]) / _peak(result[spec["denominator"]])
            for side, result in (("circuit", circuit), ("reference", reference))
        }
        passed = all(abs(r - spec["value"]) <= spec["tol"] * spec["value"] for r in ratios.values())
        checks["peak_ratio"] = {**ratios, "expected": spec["value"], "passed": passed}
    if "abc_impedance" in expect and problem.abc is not None:
        spec = expect["abc_impedance"]
        worst = max(abs(z - spec["value"]) for z in problem.abc.impedance)
        checks["abc_impedance"] = {"max_deviation": worst, "tol": spec["tol"], "passed": worst <= spec["tol"]}
    if "gauge_residual" in expect and raw is not None and tc is not None:
        gauge = gauge_matrix(problem.topo, Config.FIELDNET_SIGMA_GAUGE)
        a = np.zeros((len(raw.axis), problem.topo.NE), dtype=complex)
        for m, probe in flux_probes(problem, tc).items():
            a[:, m] = raw[probe]
        residual = max(
            (gauge_residual(problem.topo, tc, gauge, row) for row in a if np.all(np.isfinite(row))), default=0.0
        )
        limit = float(expect["gauge_residual"])
        checks["gauge_residual"] = {"residual": residual, "limit": limit, "passed": residual < limit}
    return checks


def verify(
    problem: ProblemFile,
    outdir: pathlib.Path | None = None,
    formulation: str | None = None,
    tolerance: float | None = None,
    workers: int | None = None,
) -> ComparisonReport:
    """extract -> solve-mna -> solve-fit -> compare for one problem."""
    physics = resolve_formulation(problem, formulation)
    netlist = build_netlist(problem, formulation)
    tc = tree_cotree(problem) if physics == Physics.EA else None
    extra = list(flux_probes(problem, tc).values()) if tc is not None and "gauge_residual" in problem.expect else []
    raw = solve_mna(problem, netlist, workers=workers, extra_probes=extra)
    circuit = problem.observe(raw)
    reference = problem.observe(solve_fit(problem, raw.axis if problem.physics == Physics.ET else None, workers))
    report = compare(
        circuit,
        reference,
        comparison_pairs(problem),
        problem.tolerance.delta if tolerance is None else tolerance,
        problem.tolerance.peaks,
    )
    report.checks = check_expectations(problem, circuit, reference, netlist, raw, tc)
    if outdir is not None:
        outdir.mkdir(parents=True, exist_ok=True)
        write_csv(circuit, outdir / f"{problem.name}.mna.csv")
        write_csv(reference, outdir / f"{problem.name}.fit.csv")
    status = "passed" if report.passed else "FAILED"
    logger.info(f"Verification of {problem.name} {status}")
    return report


def failure_report(error: FieldnetException) -> dict:
    return {"ok": False, "error": type(error).__name__, "message": str(error)}


def write_report(report: dict, path: pathlib.Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, default=float)
