import functools
import json
import logging
import multiprocessing
import pathlib
import sys

import click

from fieldnet.compare import compare
from fieldnet.config import Config
from fieldnet.exceptions import FieldnetException
from fieldnet.mna import read_csv, write_csv
from fieldnet.netlist import parse, serialize


@click.group()
@click.option("-d", "--debug", is_flag=True, default=False)
def cli(debug):
    """Circuit extraction and verification for FIT field problems."""
    logging.basicConfig(level=logging.DEBUG if debug else logging.INFO)


def default_workers() -> int:
    return (multiprocessing.cpu_count() * 2) + 1


def _workers(workers: int | None) -> int:
    if workers is not None:
        return workers
    return Config.FIELDNET_WORKERS or default_workers()


def reports_failures(func):
    """Turn library errors into a JSON failure report on stdout and exit code 1."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        from fieldnet.services import failure_report

        try:
            return func(*args, **kwargs)
        except FieldnetException as e:
            logging.getLogger(__name__).error(f"{type(e).__name__}: {e}")
            click.echo(json.dumps(failure_report(e)))
            sys.exit(1)

    return wrapper


problem_option = click.option("-p", "--problem", required=True, help="Problem file or bundled fixture name.")
out_option = click.option("-o", "--out", "outdir", default="out", type=pathlib.Path, show_default=True)
formulation_option = click.option("--formulation", type=click.Choice(["eh", "ea"]), default=None)
workers_option = click.option("-w", "--workers", default=None, type=int)


@cli.command("extract")
@problem_option
@out_option
@formulation_option
@reports_failures
def extract_command(problem, outdir, formulation):
    """Write the equivalent netlist of a problem."""
    from fieldnet.problem import parse_problem
    from fieldnet.services import build_netlist

    spec = parse_problem(problem)
    netlist = build_netlist(spec, formulation)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / f"{spec.name}.cir"
    path.write_text(serialize(netlist))
    click.echo(f"{path} ({len(netlist)} elements)")


@cli.command("solve-mna")
@click.option("-n", "--netlist", "netlist_path", required=True, type=pathlib.Path, help="SPICE netlist to simulate.")
@click.option("-p", "--problem", default=None, help="Problem whose observables select the output traces.")
@out_option
@workers_option
@reports_failures
def solve_mna_command(netlist_path, problem, outdir, workers):
    """Simulate a netlist with the built-in MNA engine."""
    from fieldnet.mna import simulate
    from fieldnet.problem import parse_problem

    netlist = parse(netlist_path.read_text())
    if problem is None:
        result = simulate(netlist, workers=_workers(workers))
        name = netlist_path.stem
    else:
        spec = parse_problem(problem)
        result = spec.observe(simulate(netlist, probes=spec.probes(), workers=_workers(workers)))
        name = spec.name
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / f"{name}.mna.csv"
    write_csv(result, path)
    click.echo(f"{path} ({len(result.axis)} samples, {len(result.traces)} traces)")


@cli.command("solve-fit")
@problem_option
@out_option
@click.option("--axis", "axis_path", default=None, type=pathlib.Path, help="Circuit CSV whose time axis is refined.")
@workers_option
@reports_failures
def solve_fit_command(problem, outdir, axis_path, workers):
    """Solve a problem with the FIT reference solver."""
    from fieldnet.problem import parse_problem
    from fieldnet.services import solve_fit

    spec = parse_problem(problem)
    circuit_axis = read_csv(axis_path).axis if axis_path is not None else None
    result = spec.observe(solve_fit(spec, circuit_axis, _workers(workers)))
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / f"{spec.name}.fit.csv"
    write_csv(result, path)
    click.echo(f"{path} ({len(result.axis)} samples)")


@cli.command("compare")
@problem_option
@out_option
@click.option("--circuit", "circuit_path", default=None, type=pathlib.Path)
@click.option("--reference", "reference_path", default=None, type=pathlib.Path)
@click.option("--tol", default=None, type=float, help="Relative tolerance for the grouped deviations.")
@reports_failures
def compare_command(problem, outdir, circuit_path, reference_path, tol):
    """Compare circuit and FIT traces of a problem."""
    from fieldnet.problem import AcAnalysis, parse_problem
    from fieldnet.services import comparison_pairs, write_report

    spec = parse_problem(problem)
    kind = "frequency" if isinstance(spec.analysis, AcAnalysis) else "time"
    circuit = read_csv(circuit_path or outdir / f"{spec.name}.mna.csv", kind)
    reference = read_csv(reference_path or outdir / f"{spec.name}.fit.csv", kind)
    report = compare(
        circuit,
        reference,
        comparison_pairs(spec),
        spec.tolerance.delta if tol is None else tol,
        spec.tolerance.peaks,
    )
    write_report(report.to_dict(), outdir / f"{spec.name}.report.json")
    click.echo(json.dumps(report.to_dict(), indent=2, default=float))
    sys.exit(0 if report.passed else 1)


@cli.command("verify")
@click.option("-p", "--problem", "problems", multiple=True, help="Problem files or fixture names; default all.")
@out_option
@formulation_option
@click.option("--tol", default=None, type=float)
@workers_option
@reports_failures
def verify_command(problems, outdir, formulation, tol, workers):
    """Extract, solve with both engines and compare."""
    from fieldnet.problem import fixture_names, parse_problem
    from fieldnet.services import failure_report, verify, write_report

    results = {}
    for name in problems or fixture_names():
        try:
            spec = parse_problem(name)
            results[spec.name] = verify(spec, outdir, formulation, tol, _workers(workers)).to_dict()
        except FieldnetException as e:
            logging.getLogger(__name__).error(f"{name}: {e}")
            results[pathlib.Path(name).stem] = failure_report(e)
    summary = {"ok": all(r["ok"] for r in results.values()), "problems": results}
    write_report(summary, outdir / "report.json")
    click.echo(json.dumps(summary, indent=2, default=float))
    sys.exit(0 if summary["ok"] else 1)


if __name__ == "__main__":
    cli()
