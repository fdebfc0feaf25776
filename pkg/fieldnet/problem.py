"""Problem files: JSON descriptions of a grid, its materials, boundaries, sources and observables.

All quantities are SI. Waveforms are tagged records, for example
{"type": "step_exp", "amplitude": 1000, "tau": 1.3e-6}.
"""

import enum
import json
import logging
import pathlib
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.constants

from fieldnet.absorbing import AbcSpec, build_abc
from fieldnet.config import Config
from fieldnet.eh import EdgeSource, te_loop
from fieldnet.et import DirichletRecord, EtBoundarySpec, EtInitial, ImpressedRecord, RobinRecord
from fieldnet.exceptions import FieldnetException, ProblemException
from fieldnet.grid import Axis, GridSpec, GridTopology, Plane, box_edges, build_topology, plane_edges, plane_points
from fieldnet.materials import NU_0, MaterialBox, Materials, assemble_materials
from fieldnet.mna import SimResult
from fieldnet.netlist import DC, PWL, Gaussian, Sine, StepExp, Waveform

logger = logging.getLogger(__name__)

_REQUIRED = object()


class Physics(enum.StrEnum):
    ET = "et"
    EH = "em-eh"
    EA = "em-ea"

    @property
    def electromagnetic(self) -> bool:
        return self != Physics.ET


@dataclass(frozen=True)
class TransientAnalysis:
    tstop: float
    tstep: float
    tmax: float | None = None
    reltol: float = 1e-3
    method: str = "euler"
    refinement: int = Config.FIELDNET_TIME_REFINEMENT
    # leapfrog step for electromagnetic reference runs; None means the CFL limit
    dt: float | None = None

    def uniform_axis(self) -> np.ndarray:
        """Reference time axis when no circuit run is available to refine."""
        step = self.tstep / self.refinement
        count = int(np.ceil(self.tstop / step - 1e-9))
        return np.linspace(0.0, count * step, count + 1)


@dataclass(frozen=True)
class AcAnalysis:
    sweep: str
    points: int
    fstart: float
    fstop: float


@dataclass(frozen=True)
class Observable:
    """A named signed sum of circuit probes; port voltages sum several edge voltages."""

    name: str
    group: str
    terms: tuple[tuple[str, float], ...]
    edges: tuple[int, ...] = ()

    @property
    def probes(self) -> list[str]:
        return [probe for probe, _ in self.terms]

    def evaluate(self, result: SimResult) -> np.ndarray:
        return sum(weight * result[probe] for probe, weight in self.terms)


@dataclass(frozen=True)
class Tolerance:
    delta: float = Config.FIELDNET_TOL
    peaks: float = 1e-3


@dataclass(frozen=True, eq=False)
class ProblemFile:
    name: str
    physics: Physics
    topo: GridTopology
    boxes: tuple[MaterialBox, ...]
    mats: Materials
    analysis: TransientAnalysis | AcAnalysis
    observables: tuple[Observable, ...]
    pec: frozenset[int] = frozenset()
    abc: AbcSpec | None = None
    et_bcs: EtBoundarySpec | None = None
    et_init: EtInitial | None = None
    sources: tuple[EdgeSource, ...] = ()
    tolerance: Tolerance = Tolerance()
    expect: dict[str, Any] = field(default_factory=dict)
    path: pathlib.Path | None = None

    @property
    def transient(self) -> bool:
        return isinstance(self.analysis, TransientAnalysis)

    def groups(self) -> dict[str, list[Observable]]:
        out: dict[str, list[Observable]] = {}
        for observable in self.observables:
            out.setdefault(observable.group, []).append(observable)
        return out

    def probes(self) -> list[str]:
        return list(dict.fromkeys(p for observable in self.observables for p in observable.probes))

    def probe_edges(self) -> list[int]:
        return list(dict.fromkeys(m for observable in self.observables for m in observable.edges))

    def observe(self, result: SimResult) -> SimResult:
        """Reduce a raw solver result to one trace per observable."""
        missing = [p for p in self.probes() if p not in result.traces]
        if missing:
            raise ProblemException(f"result has no trace {missing[0]}", "$.observe")
        traces = {observable.name: observable.evaluate(result) for observable in self.observables}
        return SimResult(axis=result.axis, traces=traces, kind=result.kind, stats=result.stats)


# Low-level readers


def _get(obj: dict, key: str, path: str, default=_REQUIRED):
    if not isinstance(obj, dict):
        raise ProblemException("expected an object", path)
    if key not in obj:
        if default is _REQUIRED:
            raise ProblemException(f"missing required key {key!r}", path)
        return default
    return obj[key]


def _number(value, path: str, *, positive: bool = False, minimum: float | None = None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ProblemException(f"expected a number, got {value!r}", path)
    value = float(value)
    if not np.isfinite(value):
        raise ProblemException("number must be finite", path)
    if positive and value <= 0:
        raise ProblemException(f"expected a positive number, got {value:g}", path)
    if minimum is not None and value < minimum:
        raise ProblemException(f"expected a number >= {minimum:g}, got {value:g}", path)
    return value


def _integer(value, path: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ProblemException(f"expected an integer >= {minimum}, got {value!r}", path)
    return value


def _list(value, path: str) -> list:
    if not isinstance(value, list):
        raise ProblemException("expected a list", path)
    return value


def _triple(value, path: str, kind=_number) -> tuple:
    items = _list(value, path)
    if len(items) != 3:
        raise ProblemException("expected three coordinates", path)
    return tuple(kind(v, f"{path}[{n}]") for n, v in enumerate(items))


def _wrap(path: str, func, *args):
    """Call into the library and re-raise its validation errors at a JSON path."""
    try:
        return func(*args)
    except ProblemException:
        raise
    except FieldnetException as e:
        raise ProblemException(str(e), path) from e


# Sections


def parse_waveform_record(value, path: str) -> Waveform:
    kind = _get(value, "type", path)
    try:
        match kind:
            case "dc":
                return DC(_number(_get(value, "value", path), f"{path}.value"))
            case "step_exp":
                return StepExp(
                    _number(_get(value, "amplitude", path), f"{path}.amplitude"),
                    _number(_get(value, "tau", path), f"{path}.tau", positive=True),
                )
            case "gauss":
                return Gaussian(
                    _number(_get(value, "amplitude", path), f"{path}.amplitude"),
                    _number(_get(value, "t0", path), f"{path}.t0"),
                    _number(_get(value, "sigma", path), f"{path}.sigma", positive=True),
                )
            case "sine":
                return Sine(
                    _number(_get(value, "amplitude", path), f"{path}.amplitude"),
                    _number(_get(value, "frequency", path), f"{path}.frequency"),
                )
            case "pwl":
                points = []
                for n, pair in enumerate(_list(_get(value, "points", path), f"{path}.points")):
                    where = f"{path}.points[{n}]"
                    if len(_list(pair, where)) != 2:
                        raise ProblemException("expected a [time, value] pair", where)
                    points.append((_number(pair[0], where), _number(pair[1], where)))
                return PWL(tuple(points))
    except ProblemException:
        raise
    except FieldnetException as e:
        raise ProblemException(str(e), path) from e
    raise ProblemException(f"unknown waveform type {kind!r}", f"{path}.type")


def _axis_widths(value, path: str) -> list[float]:
    """An axis is a list of cell widths, a {length, cells} segment or a list of segments."""
    if isinstance(value, dict):
        value = [value]
    widths: list[float] = []
    for n, item in enumerate(_list(value, path)):
        where = f"{path}[{n}]"
        if isinstance(item, dict):
            length = _number(_get(item, "length", where), f"{where}.length", positive=True)
            cells = _integer(_get(item, "cells", where), f"{where}.cells", minimum=1)
            widths += [length / cells] * cells
        else:
            widths.append(_number(item, where, positive=True))
    if not widths:
        raise ProblemException("axis needs at least one cell", path)
    return widths


def parse_grid(value, path: str = "$.grid") -> GridTopology:
    dx, dy, dz = (_axis_widths(_get(value, a, path), f"{path}.{a}") for a in "xyz")
    return _wrap(path, build_topology, GridSpec.from_widths(dx, dy, dz))


def parse_material(value, path: str) -> MaterialBox:
    def optional(key: str, **checks) -> float | None:
        raw = _get(value, key, path, None)
        return None if raw is None else _number(raw, f"{path}.{key}", **checks)

    return _wrap(
        path,
        MaterialBox,
        _triple(_get(value, "lo", path), f"{path}.lo"),
        _triple(_get(value, "hi", path), f"{path}.hi"),
        (optional("eps_r", positive=True) or 1.0) * scipy.constants.epsilon_0,
        optional("sigma", minimum=0.0) or 0.0,
        NU_0 / (optional("mu_r", positive=True) or 1.0),
        optional("lambda", minimum=0.0),
        optional("rhoc", positive=True),
        optional("alpha") or 0.0,
        optional("t0", positive=True) or 293.0,
        str(_get(value, "name", path, "")),
    )


def _point(topo: GridTopology, value, path: str) -> tuple[int, int, int]:
    i, j, k = _triple(value, path, _integer)
    if i > topo.shape[0] or j > topo.shape[1] or k > topo.shape[2]:
        raise ProblemException(f"point ({i},{j},{k}) outside the grid", path)
    return i, j, k


def _edge(topo: GridTopology, value, path: str) -> int:
    axis = _wrap(f"{path}.axis", Axis.parse, _get(value, "axis", path))
    m = _wrap(path, topo.edge, axis, *_point(topo, _get(value, "at", path), f"{path}.at"))
    if not topo.edge_real[m]:
        raise ProblemException(f"edge {m} leaves the grid", path)
    return m


def _plane(topo: GridTopology, value, path: str) -> Plane:
    if not isinstance(value, str):
        raise ProblemException("expected a face such as 'xmin' or 'z=3'", path)
    return _wrap(path, Plane.parse, topo, value)


def _path_edges(topo: GridTopology, value, path: str) -> list[tuple[int, float]]:
    """Edges and orientations along a point path; consecutive points are grid neighbours."""
    points = [_point(topo, p, f"{path}[{n}]") for n, p in enumerate(_list(value, path))]
    if len(points) < 2:
        raise ProblemException("a path needs at least two points", path)
    out = []
    for n, (a, b) in enumerate(zip(points, points[1:])):
        step = np.subtract(b, a)
        if np.count_nonzero(step) != 1 or np.abs(step).sum() != 1:
            raise ProblemException(f"points {a} and {b} are not grid neighbours", f"{path}[{n + 1}]")
        axis = int(np.flatnonzero(step)[0])
        out.append((topo.edge(Axis(axis), *np.minimum(a, b)), float(step[axis])))
    return out


def parse_pec(topo: GridTopology, value, path: str = "$.boundary.pec") -> frozenset[int]:
    edges: set[int] = set()
    for n, face in enumerate(_list(_get(value, "faces", path, []), f"{path}.faces")):
        edges |= set(plane_edges(topo, _plane(topo, face, f"{path}.faces[{n}]")).tolist())
    for n, box in enumerate(_list(_get(value, "boxes", path, []), f"{path}.boxes")):
        where = f"{path}.boxes[{n}]"
        lo = _triple(_get(box, "lo", where), f"{where}.lo")
        hi = _triple(_get(box, "hi", where), f"{where}.hi")
        edges |= set(box_edges(topo, lo, hi).tolist())
    return frozenset(edges)


def _dirichlet(topo: GridTopology, value, path: str) -> DirichletRecord:
    waveform = parse_waveform_record(_get(value, "waveform", path), f"{path}.waveform")
    if "face" in value:
        nodes = plane_points(topo, _plane(topo, value["face"], f"{path}.face"))
    else:
        raw = _list(_get(value, "nodes", path), f"{path}.nodes")
        nodes = [topo.point(*_point(topo, p, f"{path}.nodes[{n}]")) for n, p in enumerate(raw)]
    return DirichletRecord(tuple(int(i) for i in nodes), waveform)


def _robin(topo: GridTopology, value, path: str) -> RobinRecord:
    return _wrap(
        path,
        RobinRecord,
        _plane(topo, _get(value, "face", path), f"{path}.face"),
        _number(_get(value, "h", path), f"{path}.h", minimum=0.0),
        _number(_get(value, "ambient", path), f"{path}.ambient", positive=True),
    )


def _source_edges(topo: GridTopology, value, path: str) -> list[tuple[int, float]]:
    if "loop" in value:
        i, j, k = _point(topo, _get(value["loop"], "at", f"{path}.loop"), f"{path}.loop.at")
        loop = _wrap(f"{path}.loop", te_loop, topo, i, j, k, DC(1.0))
        return [(source.edge, source.ac) for source in loop]
    out = []
    for n, item in enumerate(_list(_get(value, "edges", path), f"{path}.edges")):
        sign = _number(_get(item, "sign", f"{path}.edges[{n}]", 1.0), f"{path}.edges[{n}].sign")
        out.append((_edge(topo, item, f"{path}.edges[{n}]"), sign))
    return out


def parse_sources(topo: GridTopology, value, path: str = "$.sources"):
    """Split source records into edge currents and, for electrothermal problems, heat flows."""
    currents: list[EdgeSource] = []
    heat: list[ImpressedRecord] = []
    for n, item in enumerate(_list(value, path)):
        where = f"{path}[{n}]"
        waveform = parse_waveform_record(_get(item, "waveform", where, {"type": "dc", "value": 0}), f"{where}.waveform")
        ac = _get(item, "ac", where, None)
        ac = None if ac is None else _number(ac, f"{where}.ac")
        kind = _get(item, "kind", where, "current")
        if kind not in ("current", "heat"):
            raise ProblemException(f"unknown source kind {kind!r}", f"{where}.kind")
        for m, sign in _source_edges(topo, item, where):
            if kind == "heat":
                heat.append(ImpressedRecord(m, waveform.scaled(sign)))
            else:
                currents.append(EdgeSource(m, waveform.scaled(sign), None if ac is None else ac * sign))
    return currents, heat


def parse_analysis(value, path: str = "$.analysis") -> TransientAnalysis | AcAnalysis:
    kind = _get(value, "type", path)
    match kind:
        case "transient":
            tmax = _get(value, "tmax", path, None)
            dt = _get(value, "dt", path, None)
            method = _get(value, "method", path, "euler")
            if method not in ("euler", "trap"):
                raise ProblemException(f"unknown integration method {method!r}", f"{path}.method")
            return TransientAnalysis(
                tstop=_number(_get(value, "tstop", path), f"{path}.tstop", positive=True),
                tstep=_number(_get(value, "tstep", path), f"{path}.tstep", positive=True),
                tmax=None if tmax is None else _number(tmax, f"{path}.tmax", positive=True),
                reltol=_number(_get(value, "reltol", path, 1e-3), f"{path}.reltol", positive=True),
                method=method,
                refinement=_integer(
                    _get(value, "refinement", path, Config.FIELDNET_TIME_REFINEMENT), f"{path}.refinement", 1
                ),
                dt=None if dt is None else _number(dt, f"{path}.dt", positive=True),
            )
        case "ac":
            sweep = _get(value, "sweep", path, "lin")
            if sweep not in ("lin", "dec"):
                raise ProblemException(f"unknown sweep {sweep!r}", f"{path}.sweep")
            fstart = _number(_get(value, "fstart", path), f"{path}.fstart", positive=True)
            fstop = _number(_get(value, "fstop", path), f"{path}.fstop", positive=True)
            if fstop < fstart:
                raise ProblemException("fstop below fstart", f"{path}.fstop")
            return AcAnalysis(sweep, _integer(_get(value, "points", path), f"{path}.points", 1), fstart, fstop)
    raise ProblemException(f"unknown analysis type {kind!r}", f"{path}.type")


def parse_observables(topo: GridTopology, physics: Physics, thermal: bool, value, path: str = "$.observe"):
    out: list[Observable] = []
    for n, item in enumerate(_list(value, path)):
        where = f"{path}[{n}]"
        name = str(_get(item, "name", where))
        group = str(_get(item, "group", where, name))
        kind = _get(item, "kind", where)
        match kind:
            case "potential" | "temperature":
                if physics.electromagnetic:
                    raise ProblemException(f"{kind} observables need et physics", f"{where}.kind")
                if kind == "temperature" and not thermal:
                    raise ProblemException("no thermal material data to observe", f"{where}.kind")
                suffix = "T" if kind == "temperature" else ""
                if _get(item, "all", where, False):
                    out += [
                        Observable(f"V(n{i}{suffix})", group, ((f"V(n{i}{suffix})", 1.0),)) for i in range(topo.NP)
                    ]
                else:
                    i = topo.point(*_point(topo, _get(item, "at", where), f"{where}.at"))
                    out.append(Observable(name, group, ((f"V(n{i}{suffix})", 1.0),)))
            case "edge":
                if not physics.electromagnetic:
                    raise ProblemException("edge observables need em physics", f"{where}.kind")
                m = _edge(topo, _get(item, "edge", where), f"{where}.edge")
                out.append(Observable(name, group, ((f"V(n{m})", 1.0),), (m,)))
            case "port":
                if not physics.electromagnetic:
                    raise ProblemException("port observables need em physics", f"{where}.kind")
                edges = _path_edges(topo, _get(item, "path", where), f"{where}.path")
                terms = tuple((f"V(n{m})", sign) for m, sign in edges)
                out.append(Observable(name, group, terms, tuple(m for m, _ in edges)))
            case _:
                raise ProblemException(f"unknown observable kind {kind!r}", f"{where}.kind")
    names = [o.name for o in out]
    if len(set(names)) != len(names):
        raise ProblemException("observable names must be unique", path)
    if not out:
        raise ProblemException("at least one observable is required", path)
    return tuple(out)


def _drop_pec_terms(pec: frozenset[int], observables: tuple[Observable, ...]) -> tuple[Observable, ...]:
    """PEC edges carry no voltage and have no circuit node; port sums skip them."""
    out = []
    for n, observable in enumerate(observables):
        kept = [(term, m) for term, m in zip(observable.terms, observable.edges) if m not in pec]
        if not kept:
            raise ProblemException(f"observable {observable.name} lies on PEC edges only", f"$.observe[{n}]")
        terms, edges = zip(*kept)
        out.append(Observable(observable.name, observable.group, tuple(terms), tuple(edges)))
    return tuple(out)


def problem_from_dict(data, path: pathlib.Path | None = None) -> ProblemFile:
    if not isinstance(data, dict) or not data:
        raise ProblemException("problem must be a non-empty object")
    name = str(_get(data, "name", "$", path.stem if path else "problem"))
    try:
        physics = Physics(_get(data, "physics", "$"))
    except ValueError as e:
        raise ProblemException(f"physics must be one of {[p.value for p in Physics]}", "$.physics") from e
    topo = parse_grid(_get(data, "grid", "$"))
    boxes = tuple(
        parse_material(box, f"$.materials[{n}]")
        for n, box in enumerate(_list(_get(data, "materials", "$"), "$.materials"))
    )
    mats = _wrap("$.materials", assemble_materials, topo, list(boxes))
    boundary = _get(data, "boundary", "$", {})
    currents, heat = parse_sources(topo, _get(data, "sources", "$", []))
    analysis = parse_analysis(_get(data, "analysis", "$"))
    observables = parse_observables(topo, physics, mats.thermal, _get(data, "observe", "$"))
    tolerance = _get(data, "tolerance", "$", {})
    tolerance = Tolerance(
        delta=_number(_get(tolerance, "delta", "$.tolerance", Config.FIELDNET_TOL), "$.tolerance.delta", positive=True),
        peaks=_number(_get(tolerance, "peaks", "$.tolerance", 1e-3), "$.tolerance.peaks", positive=True),
    )
    expect = _get(data, "expect", "$", {})
    if not isinstance(expect, dict):
        raise ProblemException("expected an object", "$.expect")
    common = dict(
        name=name,
        physics=physics,
        topo=topo,
        boxes=boxes,
        mats=mats,
        analysis=analysis,
        observables=observables,
        tolerance=tolerance,
        expect=expect,
        path=path,
    )

    if physics == Physics.ET:
        for key in ("pec", "abc"):
            if key in boundary:
                raise ProblemException(f"{key} boundaries need em physics", f"$.boundary.{key}")
        if not isinstance(analysis, TransientAnalysis):
            raise ProblemException("et problems need a transient analysis", "$.analysis.type")
        electric = tuple(
            _dirichlet(topo, r, f"$.boundary.electric_dirichlet[{n}]")
            for n, r in enumerate(_list(_get(boundary, "electric_dirichlet", "$.boundary", []), "$.boundary"))
        )
        thermal = tuple(
            _dirichlet(topo, r, f"$.boundary.thermal_dirichlet[{n}]")
            for n, r in enumerate(_list(_get(boundary, "thermal_dirichlet", "$.boundary", []), "$.boundary"))
        )
        robin = tuple(
            _robin(topo, r, f"$.boundary.robin[{n}]")
            for n, r in enumerate(_list(_get(boundary, "robin", "$.boundary", []), "$.boundary"))
        )
        if (thermal or robin or heat) and not mats.thermal:
            raise ProblemException("thermal boundaries or heat sources need lambda and rhoc", "$.boundary")
        bcs = EtBoundarySpec(
            electric,
            thermal,
            robin,
            tuple(ImpressedRecord(s.edge, s.waveform) for s in currents),
            tuple(heat),
        )
        _wrap("$.boundary", bcs.validate, topo)
        initial = _get(data, "initial", "$", {})
        init = EtInitial(
            temperature=_number(
                _get(initial, "temperature", "$.initial", 293.0), "$.initial.temperature", positive=True
            ),
            potential=_number(_get(initial, "potential", "$.initial", 0.0), "$.initial.potential"),
        )
        problem = ProblemFile(**common, et_bcs=bcs, et_init=init)
    else:
        if heat:
            raise ProblemException("heat sources need et physics", "$.sources")
        for key in ("electric_dirichlet", "thermal_dirichlet", "robin"):
            if key in boundary:
                raise ProblemException(f"{key} boundaries need et physics", f"$.boundary.{key}")
        pec = parse_pec(topo, _get(boundary, "pec", "$.boundary", {}))
        for source in currents:
            if source.edge in pec:
                raise ProblemException(f"source on PEC edge {source.edge}", "$.sources")
        observables = _drop_pec_terms(pec, observables)
        common["observables"] = observables
        faces = _list(_get(boundary, "abc", "$.boundary", []), "$.boundary.abc")
        if len(faces) > 1:
            raise ProblemException("at most one ABC face is supported", "$.boundary.abc")
        abc = None
        if faces and physics == Physics.EA:
            raise ProblemException("ABC terminations need the em-eh formulation", "$.boundary.abc")
        if faces:
            plane = _plane(topo, faces[0], "$.boundary.abc[0]")
            abc = _wrap("$.boundary.abc[0]", build_abc, topo, mats, plane, pec)
        problem = ProblemFile(**common, pec=pec, abc=abc, sources=tuple(currents))

    logger.info(
        f"Problem {name}: {physics} on {topo.shape[0]}x{topo.shape[1]}x{topo.shape[2]} cells, "
        f"{len(observables)} observables"
    )
    return problem


def fixture_path(name: str) -> pathlib.Path:
    path = Config.FIELDNET_FIXTURES / f"{name}.json"
    if not path.exists():
        raise ProblemException(f"no bundled fixture named {name!r}")
    return path


def fixture_names() -> list[str]:
    return sorted(p.stem for p in Config.FIELDNET_FIXTURES.glob("*.json"))


def parse_problem(path: pathlib.Path | str) -> ProblemFile:
    """Load a problem file; a bare name refers to a bundled fixture."""
    path = pathlib.Path(path)
    if not path.exists() and path.suffix == "" and len(path.parts) == 1:
        path = fixture_path(path.name)
    try:
        text = path.read_text()
    except OSError as e:
        raise ProblemException(f"cannot read {path}: {e}") from e
    if not text.strip():
        raise ProblemException(f"{path} is empty")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ProblemException(f"invalid JSON at line {e.lineno}: {e.msg}") from e
    return problem_from_dict(data, path)
