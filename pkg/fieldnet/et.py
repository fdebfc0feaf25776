"""Electrothermal netlist extraction.

Every primal edge carries an electric branch (behavioural conductance plus capacitor)
and a thermal conductor; every primal point carries a thermal capacitor to ground
and a Joule-loss source fed by the electric branches around it.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from fieldnet.exceptions import InvalidSpecException
from fieldnet.grid import GridTopology, Plane, boundary_dual_area, edge_endpoints
from fieldnet.materials import Materials, conductance_terms
from fieldnet.netlist import (
    DC,
    BehaviouralI,
    Capacitor,
    Const,
    Expr,
    ISource,
    Netlist,
    NodeKind,
    Resistor,
    Voltage,
    VSource,
    Waveform,
    node_name,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DirichletRecord:
    nodes: tuple[int, ...]
    waveform: Waveform


@dataclass(frozen=True)
class RobinRecord:
    plane: Plane
    h: float
    ambient: float

    def __post_init__(self):
        if self.h < 0 or self.ambient <= 0:
            raise InvalidSpecException(f"Robin face {self.plane.name}: need h >= 0 and ambient > 0 K")


@dataclass(frozen=True)
class ImpressedRecord:
    """Impressed current (A) or heat flow (W) through the dual facet of one edge."""

    edge: int
    waveform: Waveform


@dataclass(frozen=True)
class EtBoundarySpec:
    electric_dirichlet: tuple[DirichletRecord, ...] = ()
    thermal_dirichlet: tuple[DirichletRecord, ...] = ()
    robin: tuple[RobinRecord, ...] = ()
    currents: tuple[ImpressedRecord, ...] = ()
    heat: tuple[ImpressedRecord, ...] = ()

    def electric_nodes(self) -> dict[int, Waveform]:
        return {i: record.waveform for record in self.electric_dirichlet for i in record.nodes}

    def thermal_nodes(self) -> dict[int, Waveform]:
        return {i: record.waveform for record in self.thermal_dirichlet for i in record.nodes}

    def robin_areas(self, topo: GridTopology) -> list[tuple[RobinRecord, np.ndarray, np.ndarray]]:
        return [(record, *boundary_dual_area(topo, record.plane)) for record in self.robin]

    def validate(self, topo: GridTopology) -> None:
        for records in (self.electric_dirichlet, self.thermal_dirichlet):
            seen: set[int] = set()
            for record in records:
                bad = [i for i in record.nodes if not 0 <= i < topo.NP]
                if bad:
                    raise InvalidSpecException(f"Dirichlet node {bad[0]} outside the grid")
                if seen & set(record.nodes):
                    raise InvalidSpecException(f"node {min(seen & set(record.nodes))} has two Dirichlet values")
                seen |= set(record.nodes)
        thermal = set(self.thermal_nodes())
        for record, points, _ in self.robin_areas(topo):
            clash = thermal & set(points.tolist())
            if clash and record.h > 0:
                raise InvalidSpecException(f"node {min(clash)} is both thermal Dirichlet and Robin")
        ambients = {record.ambient for record in self.robin if record.h > 0}
        if len(ambients) > 1:
            raise InvalidSpecException("all Robin faces must share one ambient temperature")
        for record in (*self.currents, *self.heat):
            if not (0 <= record.edge < topo.NE and topo.edge_real[record.edge]):
                raise InvalidSpecException(f"impressed source on phantom edge {record.edge}")


@dataclass(frozen=True)
class EtInitial:
    temperature: float | np.ndarray = 293.0
    potential: float | np.ndarray = 0.0

    def temperatures(self, topo: GridTopology) -> np.ndarray:
        return self._expand(topo, self.temperature, "temperature")

    def potentials(self, topo: GridTopology) -> np.ndarray:
        return self._expand(topo, self.potential, "potential")

    @staticmethod
    def _expand(topo: GridTopology, value, label: str) -> np.ndarray:
        values = np.broadcast_to(np.asarray(value, dtype=float), (topo.NP,)).copy()
        if not np.all(np.isfinite(values)):
            raise InvalidSpecException(f"initial {label} must be finite")
        return values


def mean_temperature(i: int, j: int) -> Expr:
    return (Voltage(node_name(NodeKind.THERMAL, i)) + Voltage(node_name(NodeKind.THERMAL, j))) / Const(2.0)


def branch_conductance(terms: list[tuple[float, float, float]], i: int, j: int) -> Expr:
    """Edge conductance as a function of the mean temperature of its end nodes.

    terms are (G0, alpha, T0) triples from conductance_terms; constant parts are merged.
    """
    constant = sum(g0 for g0, alpha, _ in terms if alpha == 0)
    expr: Expr | None = Const(constant) if constant or not terms else None
    for g0, alpha, t0 in terms:
        if alpha == 0:
            continue
        term = Const(g0) / (Const(1.0) + Const(alpha) * (mean_temperature(i, j) - Const(t0)))
        expr = term if expr is None else expr + term
    return expr if expr is not None else Const(0.0)


def _edge_voltage(i: int, j: int) -> Voltage:
    return Voltage(node_name(NodeKind.ELECTRIC, i), node_name(NodeKind.ELECTRIC, j))


def joule_source(edges: list[tuple[int, int, Expr]]) -> Expr:
    """Half of the power of every incident branch: sum of 0.5 G(T) V^2."""
    expr: Expr | None = None
    for i, j, conductance in edges:
        voltage = _edge_voltage(i, j)
        term = Const(0.5) * conductance * voltage * voltage
        expr = term if expr is None else expr + term
    return expr if expr is not None else Const(0.0)


def stamp_robin(topo: GridTopology, record: RobinRecord) -> list[Resistor]:
    points, areas = boundary_dual_area(topo, record.plane)
    if record.h == 0:
        return []
    return [
        Resistor(
            f"Rrob{i}_{record.plane.name}",
            node_name(NodeKind.THERMAL, i),
            node_name(NodeKind.AMBIENT),
            1.0 / (record.h * area),
        )
        for i, area in zip(points.tolist(), areas)
    ]


def _impressed(prefix: str, kind: NodeKind, topo: GridTopology, records: tuple[ImpressedRecord, ...]):
    out = []
    for r, record in enumerate(records):
        i, j = edge_endpoints(topo, record.edge)
        out.append(ISource(f"{prefix}{i}_{r}", node_name(kind, i), "0", record.waveform))
        out.append(ISource(f"{prefix}{j}_{r}", node_name(kind, j), "0", record.waveform.scaled(-1.0)))
    return out


def element_census(topo: GridTopology, mats: Materials, bcs: EtBoundarySpec) -> int:
    """Number of cards extract_et emits for this problem."""
    edges = topo.real_edges
    extras = len(bcs.electric_nodes()) or 1
    extras += 2 * len(bcs.currents)
    if mats.thermal:
        count = 2 * len(edges) + int(np.count_nonzero(mats.lam[edges] > 0)) + 2 * topo.NP
        extras += len(bcs.thermal_nodes()) + 2 * len(bcs.heat)
        robin = [len(points) for record, points, _ in bcs.robin_areas(topo) if record.h > 0]
        extras += sum(robin) + (1 if robin else 0)
    else:
        count = len(edges) + int(np.count_nonzero(mats.sigma[edges] > 0))
    return count + extras


def extract_et(topo: GridTopology, mats: Materials, bcs: EtBoundarySpec, init: EtInitial) -> Netlist:
    bcs.validate(topo)
    thermal = mats.thermal
    netlist = Netlist(title="fieldnet electrothermal netlist" if thermal else "fieldnet electroquasistatic netlist")
    phi = init.potentials(topo)
    temperature = init.temperatures(topo)
    incident: dict[int, list[tuple[int, int, Expr]]] = {i: [] for i in range(topo.NP)}

    for m in topo.real_edges.tolist():
        i, j = edge_endpoints(topo, m)
        ni, nj = node_name(NodeKind.ELECTRIC, i), node_name(NodeKind.ELECTRIC, j)
        if thermal:
            conductance = branch_conductance(conductance_terms(topo, mats.fields, m), i, j)
            netlist.add(BehaviouralI(f"BGel{m}", ni, nj, _edge_voltage(i, j) * conductance))
            incident[i].append((i, j, conductance))
            incident[j].append((i, j, conductance))
        elif mats.sigma[m] > 0:
            netlist.add(Resistor(f"Rel{m}", ni, nj, 1.0 / mats.sigma[m]))
        netlist.add(Capacitor(f"Cel{m}", ni, nj, float(mats.eps[m]), float(phi[i] - phi[j])))
        if thermal and mats.lam[m] > 0:
            netlist.add(
                Resistor(
                    f"Rth{m}", node_name(NodeKind.THERMAL, i), node_name(NodeKind.THERMAL, j), 1.0 / mats.lam[m]
                )
            )

    if thermal:
        for i in range(topo.NP):
            ti = node_name(NodeKind.THERMAL, i)
            netlist.add(Capacitor(f"Cth{i}", ti, "0", float(mats.rhoc[i]), float(temperature[i])))
            netlist.add(BehaviouralI(f"BLoss{i}", "0", ti, joule_source(incident[i])))

    electric = bcs.electric_nodes()
    for i, waveform in sorted(electric.items()):
        netlist.add(VSource(f"VDirEl{i}", node_name(NodeKind.ELECTRIC, i), "0", waveform))
    if not electric:
        logger.warning("No electric Dirichlet node; grounding n0")
        netlist.add(VSource("VGnd", node_name(NodeKind.ELECTRIC, 0), "0", DC(0.0)))
    netlist.extend(_impressed("IimpEl", NodeKind.ELECTRIC, topo, bcs.currents))

    if thermal:
        for i, waveform in sorted(bcs.thermal_nodes().items()):
            netlist.add(VSource(f"VDirTh{i}", node_name(NodeKind.THERMAL, i), "0", waveform))
        netlist.extend(_impressed("IimpTh", NodeKind.THERMAL, topo, bcs.heat))
        robin = [r for record in bcs.robin for r in stamp_robin(topo, record)]
        if robin:
            ambient = next(record.ambient for record in bcs.robin if record.h > 0)
            netlist.extend(robin)
            netlist.add(VSource("VInf", node_name(NodeKind.AMBIENT), "0", DC(ambient)))
    elif bcs.thermal_dirichlet or bcs.robin or bcs.heat:
        raise InvalidSpecException("thermal boundary conditions given but no thermal material data")

    logger.info(f"Extracted {'electrothermal' if thermal else 'electric'} netlist with {len(netlist)} elements")
    return netlist
