"""First-order absorbing boundary: matched characteristic impedances on boundary edges."""

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from fieldnet.exceptions import InvalidSpecException
from fieldnet.grid import Axis, GridTopology, Plane, plane_edges
from fieldnet.materials import Materials
from fieldnet.netlist import Netlist, NodeKind, Resistor, node_name

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AbcSpec:
    plane: Plane
    edges: tuple[int, ...]
    impedance: tuple[float, ...]

    def __post_init__(self):
        if len(self.edges) != len(self.impedance):
            raise InvalidSpecException("one impedance per terminated edge")
        if any(not z > 0 for z in self.impedance):
            raise InvalidSpecException(f"ABC on {self.plane.name}: impedances must be positive")

    def items(self):
        return zip(self.edges, self.impedance)

    def port_resistance(self) -> float:
        """All terminations in parallel."""
        if not self.impedance:
            return float("inf")
        return 1.0 / sum(1.0 / z for z in self.impedance)


def abc_edges(topo: GridTopology, plane: Plane, pec=frozenset()) -> np.ndarray:
    if not plane.on_boundary(topo):
        raise InvalidSpecException(f"ABC plane {plane.name} is not on the domain boundary")
    edges = plane_edges(topo, plane)
    return np.array([m for m in edges.tolist() if m not in pec], dtype=int)


def _inward_point(topo: GridTopology, point: np.ndarray, normal: Axis, layers: int, inward: int) -> np.ndarray | None:
    shifted = point.copy()
    shifted[normal] += inward * layers
    if not 0 <= shifted[normal] <= topo.shape[normal]:
        return None
    return shifted


def characteristic_impedance(topo: GridTopology, mats: Materials, m: int, plane: Plane) -> float:
    """Z0 = (mean facet reluctance * permittivity of the parallel inner edge) ** -1/2."""
    axis = topo.edge_axis(m)
    normal = plane.axis
    if axis == normal:
        raise InvalidSpecException(f"edge {m} is normal to the ABC plane {plane.name}")
    point = topo.coords[m % topo.NP].copy()
    if point[normal] != plane.index or not plane.on_boundary(topo):
        raise InvalidSpecException(f"edge {m} does not lie on boundary plane {plane.name}")
    inward = plane.inward(topo)
    third = Axis(3 - axis - normal)

    reluctances = []
    for layer in (1, 2):
        corner = _inward_point(topo, point, normal, layer, inward)
        if corner is None:
            break
        # facets between layer-1 and layer; the lower corner sits on the smaller coordinate
        corner[normal] = min(corner[normal], corner[normal] - inward)
        k = topo.facet(third, *corner)
        if topo.facet_real[k]:
            reluctances.append(mats.nu[k])
    if not reluctances:
        raise InvalidSpecException(f"no facet inside the domain next to edge {m}")
    inner = _inward_point(topo, point, normal, 1, inward)
    eps = mats.eps[topo.edge(axis, *inner)]
    return float((np.mean(reluctances) * eps) ** -0.5)


def build_abc(topo: GridTopology, mats: Materials, plane: Plane, pec=frozenset()) -> AbcSpec:
    edges = abc_edges(topo, plane, pec)
    impedance = tuple(characteristic_impedance(topo, mats, m, plane) for m in edges.tolist())
    spec = AbcSpec(plane, tuple(edges.tolist()), impedance)
    logger.info(f"ABC on {plane.name}: {len(edges)} edges, port resistance {spec.port_resistance():.4g} ohm")
    return spec


def stamp_abc(netlist: Netlist, spec: AbcSpec) -> Netlist:
    """Replace the capacitor and conductance of every terminated edge by its matched resistor.

    The inductor, impressed sources and coupling sources of the edge stay in place.
    """
    names = netlist.by_name()
    drop = set()
    cards = []
    for m, z in spec.items():
        if f"L{m}" not in names:
            raise InvalidSpecException(f"ABC edge {m} has no stamp (PEC edge or not extracted)")
        drop.update({f"C{m}", f"R{m}"})
        cards.append(Resistor(f"Rabc{m}", node_name(NodeKind.ELECTRIC, m), "0", z))
    kept = [e for e in netlist.elements if e.name not in drop]
    return dataclasses.replace(netlist, elements=kept + cards)

