"""E-H netlist extraction: one parallel RLC stamp per primal edge.

The node voltage of stamp m is the grid voltage e_m. Its inductor carries
MnuSum_m times the time integral of e_m, so the curl-curl coupling between
neighbouring edges becomes current-controlled current sources sensing those
inductor currents.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from fieldnet.absorbing import AbcSpec, stamp_abc
from fieldnet.exceptions import InvalidSpecException
from fieldnet.grid import Axis, GridTopology, edge_neighbourhood, operators
from fieldnet.materials import DiagonalOperator, Materials
from fieldnet.netlist import CCCS, DC, Capacitor, Inductor, ISource, Netlist, NodeKind, Resistor, Waveform, node_name

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EdgeSource:
    """Impressed current on one edge: a transient waveform and an AC magnitude."""

    edge: int
    waveform: Waveform = DC(0.0)
    ac: float | None = None


def te_loop(topo: GridTopology, i: int, j: int, k: int, waveform: Waveform, amplitude: float = 1.0):
    """Four edge currents circulating around the z-facet with lower corner (i, j, k)."""
    loop = (
        (topo.edge(Axis.X, i, j, k), 1.0),
        (topo.edge(Axis.Y, i + 1, j, k), 1.0),
        (topo.edge(Axis.X, i, j + 1, k), -1.0),
        (topo.edge(Axis.Y, i, j, k), -1.0),
    )
    return [EdgeSource(m, waveform.scaled(sign * amplitude), sign * amplitude) for m, sign in loop]


def reluctance_sum(topo: GridTopology, nu: DiagonalOperator, m: int) -> float:
    return float(sum(nu[k] for k in edge_neighbourhood(topo, m).facets))


def reluctance_sums(topo: GridTopology, nu: DiagonalOperator) -> np.ndarray:
    return abs(operators(topo).C).T @ nu.values


def coupling_gain(
    topo: GridTopology, nu: DiagonalOperator, m: int, k: int, n: int, denominator: int | None = None
) -> float:
    """C_km nu_k C_kn divided by the reluctance sum of `denominator` (edge n by default)."""
    hood = edge_neighbourhood(topo, m)
    if k not in hood.facets or n not in hood.others_in(k):
        raise InvalidSpecException(f"edge {n} does not share facet {k} with edge {m}")
    total = reluctance_sum(topo, nu, n if denominator is None else denominator)
    return hood.signs[(k, m)] * nu[k] * hood.signs[(k, n)] / total


def coupling_matrix(topo: GridTopology, nu: DiagonalOperator) -> sp.csr_matrix:
    """Off-diagonal part of C^T M_nu C: entry (m, n) sums C_km nu_k C_kn over shared facets."""
    curl = operators(topo).C.astype(float)
    out = (curl.T @ sp.diags(nu.values) @ curl).tocsr()
    out.setdiag(0.0)
    out.eliminate_zeros()
    out.sort_indices()
    return out


def check_sources(topo: GridTopology, sources: list[EdgeSource], pec: set[int]) -> None:
    for source in sources:
        if not (0 <= source.edge < topo.NE and topo.edge_real[source.edge]):
            raise InvalidSpecException(f"source on phantom edge {source.edge}")
        if source.edge in pec:
            raise InvalidSpecException(f"source on PEC edge {source.edge}")


def source_cards(sources: list[EdgeSource], scale: np.ndarray | None = None) -> list[ISource]:
    """Impressed currents; several records on one edge get distinct suffixes."""
    cards = []
    seen: dict[int, int] = {}
    for source in sources:
        m = source.edge
        factor = 1.0 if scale is None else float(scale[m])
        count = seen[m] = seen.get(m, -1) + 1
        name = f"I{m}" if count == 0 else f"I{m}_{count}"
        ac = None if source.ac is None else source.ac * factor
        cards.append(ISource(name, node_name(NodeKind.ELECTRIC, m), "0", source.waveform.scaled(factor), ac))
    return cards


def extract_eh(
    topo: GridTopology,
    mats: Materials,
    sources: list[EdgeSource],
    pec: set[int] | frozenset[int] = frozenset(),
    abc: AbcSpec | None = None,
) -> Netlist:
    pec = set(pec)
    check_sources(topo, sources, pec)
    nu_sum = reluctance_sums(topo, mats.nu)
    coupling = coupling_matrix(topo, mats.nu)
    netlist = Netlist(title="fieldnet E-H netlist")
    active = [m for m in topo.real_edges.tolist() if m not in pec]
    for m in active:
        node = node_name(NodeKind.ELECTRIC, m)
        if mats.sigma[m] > 0:
            netlist.add(Resistor(f"R{m}", node, "0", 1.0 / mats.sigma[m]))
        netlist.add(Inductor(f"L{m}", node, "0", 1.0 / nu_sum[m]))
        netlist.add(Capacitor(f"C{m}", node, "0", float(mats.eps[m])))
    netlist.extend(source_cards(sources))
    for m in active:
        node = node_name(NodeKind.ELECTRIC, m)
        start, stop = coupling.indptr[m], coupling.indptr[m + 1]
        for n, value in zip(coupling.indices[start:stop].tolist(), coupling.data[start:stop]):
            if n in pec:
                continue
            netlist.add(CCCS(f"F{m}_{n}", node, "0", f"L{n}", float(value / nu_sum[n])))
    if abc is not None:
        netlist = stamp_abc(netlist, abc)
    logger.info(f"Extracted E-H netlist: {len(active)} edge stamps, {len(netlist)} elements")
    return netlist
