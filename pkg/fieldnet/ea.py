"""E-A netlist extraction with tree-cotree gauging.

The branch current of the first element in the voltage chain of stamp m is the
magnetic grid flux a_m (in Weber). Tree-edge fluxes are slaved to the cotree through
the essential incidence matrix, which imposes the discrete Coulomb gauge.
"""

import collections
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from fieldnet.eh import EdgeSource, check_sources, coupling_matrix, reluctance_sums, source_cards
from fieldnet.exceptions import TopologyException
from fieldnet.grid import GridTopology, edge_endpoints, operators
from fieldnet.materials import DiagonalOperator, Materials
from fieldnet.netlist import (
    CCCS,
    VCVS,
    BehaviouralV,
    Capacitor,
    Const,
    Current,
    Ddt,
    Netlist,
    NodeKind,
    Resistor,
    node_name,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TreeCotree:
    """Spanning tree of the point graph after contracting PEC edges into super nodes."""

    tree: np.ndarray
    cotree: np.ndarray
    pec: frozenset[int]
    supernode: np.ndarray
    n_super: int
    root: int

    @property
    def n_tree(self) -> int:
        return len(self.tree)

    @property
    def n_cotree(self) -> int:
        return len(self.cotree)

    @property
    def permutation(self) -> np.ndarray:
        """Edge order [cotree; tree]."""
        return np.concatenate([self.cotree, self.tree])

    @cached_property
    def tree_set(self) -> frozenset[int]:
        return frozenset(self.tree.tolist())

    def is_tree(self, m: int) -> bool:
        return m in self.tree_set


def _supernodes(topo: GridTopology, pec: frozenset[int]) -> tuple[np.ndarray, int]:
    edges = np.array(sorted(pec), dtype=int)
    if not len(edges):
        return np.arange(topo.NP), topo.NP
    start = edges % topo.NP
    stop = start + np.asarray(topo.strides)[edges // topo.NP]
    graph = sp.coo_matrix((np.ones(len(edges)), (start, stop)), shape=(topo.NP, topo.NP))
    count, labels = csgraph.connected_components(graph, directed=False)
    return labels, count


def spanning_tree(topo: GridTopology, pec=frozenset()) -> TreeCotree:
    """Breadth-first spanning tree rooted at the grounded super node.

    With PEC edges the root is the super node of the first PEC edge, otherwise point 0.
    Neighbours are visited in ascending edge index.
    """
    pec = frozenset(pec)
    supernode, n_super = _supernodes(topo, pec)
    root = int(supernode[edge_endpoints(topo, min(pec))[0]]) if pec else int(supernode[0])
    active = [m for m in topo.real_edges.tolist() if m not in pec]
    adjacency: dict[int, list[tuple[int, int]]] = collections.defaultdict(list)
    for m in active:
        i, j = edge_endpoints(topo, m)
        a, b = int(supernode[i]), int(supernode[j])
        if a != b:
            adjacency[a].append((m, b))
            adjacency[b].append((m, a))

    visited = {root}
    tree: list[int] = []
    queue = collections.deque([root])
    while queue:
        node = queue.popleft()
        for m, other in sorted(adjacency[node]):
            if other not in visited:
                visited.add(other)
                tree.append(m)
                queue.append(other)
    if len(visited) != n_super:
        missing = min(set(range(n_super)) - visited)
        point = int(np.flatnonzero(supernode == missing)[0])
        raise TopologyException(f"point {point} is not connected to the root of the spanning tree")
    tree_set = set(tree)
    cotree = [m for m in active if m not in tree_set]
    logger.debug(f"Spanning tree: {len(tree)} tree edges, {len(cotree)} cotree edges, {n_super} super nodes")
    return TreeCotree(
        tree=np.array(sorted(tree), dtype=int),
        cotree=np.array(cotree, dtype=int),
        pec=pec,
        supernode=supernode,
        n_super=n_super,
        root=root,
    )


def reduced_divergence(topo: GridTopology, tc: TreeCotree) -> sp.csr_matrix:
    """Dual divergence summed over super nodes, root row removed: (n_super - 1) x NE."""
    collect = sp.coo_matrix((np.ones(topo.NP), (tc.supernode, np.arange(topo.NP))), shape=(tc.n_super, topo.NP))
    div = (collect @ operators(topo).S_dual.astype(float)).tocsr()
    keep = np.array([s for s in range(tc.n_super) if s != tc.root], dtype=int)
    return div[keep]


@dataclass(frozen=True, eq=False)
class EssentialIncidence:
    """E_tc with a_t = -E_tc a_c; rows follow tc.tree, columns tc.cotree."""

    E: np.ndarray
    tree: np.ndarray
    cotree: np.ndarray

    def tree_fluxes(self, a_cotree: np.ndarray) -> np.ndarray:
        return -self.E @ a_cotree


def essential_incidence(topo: GridTopology, tc: TreeCotree, gauge: DiagonalOperator) -> EssentialIncidence:
    div = reduced_divergence(topo, tc)
    div_t = div[:, tc.tree].tocsc()
    rhs = (div[:, tc.cotree] @ sp.diags(gauge[tc.cotree])).toarray()
    try:
        solved = spla.splu(div_t).solve(rhs) if tc.n_tree else np.zeros((0, tc.n_cotree))
    except RuntimeError as e:
        raise TopologyException(f"tree divergence block is singular: {e}") from e
    E = solved / gauge[tc.tree][:, None]
    E[np.abs(E) < 1e-14 * max(float(np.max(np.abs(E), initial=0.0)), 1e-300)] = 0.0
    return EssentialIncidence(E=E, tree=tc.tree, cotree=tc.cotree)


def gauge_residual(topo: GridTopology, tc: TreeCotree, gauge: DiagonalOperator, a: np.ndarray) -> float:
    """||S~ M_G a|| / ||M_G a|| over the super nodes except the root."""
    weighted = gauge.values * np.asarray(a)
    norm = np.linalg.norm(weighted)
    return float(np.linalg.norm(reduced_divergence(topo, tc) @ weighted) / norm) if norm else 0.0


@dataclass(frozen=True)
class ChainTerm:
    kind: str
    edge: int
    gain: float


def chain_terms(topo: GridTopology, tc: TreeCotree, m: int, faraday: sp.csr_matrix) -> list[ChainTerm]:
    """Voltage chain of stamp m: neighbour voltages, then cotree and tree flux derivatives."""
    start, stop = faraday.indptr[m], faraday.indptr[m + 1]
    neighbours = [
        (int(n), float(g))
        for n, g in zip(faraday.indices[start:stop], faraday.data[start:stop])
        if n != m and int(n) not in tc.pec
    ]
    derivative = sorted([(m, 1.0), *neighbours])
    return (
        [ChainTerm("e", n, g) for n, g in neighbours]
        + [ChainTerm("c", n, g) for n, g in derivative if not tc.is_tree(n)]
        + [ChainTerm("t", n, g) for n, g in derivative if tc.is_tree(n)]
    )


def faraday_gains(topo: GridTopology) -> sp.csr_matrix:
    """(C^T C)_mn / N_F;m: facet-averaged Faraday coupling between edges m and n."""
    curl = operators(topo).C.astype(float)
    product = (curl.T @ curl).tocsr()
    facets = product.diagonal()
    scale = np.divide(1.0, facets, out=np.zeros_like(facets), where=facets > 0)
    out = (sp.diags(scale) @ product).tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def _chain_prefix(kind: str) -> tuple[str, str]:
    return {"e": ("EVe", "e"), "c": ("BVc", "c"), "t": ("BVt", "t")}[kind]


def probe_name(chains: dict[int, list[ChainTerm]], m: int) -> str:
    prefix, _ = _chain_prefix(chains[m][0].kind)
    return f"{prefix}{m}_1"


def chain_plan(topo: GridTopology, tc: TreeCotree) -> dict[int, list[ChainTerm]]:
    faraday = faraday_gains(topo)
    active = sorted((*tc.tree.tolist(), *tc.cotree.tolist()))
    return {m: chain_terms(topo, tc, m, faraday) for m in active}


def extract_ea(
    topo: GridTopology,
    mats: Materials,
    tc: TreeCotree,
    sources: list[EdgeSource],
    gauge: DiagonalOperator,
) -> Netlist:
    check_sources(topo, sources, set(tc.pec))
    nu_sum = reluctance_sums(topo, mats.nu)
    coupling = coupling_matrix(topo, mats.nu)
    essential = essential_incidence(topo, tc, gauge)
    chains = chain_plan(topo, tc)
    probes = {m: probe_name(chains, m) for m in chains}
    row_of = {int(m): r for r, m in enumerate(tc.tree.tolist())}
    netlist = Netlist(title="fieldnet E-A netlist")

    for m, chain in chains.items():
        node = node_name(NodeKind.ELECTRIC, m)
        if mats.sigma[m] > 0:
            netlist.add(Resistor(f"R{m}", node, "0", nu_sum[m] / mats.sigma[m]))
        netlist.add(Capacitor(f"C{m}", node, "0", float(mats.eps[m] / nu_sum[m])))

        top = node
        if tc.is_tree(m):
            top = node_name(NodeKind.AUXILIARY, m, "e")
            row = essential.E[row_of[m]]
            for column in np.flatnonzero(row).tolist():
                n = int(tc.cotree[column])
                netlist.add(CCCS(f"FIsum{m}_{n}", top, node, probes[n], float(-row[column])))

        start, stop = coupling.indptr[m], coupling.indptr[m + 1]
        for n, value in zip(coupling.indices[start:stop].tolist(), coupling.data[start:stop]):
            if n in tc.pec:
                continue
            label = "FIt" if tc.is_tree(n) else "FIc"
            netlist.add(CCCS(f"{label}{m}_{n}", "0", node, probes[n], float(value / nu_sum[m])))

        upper = top
        for position, term in enumerate(chain, start=1):
            prefix, suffix = _chain_prefix(term.kind)
            last = position == len(chain)
            lower = "0" if last else node_name(NodeKind.AUXILIARY, m, suffix, position)
            name = f"{prefix}{m}_{position}"
            if term.kind == "e":
                netlist.add(VCVS(name, lower, upper, node_name(NodeKind.ELECTRIC, term.edge), "0", term.gain))
            else:
                expr = Const(term.gain) * Ddt(Current(probes[term.edge]))
                netlist.add(BehaviouralV(name, lower, upper, expr))
            upper = lower

    netlist.extend(source_cards(sources, scale=np.divide(1.0, nu_sum, out=np.zeros_like(nu_sum), where=nu_sum > 0)))
    logger.info(
        f"Extracted E-A netlist: {len(chains)} edge stamps ({tc.n_tree} tree), "
        f"{np.count_nonzero(essential.E)} gauge couplings, {len(netlist)} elements"
    )
    return netlist
