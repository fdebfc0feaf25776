"""Staggered primal/dual hexahedral grid: numbering, measures and incidence matrices."""

import enum
import functools
import logging
import re
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from fieldnet.exceptions import GridIndexException, InvalidSpecException

logger = logging.getLogger(__name__)


class Axis(enum.IntEnum):
    X = 0
    Y = 1
    Z = 2

    @classmethod
    def parse(cls, value: str | int) -> Axis:
        if isinstance(value, str):
            try:
                return cls("XYZ".index(value.strip().upper()))
            except ValueError as e:
                raise InvalidSpecException(f"unknown axis {value!r}") from e
        return cls(value)

    @property
    def label(self) -> str:
        return "xyz"[self]


class EntityKind(enum.StrEnum):
    POINT = "point"
    EDGE = "edge"
    FACET = "facet"
    VOLUME = "volume"


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    nz: int
    dx: tuple[float, ...]
    dy: tuple[float, ...]
    dz: tuple[float, ...]

    @classmethod
    def uniform(cls, nx: int, ny: int, nz: int, h: float | tuple[float, float, float]) -> GridSpec:
        hx, hy, hz = (h, h, h) if isinstance(h, (int, float)) else h
        return cls(nx, ny, nz, (float(hx),) * nx, (float(hy),) * ny, (float(hz),) * nz)

    @classmethod
    def from_widths(cls, dx, dy, dz) -> GridSpec:
        dx, dy, dz = (tuple(float(w) for w in ws) for ws in (dx, dy, dz))
        return cls(len(dx), len(dy), len(dz), dx, dy, dz)

    @property
    def counts(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    def widths(self, axis: Axis) -> tuple[float, ...]:
        return (self.dx, self.dy, self.dz)[axis]


@dataclass(frozen=True, eq=False)
class GridTopology:
    """Full-allocation grid: every point owns one edge, facet and volume slot per axis.

    Edges and facets are stored in three directional blocks of NP slots each (x, y, z),
    points and volumes in one block. Slots that leave the domain are phantom.
    """

    spec: GridSpec
    NP: int
    NE: int
    NF: int
    NV: int
    strides: tuple[int, int, int]
    coords: np.ndarray
    positions: np.ndarray
    length: np.ndarray
    area: np.ndarray
    volume: np.ndarray
    dual_length: np.ndarray
    dual_area: np.ndarray
    dual_volume: np.ndarray
    edge_real: np.ndarray
    facet_real: np.ndarray
    volume_real: np.ndarray

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.spec.counts

    @property
    def point_real(self) -> np.ndarray:
        return np.ones(self.NP, dtype=bool)

    @property
    def real_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_real)

    @property
    def real_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_real)

    @property
    def real_volumes(self) -> np.ndarray:
        return np.flatnonzero(self.volume_real)

    def point(self, i: int, j: int, k: int) -> int:
        return canonical_index(self, EntityKind.POINT, None, i, j, k)

    def edge(self, axis: Axis | str, i: int, j: int, k: int) -> int:
        return canonical_index(self, EntityKind.EDGE, Axis.parse(axis), i, j, k)

    def facet(self, axis: Axis | str, i: int, j: int, k: int) -> int:
        return canonical_index(self, EntityKind.FACET, Axis.parse(axis), i, j, k)

    def edge_axis(self, m: int) -> Axis:
        return Axis(m // self.NP)

    def counts_real(self) -> dict[str, int]:
        return {
            "points": self.NP,
            "edges": int(self.edge_real.sum()),
            "facets": int(self.facet_real.sum()),
            "volumes": int(self.volume_real.sum()),
        }


@dataclass(frozen=True, eq=False)
class IncidenceSet:
    G: sp.csr_matrix
    C: sp.csr_matrix
    S: sp.csr_matrix
    G_dual: sp.csr_matrix | None = None
    C_dual: sp.csr_matrix | None = None
    S_dual: sp.csr_matrix | None = None


@dataclass(frozen=True)
class EdgeNeighbourhood:
    edge: int
    facets: tuple[int, ...]
    facet_edges: dict[int, tuple[int, ...]]
    signs: dict[tuple[int, int], int]

    @property
    def n_facets(self) -> int:
        return len(self.facets)

    @property
    def dual_edges(self) -> tuple[int, ...]:
        # dual edge k pierces primal facet k
        return self.facets

    @property
    def edges(self) -> tuple[int, ...]:
        return tuple(sorted({n for ks in self.facet_edges.values() for n in ks}))

    @property
    def others(self) -> tuple[int, ...]:
        return tuple(n for n in self.edges if n != self.edge)

    def others_in(self, k: int) -> tuple[int, ...]:
        return tuple(n for n in self.facet_edges[k] if n != self.edge)


def _padded(widths: tuple[float, ...]) -> np.ndarray:
    return np.append(np.asarray(widths, dtype=float), 0.0)


def _dual_widths(widths: tuple[float, ...]) -> np.ndarray:
    # half-sum of neighbouring widths, truncated to half a cell at the domain boundary
    w = np.asarray(widths, dtype=float)
    dual = np.zeros(len(w) + 1)
    dual[:-1] += w / 2
    dual[1:] += w / 2
    return dual


def _validate(spec: GridSpec) -> None:
    for label, n, widths in zip("xyz", spec.counts, (spec.dx, spec.dy, spec.dz)):
        if n <= 0:
            raise InvalidSpecException(f"cell count n{label} must be positive, got {n}")
        if len(widths) != n:
            raise InvalidSpecException(f"d{label} has {len(widths)} widths for {n} cells")
        if any(not np.isfinite(w) or w <= 0 for w in widths):
            raise InvalidSpecException(f"d{label} contains a non-positive width")


def build_topology(spec: GridSpec) -> GridTopology:
    _validate(spec)
    nx, ny, nz = spec.counts
    strides = (1, nx + 1, (nx + 1) * (ny + 1))
    npts = (nx + 1) * (ny + 1) * (nz + 1)
    idx = np.arange(npts)
    coords = np.stack([idx % (nx + 1), (idx // (nx + 1)) % (ny + 1), idx // strides[2]], axis=1)

    widths = [spec.dx, spec.dy, spec.dz]
    padded = [_padded(w)[coords[:, a]] for a, w in enumerate(widths)]
    dual = [_dual_widths(w)[coords[:, a]] for a, w in enumerate(widths)]
    inside = [coords[:, a] < spec.counts[a] for a in range(3)]
    positions = np.stack(
        [np.concatenate([[0.0], np.cumsum(w)])[coords[:, a]] for a, w in enumerate(widths)], axis=1
    )

    length, area, dual_length, dual_area = [], [], [], []
    edge_real, facet_real = [], []
    for a in range(3):
        t1, t2 = [t for t in range(3) if t != a]
        length.append(padded[a])
        dual_area.append(dual[t1] * dual[t2])
        edge_real.append(inside[a])
        area.append(padded[t1] * padded[t2])
        dual_length.append(dual[a])
        facet_real.append(inside[t1] & inside[t2])

    edge_mask = np.concatenate(edge_real)
    facet_mask = np.concatenate(facet_real)
    volume_mask = inside[0] & inside[1] & inside[2]
    topo = GridTopology(
        spec=spec,
        NP=npts,
        NE=3 * npts,
        NF=3 * npts,
        NV=npts,
        strides=strides,
        coords=coords,
        positions=positions,
        length=np.where(edge_mask, np.concatenate(length), 0.0),
        area=np.where(facet_mask, np.concatenate(area), 0.0),
        volume=np.where(volume_mask, padded[0] * padded[1] * padded[2], 0.0),
        dual_length=np.where(facet_mask, np.concatenate(dual_length), 0.0),
        dual_area=np.where(edge_mask, np.concatenate(dual_area), 0.0),
        dual_volume=dual[0] * dual[1] * dual[2],
        edge_real=edge_mask,
        facet_real=facet_mask,
        volume_real=volume_mask,
    )
    for arr in (coords, positions, topo.length, topo.area, topo.volume, topo.dual_length, topo.dual_area):
        arr.setflags(write=False)
    logger.debug(f"Built {nx}x{ny}x{nz} grid: {topo.counts_real()}")
    return topo


def canonical_index(topo: GridTopology, kind: EntityKind, direction: Axis | None, i: int, j: int, k: int) -> int:
    nx, ny, nz = topo.shape
    if not (0 <= i <= nx and 0 <= j <= ny and 0 <= k <= nz):
        raise GridIndexException(f"{kind} ({i},{j},{k}) outside the {nx}x{ny}x{nz} allocation")
    p = i + j * topo.strides[1] + k * topo.strides[2]
    if kind in (EntityKind.POINT, EntityKind.VOLUME):
        return p
    if direction is None:
        raise GridIndexException(f"{kind} index requires a direction")
    return int(direction) * topo.NP + p


def inverse_index(topo: GridTopology, kind: EntityKind, index: int) -> tuple[Axis | None, int, int, int]:
    limit = topo.NP if kind in (EntityKind.POINT, EntityKind.VOLUME) else 3 * topo.NP
    if not 0 <= index < limit:
        raise GridIndexException(f"{kind} index {index} outside allocation of {limit}")
    direction = None if limit == topo.NP else Axis(index // topo.NP)
    i, j, k = (int(c) for c in topo.coords[index % topo.NP])
    return direction, i, j, k


def _shift_block(topo: GridTopology, axis: int) -> sp.csr_matrix:
    s = topo.strides[axis]
    n = topo.NP
    return sp.diags([-np.ones(n), np.ones(n - s)], [0, s], shape=(n, n), format="csr", dtype=np.int8)


def _mask_rows(matrix: sp.spmatrix, mask: np.ndarray) -> sp.csr_matrix:
    out = (sp.diags(mask.astype(np.int8)) @ matrix).tocsr().astype(np.int8)
    out.eliminate_zeros()
    return out


def primal_operators(topo: GridTopology) -> IncidenceSet:
    px, py, pz = (_shift_block(topo, a) for a in range(3))
    grad = sp.vstack([px, py, pz])
    curl = sp.bmat([[None, -pz, py], [pz, None, -px], [-py, px, None]])
    div = sp.hstack([px, py, pz])
    return IncidenceSet(
        G=_mask_rows(grad, topo.edge_real),
        C=_mask_rows(curl, topo.facet_real),
        S=_mask_rows(div, topo.volume_real),
    )


def dual_operators(inc: IncidenceSet) -> IncidenceSet:
    return replace(
        inc,
        G_dual=(-inc.S.T).tocsr(),
        C_dual=inc.C.T.tocsr(),
        S_dual=(-inc.G.T).tocsr(),
    )


# keyed on topology identity; bounded so discarded grids are released
@functools.lru_cache(maxsize=8)
def operators(topo: GridTopology) -> IncidenceSet:
    return dual_operators(primal_operators(topo))


def edge_endpoints(topo: GridTopology, m: int) -> tuple[int, int]:
    if not topo.edge_real[m]:
        raise InvalidSpecException(f"edge {m} is phantom")
    p = m % topo.NP
    return p, p + topo.strides[m // topo.NP]


def edge_neighbourhood(topo: GridTopology, m: int) -> EdgeNeighbourhood:
    if not 0 <= m < topo.NE or not topo.edge_real[m]:
        raise InvalidSpecException(f"edge {m} is phantom or out of range")
    ops = operators(topo)
    curl, curl_t = ops.C, ops.C_dual
    facets = tuple(int(k) for k in sorted(curl_t.indices[curl_t.indptr[m] : curl_t.indptr[m + 1]]))
    facet_edges: dict[int, tuple[int, ...]] = {}
    signs: dict[tuple[int, int], int] = {}
    for k in facets:
        start, stop = curl.indptr[k], curl.indptr[k + 1]
        cols = curl.indices[start:stop]
        vals = curl.data[start:stop]
        facet_edges[k] = tuple(int(n) for n in sorted(cols))
        signs.update({(k, int(n)): int(v) for n, v in zip(cols, vals)})
    return EdgeNeighbourhood(edge=m, facets=facets, facet_edges=facet_edges, signs=signs)


@dataclass(frozen=True)
class Plane:
    """Grid plane normal to `axis` at point coordinate `index`."""

    axis: Axis
    index: int

    _FACE = re.compile(r"^\s*([xyz])\s*(min|max|=\s*(\d+))\s*$", re.IGNORECASE)

    @classmethod
    def parse(cls, topo: GridTopology, text: str) -> Plane:
        match = cls._FACE.match(text)
        if not match:
            raise InvalidSpecException(f"unknown face {text!r}")
        axis = Axis.parse(match[1])
        n = topo.shape[axis]
        match match[2].lower():
            case "min":
                index = 0
            case "max":
                index = n
            case _:
                index = int(match[3])
        if not 0 <= index <= n:
            raise InvalidSpecException(f"plane {text!r} outside the grid")
        return cls(axis, index)

    def on_boundary(self, topo: GridTopology) -> bool:
        return self.index in (0, topo.shape[self.axis])

    def inward(self, topo: GridTopology) -> int:
        return 1 if self.index == 0 else -1

    @property
    def name(self) -> str:
        return f"{self.axis.label}{self.index}"


def plane_points(topo: GridTopology, plane: Plane) -> np.ndarray:
    return np.flatnonzero(topo.coords[:, plane.axis] == plane.index)


def plane_edges(topo: GridTopology, plane: Plane) -> np.ndarray:
    points = plane_points(topo, plane)
    edges = [a * topo.NP + points for a in Axis if a != plane.axis]
    edges = np.concatenate(edges)
    return np.sort(edges[topo.edge_real[edges]])


def boundary_dual_area(topo: GridTopology, plane: Plane) -> tuple[np.ndarray, np.ndarray]:
    """Points of a boundary plane and the area of their dual facet on that plane."""
    if not plane.on_boundary(topo):
        raise InvalidSpecException(f"plane {plane.name} is not on the domain boundary")
    points = plane_points(topo, plane)
    t1, t2 = [a for a in Axis if a != plane.axis]
    spec = topo.spec
    d1 = _dual_widths(spec.widths(t1))[topo.coords[points, t1]]
    d2 = _dual_widths(spec.widths(t2))[topo.coords[points, t2]]
    return points, d1 * d2


def box_edges(topo: GridTopology, lo, hi) -> np.ndarray:
    """Real edges with both end points inside the closed box [lo, hi]."""
    tol = 1e-9 * float(np.max(topo.positions[-1]))
    inside = np.all((topo.positions >= np.asarray(lo) - tol) & (topo.positions <= np.asarray(hi) + tol), axis=1)
    edges = topo.real_edges
    start = edges % topo.NP
    stop = start + np.asarray(topo.strides)[edges // topo.NP]
    return edges[inside[start] & inside[stop]]
