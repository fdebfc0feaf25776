"""Material rasterisation and the diagonal FIT material matrices."""

import enum
import functools
import logging
from dataclasses import dataclass

import numpy as np
import scipy.constants
import scipy.sparse as sp

from fieldnet.exceptions import InvalidSpecException, NonphysicalTemperatureException
from fieldnet.grid import GridTopology

logger = logging.getLogger(__name__)

NU_0 = 1 / scipy.constants.mu_0


class MaterialKind(enum.StrEnum):
    EPSILON = "epsilon"
    SIGMA = "sigma"
    LAMBDA = "lambda"
    RHOC = "rhoc"
    NU = "nu"

    @property
    def unit(self) -> str:
        return {"epsilon": "F", "sigma": "S", "lambda": "W/K", "rhoc": "J/K", "nu": "1/H"}[self]

    @property
    def strictly_positive(self) -> bool:
        return self in (MaterialKind.EPSILON, MaterialKind.NU, MaterialKind.RHOC)


@dataclass(frozen=True)
class MaterialBox:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    eps: float = scipy.constants.epsilon_0
    sigma: float = 0.0
    nu: float = NU_0
    lam: float | None = None
    rhoc: float | None = None
    alpha: float = 0.0
    t0: float = 293.0
    name: str = ""

    def __post_init__(self):
        label = self.name or f"box {self.lo}-{self.hi}"
        if self.eps <= 0 or self.nu <= 0:
            raise InvalidSpecException(f"{label}: permittivity and reluctivity must be positive")
        if self.sigma < 0:
            raise InvalidSpecException(f"{label}: conductivity must be non-negative")
        if (self.lam is not None and self.lam < 0) or (self.rhoc is not None and self.rhoc <= 0):
            raise InvalidSpecException(f"{label}: thermal conductivity must be >= 0 and heat capacity > 0")
        if self.t0 <= 0:
            raise InvalidSpecException(f"{label}: reference temperature must be positive")
        if any(h < lo for lo, h in zip(self.lo, self.hi)):
            raise InvalidSpecException(f"{label}: upper bound below lower bound")

    @property
    def thermal(self) -> bool:
        return self.lam is not None and self.rhoc is not None


@dataclass(frozen=True, eq=False)
class CellFields:
    """Per-volume constitutive values in canonical volume order; phantom volumes hold zeros."""

    eps: np.ndarray
    sigma: np.ndarray
    nu: np.ndarray
    lam: np.ndarray
    rhoc: np.ndarray
    alpha: np.ndarray
    t0: np.ndarray
    material: np.ndarray
    thermal: bool


@dataclass(frozen=True, eq=False)
class DiagonalOperator:
    kind: MaterialKind
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if np.any(self.values < 0):
            raise InvalidSpecException(f"{self.kind} matrix has negative entries")
        if self.kind.strictly_positive and np.any(self.values[self.mask] <= 0):
            raise InvalidSpecException(f"{self.kind} matrix must be strictly positive on real entities")

    def __getitem__(self, index):
        return self.values[index]

    def __len__(self) -> int:
        return len(self.values)

    @property
    def unit(self) -> str:
        return self.kind.unit

    def matrix(self) -> sp.csr_matrix:
        return sp.diags(self.values, format="csr")


@dataclass(frozen=True, eq=False)
class Materials:
    fields: CellFields
    eps: DiagonalOperator
    sigma: DiagonalOperator
    nu: DiagonalOperator
    lam: DiagonalOperator | None = None
    rhoc: DiagonalOperator | None = None

    @property
    def thermal(self) -> bool:
        return self.fields.thermal


def _snap(topo: GridTopology, box: MaterialBox) -> tuple[np.ndarray, np.ndarray]:
    planes = [np.concatenate([[0.0], np.cumsum(topo.spec.widths(a))]) for a in range(3)]
    snapped = []
    for bounds in (box.lo, box.hi):
        out = []
        for a, value in enumerate(bounds):
            clamped = min(max(value, planes[a][0]), planes[a][-1])
            nearest = planes[a][np.argmin(np.abs(planes[a] - clamped))]
            if np.isfinite(value) and not np.isclose(nearest, value, rtol=1e-9, atol=1e-12 * planes[a][-1]):
                label = box.name or "?"
                logger.warning(f"Material {label}: bound {value:g} on axis {'xyz'[a]} snapped to {nearest:g}")
            out.append(nearest)
        snapped.append(np.array(out))
    return snapped[0], snapped[1]


def rasterize(topo: GridTopology, boxes: list[MaterialBox]) -> CellFields:
    if not boxes:
        raise InvalidSpecException("no material boxes given")
    thermal = {box.thermal for box in boxes}
    if len(thermal) > 1:
        raise InvalidSpecException("thermal properties must be given for every material box or for none")

    cells = topo.real_volumes
    centres = topo.positions[cells] + 0.5 * np.stack(
        [np.asarray(topo.spec.widths(a))[topo.coords[cells, a]] for a in range(3)], axis=1
    )
    material = np.full(topo.NV, -1)
    for n, box in enumerate(boxes):
        lo, hi = _snap(topo, box)
        inside = np.all((centres >= lo) & (centres <= hi), axis=1)
        material[cells[inside]] = n

    uncovered = cells[material[cells] < 0]
    if len(uncovered):
        i, j, k = topo.coords[uncovered[0]]
        raise InvalidSpecException(f"cell ({i},{j},{k}) is not covered by any material box")

    def field(attr: str) -> np.ndarray:
        values = np.array([getattr(box, attr) or 0.0 for box in boxes] + [0.0])
        return values[material]

    fields = CellFields(
        eps=field("eps"),
        sigma=field("sigma"),
        nu=field("nu"),
        lam=field("lam"),
        rhoc=field("rhoc"),
        alpha=field("alpha"),
        t0=field("t0"),
        material=material,
        thermal=thermal.pop(),
    )
    logger.debug(f"Rasterised {len(boxes)} material boxes onto {len(cells)} cells")
    return fields


@functools.lru_cache(maxsize=8)
def edge_quadrants(topo: GridTopology) -> tuple[np.ndarray, np.ndarray]:
    """Cells around every edge and their weight |quadrant area| / |L|, shape (4, NE)."""
    cells = np.zeros((4, topo.NE), dtype=int)
    weights = np.zeros((4, topo.NE))
    p = np.arange(topo.NP)
    for a in range(3):
        t1, t2 = [t for t in range(3) if t != a]
        w1 = np.asarray(topo.spec.widths(t1))
        w2 = np.asarray(topo.spec.widths(t2))
        block = slice(a * topo.NP, (a + 1) * topo.NP)
        real = topo.edge_real[block]
        for q, (s1, s2) in enumerate(((0, 0), (1, 0), (0, 1), (1, 1))):
            c1 = topo.coords[:, t1] - s1
            c2 = topo.coords[:, t2] - s2
            valid = real & (c1 >= 0) & (c1 < len(w1)) & (c2 >= 0) & (c2 < len(w2))
            c1, c2 = np.clip(c1, 0, len(w1) - 1), np.clip(c2, 0, len(w2) - 1)
            cells[q, block] = np.where(valid, p - s1 * topo.strides[t1] - s2 * topo.strides[t2], 0)
            length = np.where(real, topo.length[block], 1.0)
            weights[q, block] = np.where(valid, (w1[c1] / 2) * (w2[c2] / 2) / length, 0.0)
    return cells, weights


def edge_matrix_from_cells(topo: GridTopology, values: np.ndarray) -> np.ndarray:
    cells, weights = edge_quadrants(topo)
    return np.sum(weights * values[cells], axis=0)


def facet_matrix_from_cells(topo: GridTopology, values: np.ndarray) -> np.ndarray:
    out = np.zeros(topo.NF)
    p = np.arange(topo.NP)
    for a in range(3):
        block = slice(a * topo.NP, (a + 1) * topo.NP)
        real = topo.facet_real[block]
        w = np.asarray(topo.spec.widths(a))
        area = np.where(real, topo.area[block], 1.0)
        for s in (0, 1):
            c = topo.coords[:, a] - s
            valid = real & (c >= 0) & (c < len(w))
            cell = np.where(valid, p - s * topo.strides[a], 0)
            out[block] += np.where(valid, w[np.clip(c, 0, len(w) - 1)] / 2 * values[cell], 0.0) / area
    return out


def node_matrix_from_cells(topo: GridTopology, values: np.ndarray) -> np.ndarray:
    out = np.zeros(topo.NP)
    p = np.arange(topo.NP)
    widths = [np.asarray(topo.spec.widths(a)) for a in range(3)]
    for s in np.ndindex(2, 2, 2):
        c = topo.coords - np.asarray(s)
        valid = np.all((c >= 0) & (c < np.asarray(topo.shape)), axis=1)
        c = np.clip(c, 0, np.asarray(topo.shape) - 1)
        octant = np.prod([widths[a][c[:, a]] / 2 for a in range(3)], axis=0)
        cell = np.where(valid, p - np.dot(np.asarray(s), topo.strides), 0)
        out += np.where(valid, octant * values[cell], 0.0)
    return out


_CELL_VALUES = {
    MaterialKind.EPSILON: "eps",
    MaterialKind.SIGMA: "sigma",
    MaterialKind.LAMBDA: "lam",
    MaterialKind.RHOC: "rhoc",
    MaterialKind.NU: "nu",
}


def edge_matrix(topo: GridTopology, fields: CellFields, kind: MaterialKind) -> DiagonalOperator:
    if kind not in (MaterialKind.EPSILON, MaterialKind.SIGMA, MaterialKind.LAMBDA):
        raise InvalidSpecException(f"{kind} is not an edge material")
    values = edge_matrix_from_cells(topo, getattr(fields, _CELL_VALUES[kind]))
    return DiagonalOperator(kind, values, topo.edge_real)


def facet_matrix(topo: GridTopology, fields: CellFields, kind: MaterialKind = MaterialKind.NU) -> DiagonalOperator:
    if kind != MaterialKind.NU:
        raise InvalidSpecException(f"{kind} is not a facet material")
    return DiagonalOperator(kind, facet_matrix_from_cells(topo, fields.nu), topo.facet_real)


def node_matrix(topo: GridTopology, fields: CellFields, kind: MaterialKind = MaterialKind.RHOC) -> DiagonalOperator:
    if kind != MaterialKind.RHOC:
        raise InvalidSpecException(f"{kind} is not a node material")
    return DiagonalOperator(kind, node_matrix_from_cells(topo, fields.rhoc), topo.point_real)


def gauge_matrix(topo: GridTopology, sigma_g: float) -> DiagonalOperator:
    values = edge_matrix_from_cells(topo, np.where(topo.volume_real, sigma_g, 0.0))
    return DiagonalOperator(MaterialKind.SIGMA, values, topo.edge_real)


def assemble_materials(topo: GridTopology, boxes: list[MaterialBox]) -> Materials:
    fields = rasterize(topo, boxes)
    return Materials(
        fields=fields,
        eps=edge_matrix(topo, fields, MaterialKind.EPSILON),
        sigma=edge_matrix(topo, fields, MaterialKind.SIGMA),
        nu=facet_matrix(topo, fields),
        lam=edge_matrix(topo, fields, MaterialKind.LAMBDA) if fields.thermal else None,
        rhoc=node_matrix(topo, fields) if fields.thermal else None,
    )


def sigma_of_T(sigma0, alpha, t0, T):
    """Linear-resistivity conductivity law sigma0 / (1 + alpha (T - T0))."""
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0):
        raise NonphysicalTemperatureException(f"temperature must be positive, got min {np.min(T):g} K")
    denominator = 1 + np.asarray(alpha) * (T - np.asarray(t0))
    if np.any(denominator <= 0):
        raise NonphysicalTemperatureException(
            f"conductivity law breaks down at T = {np.min(T):g} K (1 + alpha (T - T0) <= 0)"
        )
    result = np.asarray(sigma0) / denominator
    return result.item() if result.ndim == 0 else result


def sigma_matrix_at(topo: GridTopology, fields: CellFields, t_edge: np.ndarray) -> np.ndarray:
    """Edge conductances with every quadrant evaluated at the edge's mean temperature."""
    cells, weights = edge_quadrants(topo)
    active = (weights > 0) & (fields.sigma[cells] > 0)
    t = np.broadcast_to(t_edge, cells.shape)
    sigma = np.zeros(cells.shape)
    sigma[active] = sigma_of_T(
        fields.sigma[cells][active], fields.alpha[cells][active], fields.t0[cells][active], t[active]
    )
    return np.sum(weights * sigma, axis=0)


def conductance_terms(topo: GridTopology, fields: CellFields, m: int) -> list[tuple[float, float, float]]:
    """(G0, alpha, T0) terms whose sum G0 / (1 + alpha (T - T0)) is the conductance of edge m."""
    cells, weights = edge_quadrants(topo)
    terms: dict[tuple[float, float], float] = {}
    for cell, weight in zip(cells[:, m], weights[:, m]):
        if weight > 0 and fields.sigma[cell] > 0:
            key = (float(fields.alpha[cell]), float(fields.t0[cell]))
            terms[key] = terms.get(key, 0.0) + float(weight * fields.sigma[cell])
    return [(g0, alpha, t0) for (alpha, t0), g0 in terms.items()]
