import numpy as np
import pytest
import scipy.sparse as sp

from fieldnet.et import (
    DirichletRecord,
    EtBoundarySpec,
    EtInitial,
    ImpressedRecord,
    RobinRecord,
    branch_conductance,
    element_census,
    extract_et,
    stamp_robin,
)
from fieldnet.exceptions import InvalidSpecException
from fieldnet.grid import Axis, GridSpec, Plane, build_topology, operators, plane_points
from fieldnet.materials import MaterialBox, assemble_materials
from fieldnet.mna import assemble, simulate
from fieldnet.netlist import DC, Const, StepExp, Tran, format_expression, parse, serialize

H = 1e-6


@pytest.fixture
def bar():
    return build_topology(GridSpec.uniform(2, 1, 1, H))


def _thermal(bar):
    return assemble_materials(
        bar, [MaterialBox((0, 0, 0), (2 * H, H, H), sigma=1e3, lam=100.0, rhoc=2e6, alpha=4e-3)]
    )


def _electric(bar):
    return assemble_materials(bar, [MaterialBox((0, 0, 0), (2 * H, H, H), sigma=1.0)])


def _drive(bar, waveform=DC(1.0)) -> EtBoundarySpec:
    return EtBoundarySpec(
        electric_dirichlet=(
            DirichletRecord(tuple(plane_points(bar, Plane(Axis.X, 0)).tolist()), waveform),
            DirichletRecord(tuple(plane_points(bar, Plane(Axis.X, 2)).tolist()), DC(0.0)),
        )
    )


def test_thermal_census_matches_extraction(bar) -> None:
    mats = _thermal(bar)
    bcs = _drive(bar, StepExp(1.0, 1e-9))
    netlist = extract_et(bar, mats, bcs, EtInitial())
    assert len(netlist) == element_census(bar, mats, bcs) == 2 * 20 + 20 + 2 * 12 + 8
    names = netlist.by_name()
    m = bar.edge(Axis.X, 0, 0, 0)
    assert {f"BGel{m}", f"Cel{m}", f"Rth{m}", "Cth0", "BLoss0", "VDirEl0"} <= set(names)
    assert names["Cth0"].ic == 293.0
    assert names["Cth0"].value == pytest.approx(2e6 * H**3 / 8)


def test_electric_only_extraction(bar) -> None:
    mats = _electric(bar)
    netlist = extract_et(bar, mats, _drive(bar), EtInitial())
    kinds = {e.name.rstrip("0123456789") for e in netlist}
    assert kinds == {"Rel", "Cel", "VDirEl"}
    assert len(netlist) == element_census(bar, mats, _drive(bar))
    assert netlist.title == "fieldnet electroquasistatic netlist"


def test_resistive_bar_divides_linearly(bar) -> None:
    netlist = extract_et(bar, _electric(bar), _drive(bar), EtInitial())
    netlist.tran = Tran(1e-10, 1e-9)
    middle = [f"V(n{bar.point(1, j, k)})" for j in (0, 1) for k in (0, 1)]
    result = simulate(netlist, probes=middle)
    for probe in middle:
        np.testing.assert_allclose(result[probe], 0.5, rtol=1e-9)


def test_missing_electric_dirichlet_grounds_first_node(bar) -> None:
    netlist = extract_et(bar, _electric(bar), EtBoundarySpec(), EtInitial())
    ground = netlist.by_name()["VGnd"]
    assert (ground.pos, ground.neg) == ("n0", "0")


def test_robin_faces(bar) -> None:
    mats = _thermal(bar)
    robin = RobinRecord(Plane(Axis.Z, 1), h=1e4, ambient=300.0)
    resistors = stamp_robin(bar, robin)
    assert len(resistors) == 6
    assert sum(1 / r.value for r in resistors) == pytest.approx(1e4 * 2 * H * H)
    assert all(r.neg == "ninf" for r in resistors)

    bcs = EtBoundarySpec(electric_dirichlet=_drive(bar).electric_dirichlet, robin=(robin,))
    netlist = extract_et(bar, mats, bcs, EtInitial())
    assert netlist.by_name()["VInf"].waveform == DC(300.0)
    assert len(netlist) == element_census(bar, mats, bcs)
    assert stamp_robin(bar, RobinRecord(Plane(Axis.Z, 1), h=0.0, ambient=300.0)) == []


def test_boundary_validation(bar) -> None:
    twice = EtBoundarySpec(electric_dirichlet=(DirichletRecord((0,), DC(1.0)), DirichletRecord((0, 1), DC(0.0))))
    with pytest.raises(InvalidSpecException, match="two Dirichlet"):
        twice.validate(bar)
    clash = EtBoundarySpec(
        thermal_dirichlet=(DirichletRecord((0,), DC(300.0)),),
        robin=(RobinRecord(Plane(Axis.X, 0), 10.0, 300.0),),
    )
    with pytest.raises(InvalidSpecException, match="Robin"):
        clash.validate(bar)
    two_ambients = EtBoundarySpec(
        robin=(RobinRecord(Plane(Axis.X, 0), 10.0, 300.0), RobinRecord(Plane(Axis.X, 2), 10.0, 310.0))
    )
    with pytest.raises(InvalidSpecException, match="ambient"):
        two_ambients.validate(bar)
    with pytest.raises(InvalidSpecException):
        RobinRecord(Plane(Axis.X, 0), -1.0, 300.0)


def test_thermal_boundaries_need_thermal_data(bar) -> None:
    bcs = EtBoundarySpec(heat=(ImpressedRecord(bar.edge(Axis.X, 0, 0, 0), DC(1e-3)),))
    with pytest.raises(InvalidSpecException, match="thermal"):
        extract_et(bar, _electric(bar), bcs, EtInitial())


def test_impressed_sources_come_in_pairs(bar) -> None:
    m = bar.edge(Axis.Y, 1, 0, 1)
    bcs = EtBoundarySpec(currents=(ImpressedRecord(m, DC(2e-3)),))
    netlist = extract_et(bar, _electric(bar), bcs, EtInitial())
    sources = [e for e in netlist if e.name.startswith("IimpEl")]
    assert [s.waveform for s in sources] == [DC(2e-3), DC(-2e-3)]


def test_branch_conductance_merges_constant_terms() -> None:
    assert branch_conductance([(2.0, 0.0, 293.0), (3.0, 0.0, 293.0)], 0, 1) == Const(5.0)
    expr = branch_conductance([(2.0, 4e-3, 293.0)], 3, 4)
    assert format_expression(expr) == "2/(1+0.004*((V(n3T)+V(n4T))/2-293))"


def test_initial_values_must_be_finite(bar) -> None:
    with pytest.raises(InvalidSpecException):
        EtInitial(temperature=float("nan")).temperatures(bar)
    assert EtInitial(potential=np.arange(12.0)).potentials(bar)[5] == 5.0


def test_electrothermal_netlist_survives_serialization(bar) -> None:
    netlist = extract_et(bar, _thermal(bar), _drive(bar, StepExp(1.0, 1e-9)), EtInitial())
    text = serialize(netlist)
    assert serialize(parse(text)) == text


def test_linear_netlist_matrices_are_the_fit_operators(box3) -> None:
    mats = assemble_materials(
        box3,
        [
            MaterialBox((0, 0, 0), (0.3, 0.3, 0.3), eps=2e-11, sigma=1e3, lam=100.0, rhoc=2e6),
            MaterialBox((0, 0, 0), (0.3, 0.3, 0.1), sigma=5e2, lam=40.0, rhoc=1e6),
        ],
    )
    bcs = EtBoundarySpec(
        electric_dirichlet=(
            DirichletRecord(tuple(plane_points(box3, Plane(Axis.X, 0)).tolist()), DC(1.0)),
            DirichletRecord(tuple(plane_points(box3, Plane(Axis.X, 3)).tolist()), DC(0.0)),
        )
    )
    system = assemble(extract_et(box3, mats, bcs, EtInitial()))
    electric = [system.index[f"V(n{i})"] for i in range(box3.NP)]
    thermal = [system.index[f"V(n{i}T)"] for i in range(box3.NP)]
    edges = box3.real_edges
    grad = operators(box3).G.astype(float)[edges]
    G, C = system.G.toarray(), system.C.toarray()

    def check(block, values) -> None:
        expected = (grad.T @ sp.diags(values[edges]) @ grad).toarray()
        np.testing.assert_allclose(block, expected, rtol=1e-12, atol=1e-12 * np.abs(expected).max())

    check(G[np.ix_(electric, electric)], mats.sigma.values)
    check(C[np.ix_(electric, electric)], mats.eps.values)
    check(G[np.ix_(thermal, thermal)], mats.lam.values)
    np.testing.assert_allclose(C[np.ix_(thermal, thermal)], np.diag(mats.rhoc.values), rtol=1e-12)
    assert not G[np.ix_(electric, thermal)].any() and not G[np.ix_(thermal, electric)].any()
    assert not system.is_linear
