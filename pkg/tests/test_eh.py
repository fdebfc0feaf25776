import numpy as np
import pytest

from fieldnet.absorbing import build_abc
from fieldnet.eh import (
    EdgeSource,
    coupling_gain,
    coupling_matrix,
    extract_eh,
    reluctance_sum,
    reluctance_sums,
    te_loop,
)
from fieldnet.exceptions import InvalidSpecException
from fieldnet.fit import em_sweep
from fieldnet.grid import Axis, Plane, edge_neighbourhood, plane_edges
from fieldnet.mna import simulate
from fieldnet.netlist import CCCS, DC, Ac, Gaussian


def _pec(topo, faces=("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")) -> frozenset[int]:
    return frozenset(m for face in faces for m in plane_edges(topo, Plane.parse(topo, face)).tolist())


def test_stamp_values(box3, vacuum3) -> None:
    m = box3.edge(Axis.Z, 1, 1, 1)
    source = EdgeSource(m, DC(0.0), 1.0)
    netlist = extract_eh(box3, vacuum3, [source])
    cards = netlist.by_name()
    assert cards[f"L{m}"].value == pytest.approx(1 / reluctance_sum(box3, vacuum3.nu, m))
    assert cards[f"C{m}"].value == pytest.approx(vacuum3.eps[m])
    assert f"R{m}" not in cards
    assert cards[f"I{m}"].ac == 1.0
    couplings = [e for e in netlist if isinstance(e, CCCS) and e.pos == f"n{m}"]
    assert len(couplings) == len(edge_neighbourhood(box3, m).others)


def test_reluctance_sums_agree(box3, vacuum3) -> None:
    sums = reluctance_sums(box3, vacuum3.nu)
    for m in box3.real_edges[::7].tolist():
        assert sums[m] == pytest.approx(reluctance_sum(box3, vacuum3.nu, m))


def test_coupling_gain_matches_matrix(box3, vacuum3) -> None:
    m = box3.edge(Axis.X, 1, 1, 1)
    hood = edge_neighbourhood(box3, m)
    k = hood.facets[0]
    n = hood.others_in(k)[0]
    matrix = coupling_matrix(box3, vacuum3.nu)
    total = reluctance_sum(box3, vacuum3.nu, n)
    assert coupling_gain(box3, vacuum3.nu, m, k, n) == pytest.approx(matrix[m, n] / total)
    with pytest.raises(InvalidSpecException):
        coupling_gain(box3, vacuum3.nu, m, k, m + 1000)


def test_pec_edges_have_no_stamps(box3, vacuum3) -> None:
    pec = _pec(box3)
    m = box3.edge(Axis.Z, 1, 1, 1)
    netlist = extract_eh(box3, vacuum3, [EdgeSource(m, ac=1.0)], pec)
    stamped = {int(e.name[1:]) for e in netlist if e.name[0] == "L"}
    assert stamped.isdisjoint(pec)
    assert stamped == set(box3.real_edges.tolist()) - pec
    assert all(int(e.control[1:]) not in pec for e in netlist if isinstance(e, CCCS))


def test_invalid_sources(box3, vacuum3) -> None:
    pec = _pec(box3, ("zmin",))
    with pytest.raises(InvalidSpecException, match="PEC"):
        extract_eh(box3, vacuum3, [EdgeSource(min(pec))], pec)
    with pytest.raises(InvalidSpecException, match="phantom"):
        extract_eh(box3, vacuum3, [EdgeSource(box3.edge(Axis.X, 3, 0, 0))])


def test_repeated_sources_get_suffixes(box3, vacuum3) -> None:
    m = box3.edge(Axis.Y, 1, 1, 1)
    pulse = Gaussian(1.0, 2e-9, 5e-10)
    netlist = extract_eh(box3, vacuum3, [EdgeSource(m, pulse), EdgeSource(m, pulse.scaled(2.0))])
    assert {f"I{m}", f"I{m}_1"} <= set(netlist.by_name())


def test_te_loop_circulates(box3) -> None:
    loop = te_loop(box3, 1, 1, 1, DC(1.0))
    assert [s.ac for s in loop] == [1.0, 1.0, -1.0, -1.0]
    assert [box3.edge_axis(s.edge) for s in loop] == [Axis.X, Axis.Y, Axis.X, Axis.Y]
    assert loop[2].waveform == DC(-1.0)


@pytest.mark.parametrize("absorbing", [False, True])
def test_circuit_sweep_reproduces_field_solution(box3, vacuum3, absorbing) -> None:
    faces = ("xmin", "xmax", "ymin", "ymax", "zmin") if absorbing else ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")
    pec = _pec(box3, faces)
    abc = build_abc(box3, vacuum3, Plane(Axis.Z, 3), pec) if absorbing else None
    m = box3.edge(Axis.Z, 1, 1, 1)
    sources = [EdgeSource(m, ac=1.0)]
    probes = [m, box3.edge(Axis.Z, 2, 1, 1), box3.edge(Axis.X, 1, 1, 2)]
    netlist = extract_eh(box3, vacuum3, sources, pec, abc)
    netlist.ac = Ac("lin", 5, 1e8, 5e8)
    circuit = simulate(netlist, probes=[f"V(n{p})" for p in probes])
    reference = em_sweep(box3, vacuum3, sources, netlist.ac.frequencies(), probes, pec, abc, workers=1)
    for p in probes:
        np.testing.assert_allclose(circuit[f"V(n{p})"], reference[f"V(n{p})"], rtol=1e-8, atol=1e-12)
