import pytest

from fieldnet.absorbing import AbcSpec, abc_edges, build_abc, characteristic_impedance, stamp_abc
from fieldnet.eh import EdgeSource, extract_eh
from fieldnet.exceptions import InvalidSpecException
from fieldnet.fit import wave_impedance
from fieldnet.grid import Axis, Plane, plane_edges


def test_vacuum_impedance_inside_the_face(box3, vacuum3) -> None:
    top = Plane(Axis.Z, 3)
    for m in (box3.edge(Axis.X, 1, 1, 3), box3.edge(Axis.Y, 2, 1, 3)):
        assert characteristic_impedance(box3, vacuum3, m, top) == pytest.approx(376.73, rel=1e-4)
    assert wave_impedance() == pytest.approx(376.73, rel=1e-4)


def test_impedance_rises_on_the_face_border(box3, vacuum3) -> None:
    top = Plane(Axis.Z, 3)
    border = characteristic_impedance(box3, vacuum3, box3.edge(Axis.X, 1, 0, 3), top)
    assert border == pytest.approx(2 * wave_impedance(), rel=1e-6)


def test_impedance_rejects_foreign_edges(box3, vacuum3) -> None:
    top = Plane(Axis.Z, 3)
    with pytest.raises(InvalidSpecException, match="normal"):
        characteristic_impedance(box3, vacuum3, box3.edge(Axis.Z, 1, 1, 2), top)
    with pytest.raises(InvalidSpecException, match="does not lie"):
        characteristic_impedance(box3, vacuum3, box3.edge(Axis.X, 1, 1, 1), top)


def test_abc_edges_skip_pec(box3) -> None:
    top = Plane(Axis.Z, 3)
    assert len(abc_edges(box3, top)) == 24
    pec = frozenset(plane_edges(box3, Plane(Axis.X, 0)).tolist())
    assert len(abc_edges(box3, top, pec)) == 21
    with pytest.raises(InvalidSpecException, match="boundary"):
        abc_edges(box3, Plane(Axis.Z, 1))


def test_stamp_replaces_capacitor_and_conductance(box3, vacuum3) -> None:
    spec = build_abc(box3, vacuum3, Plane.parse(box3, "zmax"))
    m = spec.edges[0]
    netlist = extract_eh(box3, vacuum3, [EdgeSource(box3.edge(Axis.Z, 1, 1, 1), ac=1.0)], abc=spec)
    names = netlist.by_name()
    assert f"C{m}" not in names
    assert names[f"Rabc{m}"].value == pytest.approx(spec.impedance[0])
    assert f"L{m}" in names
    assert sum(1 for name in names if name.startswith("Rabc")) == 24


def test_stamp_needs_extracted_edges(box3, vacuum3) -> None:
    spec = build_abc(box3, vacuum3, Plane(Axis.Z, 3))
    pec = frozenset([spec.edges[0]])
    netlist = extract_eh(box3, vacuum3, [], pec)
    with pytest.raises(InvalidSpecException, match="no stamp"):
        stamp_abc(netlist, spec)


def test_spec_validation_and_port_resistance() -> None:
    plane = Plane(Axis.X, 0)
    assert AbcSpec(plane, (1, 2), (100.0, 100.0)).port_resistance() == pytest.approx(50.0)
    assert AbcSpec(plane, (), ()).port_resistance() == float("inf")
    with pytest.raises(InvalidSpecException):
        AbcSpec(plane, (1, 2), (100.0,))
    with pytest.raises(InvalidSpecException, match="positive"):
        AbcSpec(plane, (1,), (0.0,))
