import numpy as np
import pytest
import scipy.constants

from fieldnet.absorbing import AbcSpec, abc_edges
from fieldnet.eh import EdgeSource
from fieldnet.et import DirichletRecord, EtBoundarySpec, EtInitial
from fieldnet.exceptions import ConfigurationException, InvalidSpecException
from fieldnet.fit import (
    cfl_timestep,
    em_leapfrog,
    em_sweep,
    et_transient,
    find_resonances,
    joule_power,
    refine_axis,
    wave_impedance,
)
from fieldnet.grid import Axis, GridSpec, Plane, build_topology, plane_edges, plane_points
from fieldnet.materials import MaterialBox, assemble_materials
from fieldnet.mna import simulate
from fieldnet.netlist import DC, Gaussian, parse

H = 1e-6


@pytest.fixture
def bar():
    return build_topology(GridSpec.uniform(2, 1, 1, H))


def _drive(bar, volts: float = 1.0) -> EtBoundarySpec:
    return EtBoundarySpec(
        electric_dirichlet=(
            DirichletRecord(tuple(plane_points(bar, Plane(Axis.X, 0)).tolist()), DC(volts)),
            DirichletRecord(tuple(plane_points(bar, Plane(Axis.X, 2)).tolist()), DC(0.0)),
        )
    )


def _walls(topo) -> frozenset[int]:
    faces = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")
    return frozenset(m for face in faces for m in plane_edges(topo, Plane.parse(topo, face)).tolist())


def test_refine_axis() -> None:
    np.testing.assert_allclose(refine_axis([0.0, 1.0, 3.0], 2), [0.0, 0.5, 1.0, 2.0, 3.0])
    np.testing.assert_array_equal(refine_axis([0.0, 1.0], 1), [0.0, 1.0])
    np.testing.assert_array_equal(refine_axis([2.0], 3), [2.0])
    with pytest.raises(ConfigurationException):
        refine_axis([0.0, 1.0], 0)


def test_lc_tank_resonance() -> None:
    netlist = parse("tank\nI1 a 0 DC 0 AC 1\nR1 a 0 10000\nL1 a 0 1e-06\nC1 a 0 1e-09\n.ac lin 2001 4e6 6e6\n")
    result = simulate(netlist, probes=["V(a)"], workers=2)
    peaks = find_resonances(result.axis, result["V(a)"])
    assert len(peaks) == 1
    assert peaks[0] == pytest.approx(1 / (2 * np.pi * np.sqrt(1e-15)), rel=1e-3)


def test_find_resonances_edge_cases() -> None:
    assert find_resonances([], []) == []
    axis = np.linspace(1.0, 2.0, 11)
    assert find_resonances(axis, np.ones(11)) == []
    spike = np.ones(11)
    spike[4] = 100.0
    assert find_resonances(axis, spike) == [pytest.approx(1.4)]


def test_cfl_timestep_in_vacuum(box3, vacuum3) -> None:
    expected = 0.99 * 0.1 / (np.sqrt(3) * scipy.constants.c)
    assert cfl_timestep(box3, vacuum3) == pytest.approx(expected, rel=1e-6)


def test_leapfrog_conserves_energy_in_a_closed_cavity(box3, vacuum3) -> None:
    pec = _walls(box3)
    initial = np.random.default_rng(7).normal(size=box3.NE)
    tstop = 1000 * cfl_timestep(box3, vacuum3)
    result = em_leapfrog(box3, vacuum3, [], tstop, pec=pec, initial=initial, record_energy=True)
    energy = result.stats["energy"]
    assert result.stats["steps"] == 1000
    assert np.ptp(energy) <= 1e-10 * energy[0]
    for name, trace in result.traces.items():
        assert int(name[3:-1]) not in pec
        assert np.all(np.isfinite(trace))


def test_leapfrog_with_absorbing_face_stays_bounded(box3, vacuum3) -> None:
    faces = ("xmin", "xmax", "ymin", "ymax", "zmin")
    pec = frozenset(m for face in faces for m in plane_edges(box3, Plane.parse(box3, face)).tolist())
    top = Plane.parse(box3, "zmax")
    terminated = abc_edges(box3, top, pec)
    assert len(terminated) == 12
    abc = AbcSpec(top, tuple(terminated.tolist()), (wave_impedance(),) * len(terminated))
    dt = 0.5 * cfl_timestep(box3, vacuum3)
    initial = np.random.default_rng(11).normal(size=box3.NE)
    result = em_leapfrog(box3, vacuum3, [], 2000 * dt, dt=dt, pec=pec, abc=abc, initial=initial)
    interior = [name for name in result.names if int(name[3:-1]) not in terminated]
    eps = vacuum3.eps.values
    energy = sum(0.5 * eps[int(name[3:-1])] * result[name] ** 2 for name in interior)
    assert np.all(np.isfinite(energy))
    assert np.max(energy) <= 2 * energy[0]
    assert energy[-1] < energy[0]
    for m in terminated.tolist():
        assert np.all(np.isfinite(result[f"V(n{m})"]))


def test_leapfrog_rejects_unstable_step(box3, vacuum3) -> None:
    with pytest.raises(ConfigurationException, match="stability"):
        em_leapfrog(box3, vacuum3, [], 1e-9, dt=2 * cfl_timestep(box3, vacuum3))


def test_leapfrog_source_excites_its_edge(box3, vacuum3) -> None:
    m = box3.edge(Axis.Z, 1, 1, 1)
    pulse = Gaussian(1.0, 1e-9, 2e-10)
    result = em_leapfrog(box3, vacuum3, [EdgeSource(m, pulse)], 2e-9, probes=[m], pec=_walls(box3))
    trace = result[f"V(n{m})"]
    assert trace[0] == 0.0
    assert np.max(np.abs(trace)) > 0.0


def test_em_sweep_traces(box3, vacuum3) -> None:
    m = box3.edge(Axis.Z, 1, 1, 1)
    result = em_sweep(box3, vacuum3, [EdgeSource(m, ac=1.0)], [1e8, 2e8], [m], _walls(box3), workers=1)
    assert result.kind == "frequency"
    assert result.names == [f"V(n{m})"]
    assert np.all(np.abs(result[f"V(n{m})"]) > 0)


def test_resistive_bar_settles_to_the_linear_profile(bar) -> None:
    mats = assemble_materials(bar, [MaterialBox((0, 0, 0), (2 * H, H, H), sigma=1.0)])
    times = np.linspace(0.0, 1e-9, 11)
    middle = [f"V(n{bar.point(1, j, k)})" for j in (0, 1) for k in (0, 1)]
    result = et_transient(bar, mats, _drive(bar), EtInitial(), times, middle)
    for name in middle:
        assert result[name][-1] == pytest.approx(0.5, rel=1e-9)


def test_insulated_bar_stores_all_joule_heat(bar) -> None:
    mats = assemble_materials(bar, [MaterialBox((0, 0, 0), (2 * H, H, H), sigma=1e3, lam=100.0, rhoc=2e6)])
    times = np.linspace(0.0, 1e-8, 6)
    result = et_transient(bar, mats, _drive(bar), EtInitial(), times)
    phi = np.column_stack([result[f"V(n{i})"] for i in range(bar.NP)])
    T = np.column_stack([result[f"V(n{i}T)"] for i in range(bar.NP)])
    heat_cap = mats.rhoc.values
    dt = times[1] - times[0]
    for k in range(1, len(times)):
        stored = np.sum(heat_cap * (T[k] - T[k - 1]))
        assert stored == pytest.approx(dt * np.sum(joule_power(bar, mats.sigma.values, phi[k])), rel=1e-9)
    assert np.all(T[-1] > 293.0)


def test_et_transient_validates_inputs(bar) -> None:
    mats = assemble_materials(bar, [MaterialBox((0, 0, 0), (2 * H, H, H), sigma=1.0)])
    with pytest.raises(InvalidSpecException, match="increasing"):
        et_transient(bar, mats, _drive(bar), EtInitial(), np.array([0.0, 1e-9, 1e-9]))
    with pytest.raises(InvalidSpecException, match="unknown FIT probe"):
        et_transient(bar, mats, _drive(bar), EtInitial(), np.array([0.0, 1e-9]), ["V(n1T)"])


def test_joule_power_splits_edge_heat_between_end_points(bar) -> None:
    phi = bar.coords[:, Axis.X].astype(float)
    power = joule_power(bar, bar.edge_real.astype(float), phi)
    assert np.sum(power) == pytest.approx(8.0)
    assert power[bar.point(1, 0, 0)] == pytest.approx(1.0)
    assert power[bar.point(0, 0, 0)] == pytest.approx(0.5)


def test_wave_impedance() -> None:
    assert wave_impedance() == pytest.approx(376.730313, rel=1e-8)
    assert wave_impedance(eps_r=4.0) == pytest.approx(wave_impedance() / 2)
