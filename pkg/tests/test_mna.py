import numpy as np
import pytest

from fieldnet.exceptions import (
    ExpressionException,
    RequiresInitialConditionException,
    SingularCircuitException,
)
from fieldnet.mna import (
    SimResult,
    _Stepper,
    ac_solve,
    assemble,
    dc_operating_point,
    natural_key,
    read_csv,
    simulate,
    transient_solve,
    write_csv,
)
from fieldnet.netlist import parse

RC = """rc low-pass
V1 in 0 DC 1
R1 in out 1000
C1 out 0 1e-06 ic=0
.options method={method} reltol=1e-4
.tran 1e-05 0.005 uic
.end
"""


def _solve(text: str) -> tuple[dict[str, float], object]:
    system = assemble(parse(text))
    return system.state(dc_operating_point(system)), system


def test_natural_ordering() -> None:
    assert sorted(["n10", "n2", "n1", "n2T", "ninf"], key=natural_key) == ["n1", "n2", "n2T", "n10", "ninf"]
    system = assemble(parse("t\nR1 n10 0 1\nR2 n2 n10 1\nR3 n1 n2 1\nV1 n1 0 DC 1\n"))
    assert system.nodes == ["n1", "n2", "n10"]
    assert system.unknowns == ["V(n1)", "V(n2)", "V(n10)", "I(V1)"]


def test_voltage_divider() -> None:
    state, _ = _solve("t\nV1 in 0 DC 10\nR1 in mid 1000\nR2 mid 0 3000\n")
    assert state["V(mid)"] == pytest.approx(7.5)
    assert state["I(V1)"] == pytest.approx(-2.5e-3)


def test_controlled_sources() -> None:
    state, _ = _solve("t\nV1 in 0 DC 1.5\nR1 in 0 1\nE1 out 0 in 0 2\nR2 out 0 10\nF1 x 0 V1 2\nR3 x 0 100\n")
    assert state["V(out)"] == pytest.approx(3.0)
    assert state["I(V1)"] == pytest.approx(-1.5)
    assert state["V(x)"] == pytest.approx(300.0)


def test_affine_behavioural_source_is_stamped_linearly() -> None:
    state, system = _solve("t\nV1 in 0 DC 2\nB1 0 out I=2*V(in)+1\nR1 out 0 1\n")
    assert system.is_linear
    assert state["V(out)"] == pytest.approx(5.0)


def test_nonlinear_behavioural_source_uses_newton() -> None:
    state, system = _solve("t\nV1 in 0 DC 2\nB1 0 out I=V(in)*V(in)\nR1 out 0 0.5\n")
    assert not system.is_linear
    assert state["V(out)"] == pytest.approx(2.0)


def test_floating_node_is_reported() -> None:
    with pytest.raises(SingularCircuitException) as info:
        assemble(parse("t\nV1 a 0 DC 1\nR1 a 0 1\nR2 b c 1\n"))
    assert info.value.node == "b"


def test_capacitive_cut_needs_initial_conditions() -> None:
    netlist = parse("t\nV1 in 0 DC 1\nC1 in out 1e-06\nC2 out 0 1e-06\n.tran 1e-05 1e-03\n")
    with pytest.raises(RequiresInitialConditionException):
        simulate(netlist)


@pytest.mark.parametrize(
    "option, method, tol", [("gear", "euler", 1e-2), ("trap", "trap", 3e-3), ("modtrap", "trap", 3e-3)]
)
def test_rc_charging(option, method, tol) -> None:
    result = simulate(parse(RC.format(method=option)), probes=["V(out)", "V(in)"])
    t = result.axis
    assert t[0] == 0.0 and t[-1] == pytest.approx(5e-3)
    assert np.all(np.diff(t) > 0)
    np.testing.assert_allclose(result["V(out)"], 1 - np.exp(-t / 1e-3), atol=tol)
    np.testing.assert_allclose(result["V(in)"][1:], 1.0)
    assert result.stats["method"] == method
    assert result.stats["accepted"] > 10
    assert result.stats["kcl_residual"] < 1e-9


def test_rc_starts_from_operating_point_without_uic() -> None:
    netlist = parse(RC.format(method="gear").replace(" uic", "").replace(" ic=0", ""))
    result = simulate(netlist, probes=["V(out)"])
    np.testing.assert_allclose(result["V(out)"], 1.0, rtol=1e-9)


def test_rl_branch_current() -> None:
    netlist = parse("rl\nV1 in 0 DC 1\nR1 in a 10\nL1 a 0 0.001 ic=0\n.options method=trap\n.tran 1e-06 5e-04 uic\n")
    result = simulate(netlist, probes=["I(L1)"])
    expected = 0.1 * (1 - np.exp(-result.axis / 1e-4))
    np.testing.assert_allclose(result["I(L1)"], expected, atol=1e-3)


def test_ground_probe_and_unknown_probe() -> None:
    system = assemble(parse(RC.format(method="gear")))
    assert system.resolve("V(0)") is None
    assert system.resolve("out") == system.index["V(out)"]
    with pytest.raises(ExpressionException):
        system.resolve("V(nowhere)")


def test_unknown_integration_method() -> None:
    with pytest.raises(ExpressionException):
        simulate(parse(RC.format(method="bdf")))


def test_transient_rejects_bad_stop_time() -> None:
    system = assemble(parse(RC.format(method="gear")))
    with pytest.raises(ExpressionException):
        transient_solve(system, 0.0)


def test_ac_low_pass() -> None:
    netlist = parse("ac\nV1 in 0 DC 0 AC 1\nR1 in out 1000\nC1 out 0 1e-06\n.ac dec 10 10 100000\n")
    result = simulate(netlist, probes=["V(out)"], workers=2)
    assert result.kind == "frequency"
    omega = 2 * np.pi * result.axis
    np.testing.assert_allclose(result["V(out)"], 1 / (1 + 1j * omega * 1e-3), rtol=1e-9)
    assert result.stats["failed"] == []


def test_ac_rejects_nonlinear_sources() -> None:
    system = assemble(parse("t\nV1 in 0 DC 2 AC 1\nB1 0 out I=V(in)*V(in)\nR1 out 0 1\n"))
    with pytest.raises(ExpressionException):
        ac_solve(system, [1.0, 2.0])


def test_netlist_without_analysis() -> None:
    with pytest.raises(ExpressionException):
        simulate(parse("t\nV1 a 0 DC 1\nR1 a 0 1\n"))


def test_csv_round_trip_keeps_complex_traces(tmp_path) -> None:
    result = SimResult(
        axis=np.array([1.0, 2.0, 3.0]),
        traces={"V(n1)": np.array([1 + 2j, 3 - 1j, 0.5j]), "phi": np.array([0.1, 0.2, 0.3])},
        kind="frequency",
    )
    path = tmp_path / "sweep.csv"
    write_csv(result, path)
    assert path.read_text().splitlines()[0] == "axis,re(V(n1)),im(V(n1)),phi"
    again = read_csv(path, "frequency")
    assert again.names == ["V(n1)", "phi"]
    np.testing.assert_array_equal(again["V(n1)"], result["V(n1)"])
    np.testing.assert_array_equal(again.axis, result.axis)


def test_operating_point_held_by_a_nonlinear_source_alone() -> None:
    state, system = _solve("t\nI1 0 out DC 2\nB1 out 0 I=V(out)+V(out)*V(out)\n")
    assert not system.is_linear
    assert state["V(out)"] == pytest.approx(1.0)


@pytest.mark.parametrize(
    "text, tstop, exact",
    [
        ("rc\nV1 in 0 DC 1\nR1 in out 1000\nC1 out 0 1e-06 ic=0\n", 1e-3, 1 - np.exp(-1.0)),
        ("lc\nL1 out 0 0.001 ic=0\nC1 out 0 1e-06 ic=1\n", 1e-4, np.cos(1e-4 / np.sqrt(1e-9))),
    ],
)
def test_backward_euler_error_halves_with_the_step(text, tstop, exact) -> None:
    system = assemble(parse(text))
    errors = []
    for h in (tstop / 100, tstop / 200):
        result = transient_solve(system, tstop, 1.0, tstep=h, tmax=h, method="euler", uic=True, probes=["V(out)"])
        assert result.axis[-1] == pytest.approx(tstop)
        errors.append(abs(result["V(out)"][-1] - exact))
    assert errors[0] / errors[1] == pytest.approx(2.0, rel=0.1)


def test_assembly_does_not_depend_on_card_order() -> None:
    text = (
        "ladder\nV1 in 0 DC 1 AC 1\nR1 in a 50\nL1 a b 1e-06 ic=0.1\nC1 b 0 1e-09 ic=2\nL2 b c 1e-06\n"
        "C2 c 0 1e-09\nR2 c 0 50\nE1 d 0 b 0 2\nR3 d 0 10\nF1 e 0 V1 3\nR4 e 0 1\nB1 0 c I=0.001*V(a,b)+1e-4\n"
    )
    reference = assemble(parse(text))
    rng = np.random.default_rng(3)
    for _ in range(5):
        netlist = parse(text)
        netlist.elements = [netlist.elements[i] for i in rng.permutation(len(netlist.elements))]
        system = assemble(netlist)
        assert system.unknowns == reference.unknowns
        np.testing.assert_array_equal(system.G.toarray(), reference.G.toarray())
        np.testing.assert_array_equal(system.C.toarray(), reference.C.toarray())
        np.testing.assert_array_equal(system.b0, reference.b0)
        np.testing.assert_array_equal(system.ac, reference.ac)
        np.testing.assert_array_equal(system.charge, reference.charge)


def test_kcl_residual_gates_accepted_steps() -> None:
    system = assemble(parse(RC.format(method="gear")))
    stepper = _Stepper(system, "euler")
    x = np.zeros(system.size)
    q = stepper.history_term(x, 0.0)
    new = stepper.step(x, q, 1e-5, 1e-5)
    assert stepper.kcl_ratio(new, x, q, 1e-5, 1e-5) < 1e-12
    wrong = new.copy()
    wrong[system.index["V(out)"]] += 0.01
    assert stepper.kcl_ratio(wrong, x, q, 1e-5, 1e-5) > 1e-4

    netlist = parse(RC.format(method="gear").replace(".tran", "B1 out 0 I=1e-4*V(out)*V(out)\n.tran"))
    result = simulate(netlist, probes=["V(out)"])
    assert not assemble(netlist).is_linear
    assert result.stats["kcl_residual"] <= 1e-4


def test_ac_sweep_reuses_one_column_order() -> None:
    netlist = parse(
        "ladder\nV1 in 0 DC 0 AC 1\nR1 in a 50\nL1 a b 1e-06\nC1 b 0 1e-09\nL2 b c 1e-06\nC2 c 0 1e-09\nR2 c 0 50\n"
    )
    system = assemble(netlist)
    frequencies = np.geomspace(1e5, 1e9, 41)
    result = ac_solve(system, frequencies, workers=2)
    assert result.stats["reordered"]
    assert result.stats["failed"] == []
    G, C = system.G.toarray(), system.C.toarray()
    for k, f in enumerate(frequencies):
        expected = np.linalg.solve(G + 2j * np.pi * f * C, system.ac)
        got = np.array([result[name][k] for name in system.unknowns])
        np.testing.assert_allclose(got, expected, rtol=1e-9, atol=1e-12)
