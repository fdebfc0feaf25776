"""Modified nodal analysis: assembly, DC operating point, transient and AC solves.

The unknown vector holds node potentials in natural name order followed by the branch
currents of inductors, voltage sources, VCVS and behavioural voltage sources. The
residual solved at every time point is

    F(x, t) = G x + C dx/dt + N(x, t) - b(t)

where G and C are constant sparse matrices, N collects nonlinear behavioural sources
and b the independent excitations.
"""

import logging
import math
import pathlib
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from fieldnet.behavioural import SourceGroup, compile_template, split_ddt, templatize
from fieldnet.config import Config
from fieldnet.exceptions import (
    ConvergenceException,
    ExpressionException,
    RequiresInitialConditionException,
    SerializationException,
    SingularCircuitException,
)
from fieldnet.netlist import (
    CCCS,
    GROUND,
    VCVS,
    BehaviouralI,
    BehaviouralV,
    Capacitor,
    Element,
    Inductor,
    ISource,
    Netlist,
    Resistor,
    VSource,
    Voltage,
    Waveform,
)

logger = logging.getLogger(__name__)

# Absolute error floors for potentials and branch currents
VNTOL = 1e-6
ABSTOL = 1e-12

# .options method values and the integrator each selects
INTEGRATORS = {"gear": "euler", "trap": "trap", "modtrap": "trap"}


def integrator(option: str) -> str:
    try:
        return INTEGRATORS[option.lower()]
    except KeyError:
        raise ExpressionException(f"unknown integration method {option!r}") from None


def natural_key(name: str) -> tuple:
    return tuple((0, int(chunk), "") if chunk.isdigit() else (1, 0, chunk) for chunk in re.split(r"(\d+)", name))


def _sum_matrix(rows, cols, vals, n: int) -> sp.csr_matrix:
    """Sum COO triplets in a fixed order so the result does not depend on stamping order."""
    rows, cols, vals = np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64), np.asarray(vals, float)
    keep = (rows < n) & (cols < n)
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    if not rows.size:
        return sp.csr_matrix((n, n))
    order = np.lexsort((vals, cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    starts = np.flatnonzero(np.r_[True, (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])])
    return sp.csr_matrix((np.add.reduceat(vals, starts), (rows[starts], cols[starts])), shape=(n, n))


def _sum_vector(rows, vals, n: int, dtype=float) -> np.ndarray:
    rows, vals = np.asarray(rows, dtype=np.int64), np.asarray(vals, dtype=dtype)
    keep = rows < n
    rows, vals = rows[keep], vals[keep]
    out = np.zeros(n, dtype=dtype)
    if rows.size:
        order = np.lexsort((np.real(vals), rows))
        rows, vals = rows[order], vals[order]
        starts = np.flatnonzero(np.r_[True, rows[1:] != rows[:-1]])
        out[rows[starts]] = np.add.reduceat(vals, starts)
    return out


class _Triplets:
    def __init__(self) -> None:
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []

    def add(self, row: int, col: int, value: float) -> None:
        self.rows.append(row)
        self.cols.append(col)
        self.vals.append(value)

    def conductance(self, a: int, b: int, value: float) -> None:
        self.add(a, a, value)
        self.add(b, b, value)
        self.add(a, b, -value)
        self.add(b, a, -value)

    def incidence(self, a: int, b: int, k: int) -> None:
        self.add(a, k, 1.0)
        self.add(b, k, -1.0)
        self.add(k, a, 1.0)
        self.add(k, b, -1.0)


@dataclass(eq=False)
class MnaSystem:
    netlist: Netlist
    nodes: list[str]
    branches: list[str]
    G: sp.csr_matrix
    C: sp.csr_matrix
    b0: np.ndarray
    excitations: list[tuple[Waveform, np.ndarray]]
    ac: np.ndarray
    timed: list[SourceGroup]
    nonlinear: list[SourceGroup]
    charge: np.ndarray
    ics: dict[int, float]

    @property
    def size(self) -> int:
        return len(self.nodes) + len(self.branches)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def is_linear(self) -> bool:
        return not self.nonlinear

    @property
    def has_initial_conditions(self) -> bool:
        return bool(self.ics) or bool(np.any(self.charge))

    @cached_property
    def unknowns(self) -> list[str]:
        return [f"V({n})" for n in self.nodes] + [f"I({b})" for b in self.branches]

    @cached_property
    def index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.unknowns)}

    def resolve(self, probe: str) -> int | None:
        """Map V(node), I(element) or a bare node name to its unknown; None for ground."""
        name = probe if probe[:2].upper() in ("V(", "I(") else f"V({probe})"
        name = name[0].upper() + name[1:]
        if name in ("V(0)", "V(gnd)"):
            return None
        if name not in self.index:
            raise ExpressionException(f"unknown probe {probe}")
        return self.index[name]

    def extended(self, x: np.ndarray) -> np.ndarray:
        return np.append(x, 0.0)

    def excitation(self, t: float) -> np.ndarray:
        b = self.b0.copy()
        for waveform, vector in self.excitations:
            b += waveform(t) * vector
        for group in self.timed:
            offset = group.offset(t)
            for r in range(group.rows.shape[1]):
                b += _sum_vector(group.rows[:, r], -group.signs[:, r] * offset, self.size)
        return b

    def nonlinear_terms(self, x: np.ndarray, t: float) -> np.ndarray:
        out = np.zeros(self.size + 1)
        xe = self.extended(x)
        for group in self.nonlinear:
            value = group.value(xe, t)
            for r in range(group.rows.shape[1]):
                np.add.at(out, group.rows[:, r], group.signs[:, r] * value)
        return out[:-1]

    def nonlinear_jacobian(self, x: np.ndarray, t: float) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        xe = self.extended(x)
        for group in self.nonlinear:
            grad = group.gradient(xe, t)
            for r in range(group.rows.shape[1]):
                for i in range(group.template.n_refs):
                    weight = group.signs[:, r] * grad[:, i]
                    rows += [group.rows[:, r], group.rows[:, r]]
                    cols += [group.pos[:, i], group.neg[:, i]]
                    vals += [weight, -weight]
        n = self.size
        if not rows:
            return sp.csr_matrix((n, n))
        r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        keep = (r < n) & (c < n)
        return sp.csr_matrix((v[keep], (r[keep], c[keep])), shape=(n, n))

    def state(self, x: np.ndarray) -> dict[str, float]:
        return {name: float(value) for name, value in zip(self.unknowns, x)}


def _check_connected(nodes: list[str], elements: list[Element]) -> None:
    n = len(nodes)
    position = {name: i for i, name in enumerate(nodes)}
    position[GROUND] = n
    a = [position[e.pos] for e in elements]
    b = [position[e.neg] for e in elements]
    graph = sp.coo_matrix((np.ones(len(a)), (a, b)), shape=(n + 1, n + 1))
    _, labels = csgraph.connected_components(graph, directed=False)
    floating = [name for name in nodes if labels[position[name]] != labels[n]]
    if floating:
        raise SingularCircuitException(f"node {floating[0]} has no path to ground", floating[0])


def assemble(netlist: Netlist) -> MnaSystem:
    """Build the MNA system of a netlist."""
    names = [e.name for e in netlist]
    if len(set(names)) != len(names):
        raise SerializationException("duplicate element names in netlist")
    found: set[str] = set(netlist.ics)
    for element in netlist:
        found.update(element.nodes)
        if isinstance(element, VCVS):
            found.update((element.ctrl_pos, element.ctrl_neg))
        if isinstance(element, BehaviouralI | BehaviouralV):
            for node in element.expr.walk():
                if isinstance(node, Voltage):
                    found.update((node.pos, node.neg))
    found.discard(GROUND)
    nodes = sorted(found, key=natural_key)
    _check_connected(nodes, netlist.elements)
    branches = sorted((e.name for e in netlist if e.BRANCH), key=natural_key)
    n_nodes = len(nodes)
    size = n_nodes + len(branches)
    node_index = {name: i for i, name in enumerate(nodes)} | {GROUND: size}
    branch_index = {name: n_nodes + i for i, name in enumerate(branches)}

    def ref_index(ref) -> tuple[int, int]:
        kind, a, b = ref
        if kind == "V":
            return node_index[a], node_index[b]
        if a not in branch_index:
            raise ExpressionException(f"I({a}) does not name an element with a branch current")
        return branch_index[a], size

    G, C = _Triplets(), _Triplets()
    b_rows: list[int] = []
    b_vals: list[float] = []
    ac_rows: list[int] = []
    ac_vals: list[float] = []
    charge_rows: list[int] = []
    charge_vals: list[float] = []
    waves: dict[Waveform, tuple[list[int], list[float]]] = {}
    pending: dict[tuple, list] = {}

    def excite(waveform: Waveform, row: int, sign: float) -> None:
        rows, vals = waves.setdefault(waveform, ([], []))
        rows.append(row)
        vals.append(sign)

    for element in netlist:
        a, b = node_index[element.pos], node_index[element.neg]
        k = branch_index.get(element.name, size)
        match element:
            case Resistor(value=value):
                G.conductance(a, b, 1.0 / value)
            case Capacitor(value=value, ic=ic):
                C.conductance(a, b, value)
                if ic is not None:
                    charge_rows.extend((a, b))
                    charge_vals.extend((value * ic, -value * ic))
            case Inductor(value=value, ic=ic):
                G.incidence(a, b, k)
                C.add(k, k, -value)
                if ic is not None:
                    charge_rows.append(k)
                    charge_vals.append(-value * ic)
            case VSource(waveform=waveform, ac=ac):
                G.incidence(a, b, k)
                excite(waveform, k, 1.0)
                if ac is not None:
                    ac_rows.append(k)
                    ac_vals.append(ac)
            case ISource(waveform=waveform, ac=ac):
                excite(waveform, a, -1.0)
                excite(waveform, b, 1.0)
                if ac is not None:
                    ac_rows.extend((a, b))
                    ac_vals.extend((-ac, ac))
            case VCVS(ctrl_pos=cp, ctrl_neg=cn, gain=gain):
                G.incidence(a, b, k)
                G.add(k, node_index[cp], -gain)
                G.add(k, node_index[cn], gain)
            case CCCS(control=control, gain=gain):
                if control not in branch_index:
                    raise ExpressionException(f"{element.name}: control {control} has no branch current")
                G.add(a, branch_index[control], gain)
                G.add(b, branch_index[control], -gain)
            case BehaviouralI() | BehaviouralV():
                if isinstance(element, BehaviouralV):
                    G.incidence(a, b, k)
                    targets = ((k, -1.0), (size, 0.0))
                else:
                    targets = ((a, 1.0), (b, -1.0))
                terms, rest = split_ddt(element.expr)
                for coefficient, arg in terms:
                    key, refs, consts = templatize(arg)
                    template = compile_template(key, len(refs), len(consts))
                    if not template.linear or template.timed:
                        raise ExpressionException(f"{element.name}: DDT argument must be linear in the unknowns")
                    slopes = [float(f(*consts)) for f in template.coefficients]
                    for ref, slope in zip(refs, slopes):
                        p, q = ref_index(ref)
                        for row, sign in targets:
                            C.add(row, p, sign * coefficient * slope)
                            C.add(row, q, -sign * coefficient * slope)
                if rest is not None:
                    key, refs, consts = templatize(rest)
                    members = pending.setdefault((key, len(refs), len(consts)), [])
                    members.append((element.name, consts, [ref_index(r) for r in refs], targets))

    nonlinear: list[SourceGroup] = []
    timed: list[SourceGroup] = []
    for (key, n_refs, n_consts), members in sorted(pending.items()):
        members.sort(key=lambda member: natural_key(member[0]))
        template = compile_template(key, n_refs, n_consts)
        group = SourceGroup(
            template=template,
            names=[m[0] for m in members],
            consts=np.array([m[1] for m in members], dtype=float).reshape(len(members), n_consts),
            pos=np.array([[p for p, _ in m[2]] for m in members], dtype=np.int64).reshape(len(members), n_refs),
            neg=np.array([[q for _, q in m[2]] for m in members], dtype=np.int64).reshape(len(members), n_refs),
            rows=np.array([[row for row, _ in m[3]] for m in members], dtype=np.int64),
            signs=np.array([[sign for _, sign in m[3]] for m in members], dtype=float),
        )
        if not template.linear:
            nonlinear.append(group)
            continue
        coefficients = group.coefficient_matrix()
        for r in range(group.rows.shape[1]):
            for i in range(n_refs):
                weight = group.signs[:, r] * coefficients[:, i]
                G.rows += [*group.rows[:, r], *group.rows[:, r]]
                G.cols += [*group.pos[:, i], *group.neg[:, i]]
                G.vals += [*weight, *(-weight)]
            if not template.timed:
                b_rows += list(group.rows[:, r])
                b_vals += list(-group.signs[:, r] * group.offset(0.0))
        if template.timed:
            timed.append(group)

    excitations = [
        (waveform, _sum_vector(rows, vals, size))
        for waveform, (rows, vals) in sorted(waves.items(), key=lambda item: item[0].card())
    ]
    ics = {node_index[node]: value for node, value in netlist.ics.items() if node != GROUND}
    system = MnaSystem(
        netlist=netlist,
        nodes=nodes,
        branches=branches,
        G=_sum_matrix(G.rows, G.cols, G.vals, size),
        C=_sum_matrix(C.rows, C.cols, C.vals, size),
        b0=_sum_vector(b_rows, b_vals, size),
        excitations=excitations,
        ac=_sum_vector(ac_rows, ac_vals, size, dtype=complex),
        timed=timed,
        nonlinear=nonlinear,
        charge=_sum_vector(charge_rows, charge_vals, size),
        ics=ics,
    )
    logger.info(
        f"Assembled MNA system with {n_nodes} nodes, {len(branches)} branches, "
        f"{sum(len(g) for g in nonlinear)} nonlinear sources in {len(nonlinear)} groups"
    )
    return system


class _StepFailure(Exception):
    pass


def _factor(matrix: sp.spmatrix):
    try:
        return spla.splu(sp.csc_matrix(matrix))
    except RuntimeError as e:
        raise _StepFailure(str(e)) from e


def _column_order(matrix: sp.spmatrix) -> np.ndarray | None:
    """COLAMD column order found by factorising matrix, or None when it is singular."""
    try:
        return np.argsort(spla.splu(sp.csc_matrix(matrix)).perm_c)
    except RuntimeError:
        return None


def _newton(residual, jacobian, x0: np.ndarray, tol: float, maxiter: int) -> tuple[np.ndarray, int]:
    """Damped Newton iteration; the step is halved while the residual grows."""
    x = x0.copy()
    f = residual(x)
    for iteration in range(1, maxiter + 1):
        dx = _factor(jacobian(x)).solve(-f)
        if not np.all(np.isfinite(dx)):
            raise _StepFailure("non-finite Newton update")
        norm = np.max(np.abs(f), initial=0.0)
        damping = 1.0
        while True:
            trial = x + damping * dx
            ftrial = residual(trial)
            if np.all(np.isfinite(ftrial)) and (np.max(np.abs(ftrial), initial=0.0) <= norm or damping < 1 / 32):
                break
            damping /= 2
        x, f = trial, ftrial
        step = np.max(np.abs(damping * dx), initial=0.0)
        if step <= tol * np.max(np.abs(x), initial=0.0) or step == 0.0:
            return x, iteration
    raise _StepFailure(f"Newton did not converge in {maxiter} iterations")


def dc_operating_point(system: MnaSystem, t: float = 0.0) -> np.ndarray:
    """Solve G x + N(x) = b(t) with capacitors open and inductors shorted."""
    x0 = np.zeros(system.size)
    try:
        spla.splu(sp.csc_matrix(system.G + system.nonlinear_jacobian(x0, t)))
    except RuntimeError as e:
        raise RequiresInitialConditionException(
            "DC operating point is singular; give initial conditions or use uic"
        ) from e
    b = system.excitation(t)
    try:
        x, iterations = _newton(
            lambda x: system.G @ x + system.nonlinear_terms(x, t) - b,
            lambda x: system.G + system.nonlinear_jacobian(x, t),
            x0,
            Config.FIELDNET_NEWTON_TOL,
            Config.FIELDNET_NEWTON_MAXITER,
        )
    except _StepFailure as e:
        raise ConvergenceException(f"DC operating point failed: {e}") from e
    logger.debug(f"DC operating point after {iterations} Newton iterations")
    return x


def initial_state(system: MnaSystem, *, uic: bool, h0: float) -> np.ndarray:
    """Initial state for a transient run.

    Without initial conditions this is the DC operating point. Otherwise capacitor and
    inductor ic values are imposed through a backward Euler step of length h0 from the
    state those values define, with .ic nodes clamped by a large Norton conductance.
    """
    if not (uic or system.has_initial_conditions):
        return dc_operating_point(system)
    base = system.G + system.C / h0
    clamp = np.zeros(system.size)
    target = np.zeros(system.size)
    if system.ics:
        big = 1e3 * max(float(np.max(np.abs(base.diagonal()))), 1.0)
        for row, value in system.ics.items():
            clamp[row] = big
            target[row] = big * value
    matrix = base + sp.diags(clamp)
    rhs = system.excitation(0.0) + system.charge / h0 + target
    try:
        x, _ = _newton(
            lambda x: matrix @ x + system.nonlinear_terms(x, 0.0) - rhs,
            lambda x: matrix + system.nonlinear_jacobian(x, 0.0),
            np.zeros(system.size),
            Config.FIELDNET_NEWTON_TOL,
            Config.FIELDNET_NEWTON_MAXITER,
        )
    except _StepFailure as e:
        raise ConvergenceException(f"initial state projection failed: {e}") from e
    return x


@dataclass
class SimResult:
    axis: np.ndarray
    traces: dict[str, np.ndarray]
    kind: str = "time"
    stats: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.traces[name]

    @property
    def names(self) -> list[str]:
        return list(self.traces)


class _Stepper:
    """One implicit step of backward Euler or the trapezoidal rule."""

    def __init__(self, system: MnaSystem, method: str) -> None:
        if method not in ("euler", "trap"):
            raise ExpressionException(f"unknown integration method {method!r}")
        self.system = system
        self.method = method
        self._lu: dict[float, object] = {}
        self._abs_g = abs(system.G)
        self._abs_c = abs(system.C)
        self.newton_iterations = 0

    def alpha(self, h: float) -> float:
        return (2.0 if self.method == "trap" else 1.0) / h

    def history_term(self, x: np.ndarray, t: float) -> np.ndarray:
        """G x + N(x, t) - b(t) at an accepted point; used by the trapezoidal rule."""
        system = self.system
        return system.G @ x + system.nonlinear_terms(x, t) - system.excitation(t)

    def step(self, xp: np.ndarray, qp: np.ndarray, t: float, h: float) -> np.ndarray:
        system = self.system
        alpha = self.alpha(h)
        b = system.excitation(t)
        carry = alpha * (system.C @ xp) - (qp if self.method == "trap" else 0.0)
        if system.is_linear:
            if h not in self._lu:
                if len(self._lu) > 16:
                    self._lu.clear()
                self._lu[h] = _factor(system.G + alpha * system.C)
            self.newton_iterations += 1
            return self._lu[h].solve(b + carry)
        matrix = system.G + alpha * system.C
        x, iterations = _newton(
            lambda x: matrix @ x + system.nonlinear_terms(x, t) - b - carry,
            lambda x: matrix + system.nonlinear_jacobian(x, t),
            xp,
            Config.FIELDNET_NEWTON_TOL,
            Config.FIELDNET_NEWTON_MAXITER,
        )
        self.newton_iterations += iterations
        return x

    def kcl_ratio(self, x: np.ndarray, xp: np.ndarray, qp: np.ndarray, t: float, h: float) -> float:
        system = self.system
        n = system.n_nodes
        if not n:
            return 0.0
        alpha = self.alpha(h)
        dynamic = alpha * (system.C @ (x - xp))
        static = system.G @ x + system.nonlinear_terms(x, t) - system.excitation(t)
        residual = dynamic + static + (qp if self.method == "trap" else 0.0)
        scale = self._abs_g @ np.abs(x) + alpha * (self._abs_c @ np.abs(x - xp)) + np.abs(system.excitation(t))
        worst = float(np.max(scale[:n]))
        return float(np.max(np.abs(residual[:n]))) / worst if worst > 0 else 0.0


def _tolerances(system: MnaSystem, reltol: float, scale: np.ndarray) -> np.ndarray:
    floor = np.full(system.size, ABSTOL)
    floor[: system.n_nodes] = VNTOL
    return reltol * scale + floor


def _divided_difference(times: list[float], states: list[np.ndarray]) -> np.ndarray:
    table = list(states)
    for order in range(1, len(times)):
        table = [(table[i] - table[i + 1]) / (times[i] - times[i + order]) for i in range(len(table) - 1)]
    return table[0]


def _local_error(method: str, times: list[float], states: list[np.ndarray]) -> np.ndarray:
    """Local truncation error of the newest point; history is newest first."""
    h = times[0] - times[1]
    if method == "trap" and len(times) >= 4:
        return h**3 * np.abs(_divided_difference(times[:4], states[:4])) / 2
    hp = times[1] - times[2]
    predicted = states[1] + (states[1] - states[2]) * h / hp
    return np.abs(states[0] - predicted) * h / (h + hp)


def transient_solve(
    system: MnaSystem,
    tstop: float,
    tol: float = 1e-3,
    *,
    tstep: float | None = None,
    tmax: float | None = None,
    method: str = "euler",
    uic: bool = False,
    probes: list[str] | None = None,
) -> SimResult:
    """Adaptive implicit integration from 0 to tstop with local-error control."""
    if not (tstop > 0 and math.isfinite(tstop)):
        raise ExpressionException(f"tstop must be positive, got {tstop}")
    hmax = tmax or tstop / 50
    hmin = tstop * 1e-12
    h = min(tstep or tstop / 100, hmax)
    names = probes if probes is not None else system.unknowns
    columns = [system.resolve(name) for name in names]

    stepper = _Stepper(system, method)
    x = initial_state(system, uic=uic, h0=tstop * 1e-9)
    q = stepper.history_term(x, 0.0)
    times, states = [0.0], [x]
    scale = np.abs(x)
    samples, sample_times = [x], [0.0]
    accepted = rejected = 0
    worst_kcl = 0.0
    t = 0.0

    def reject(reason: str) -> None:
        nonlocal h, rejected
        rejected += 1
        h /= 2
        if h < hmin:
            raise ConvergenceException(f"time step below {hmin:g} s at t={t:g}: {reason}", system.state(states[0]))

    while t < tstop * (1 - 1e-12):
        h = min(h, tstop - t)
        try:
            if len(times) == 1:
                # no history yet: compare one full step with two half steps
                full = stepper.step(x, q, t + h, h)
                half = stepper.step(x, q, t + h / 2, h / 2)
                qhalf = stepper.history_term(half, t + h / 2)
                new = stepper.step(half, qhalf, t + h, h / 2)
                error = np.abs(new - full)
                last = (half, qhalf, h / 2)
            else:
                new = stepper.step(x, q, t + h, h)
                last = (x, q, h)
                error = _local_error(method, [t + h, *times[-3:][::-1]], [new, *states[-3:][::-1]])
        except _StepFailure as e:
            reject(str(e))
            continue
        ratio = float(np.max(error / _tolerances(system, tol, np.maximum(scale, np.abs(new)))))
        if not math.isfinite(ratio) or ratio > 1:
            reject(f"local error ratio {ratio:.3g}")
            continue
        xp, qp, hp = last
        kcl = stepper.kcl_ratio(new, xp, qp, t + h, hp)
        if kcl > tol:
            reject(f"KCL residual ratio {kcl:.3g}")
            continue
        worst_kcl = max(worst_kcl, kcl)
        if len(times) == 1:
            times.append(t + h / 2)
            states.append(half)
            samples.append(half)
            sample_times.append(t + h / 2)
        t += h
        x = new
        q = stepper.history_term(x, t)
        times.append(t)
        states.append(x)
        del times[:-4], states[:-4]
        samples.append(x)
        sample_times.append(t)
        scale = np.maximum(scale, np.abs(x))
        accepted += 1
        if ratio < 0.25:
            h = min(2 * h, hmax)

    axis = np.array(sample_times)
    stacked = np.array(samples)
    traces = {
        name: stacked[:, column] if column is not None else np.zeros(len(samples))
        for name, column in zip(names, columns)
    }
    stats = {
        "accepted": accepted,
        "rejected": rejected,
        "newton_iterations": stepper.newton_iterations,
        "kcl_residual": worst_kcl,
        "method": method,
    }
    logger.info(f"Transient finished: {accepted} steps accepted, {rejected} rejected")
    return SimResult(axis=axis, traces=traces, kind="time", stats=stats)


def ac_solve(
    system: MnaSystem,
    frequencies,
    probes: list[str] | None = None,
    workers: int | None = None,
) -> SimResult:
    """Solve (G + j 2 pi f C) x = b_ac for every frequency."""
    if not system.is_linear:
        raise ExpressionException("AC analysis needs every behavioural source to be linear")
    frequencies = np.asarray(frequencies, dtype=float)
    names = probes if probes is not None else system.unknowns
    columns = [system.resolve(name) for name in names]
    G = sp.csc_matrix(system.G, dtype=complex)
    C = sp.csc_matrix(system.C, dtype=complex)
    failed: list[float] = []
    # G + jwC has one sparsity pattern at every frequency; its columns are ordered once
    order = _column_order(G + 1j * C)

    def solve(frequency: float) -> np.ndarray:
        matrix = sp.csc_matrix(G + 2j * np.pi * frequency * C)
        try:
            if order is None:
                x = spla.splu(matrix).solve(system.ac)
            else:
                x = np.empty(system.size, dtype=complex)
                x[order] = spla.splu(matrix[:, order], permc_spec="NATURAL").solve(system.ac)
        except RuntimeError:
            logger.warning(f"Singular AC system at {frequency:g} Hz")
            failed.append(float(frequency))
            x = np.full(system.size, np.nan + 0j)
        return np.array([x[c] if c is not None else 0j for c in columns])

    with ThreadPoolExecutor(max_workers=workers or Config.FIELDNET_WORKERS) as pool:
        rows = list(pool.map(solve, frequencies))
    stacked = np.array(rows).reshape(len(frequencies), len(names))
    traces = {name: stacked[:, i] for i, name in enumerate(names)}
    logger.info(f"AC sweep over {len(frequencies)} frequencies, {len(failed)} singular")
    stats = {"failed": sorted(failed), "reordered": order is not None}
    return SimResult(axis=frequencies, traces=traces, kind="frequency", stats=stats)


def simulate(netlist: Netlist, probes: list[str] | None = None, workers: int | None = None) -> SimResult:
    """Run the analysis a netlist's directives ask for."""
    system = assemble(netlist)
    if netlist.tran is not None:
        tran = netlist.tran
        return transient_solve(
            system,
            tran.tstop,
            float(netlist.options.get("reltol", "1e-3")),
            tstep=tran.tstep,
            tmax=tran.tmax,
            method=integrator(netlist.options.get("method", "gear")),
            uic=tran.uic,
            probes=probes,
        )
    if netlist.ac is not None:
        return ac_solve(system, netlist.ac.frequencies(), probes, workers)
    raise ExpressionException("netlist has neither .tran nor .ac")


def write_csv(result: SimResult, path: pathlib.Path) -> None:
    header = ["axis"]
    columns = [np.real(result.axis)]
    for name, trace in result.traces.items():
        if np.iscomplexobj(trace):
            header += [f"re({name})", f"im({name})"]
            columns += [trace.real, trace.imag]
        else:
            header.append(name)
            columns.append(trace)
    np.savetxt(path, np.column_stack(columns), delimiter=",", header=",".join(header), comments="", fmt="%.17g")


def read_csv(path: pathlib.Path, kind: str = "time") -> SimResult:
    with open(path) as f:
        header = f.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    traces: dict[str, np.ndarray] = {}
    i = 1
    while i < len(header):
        name = header[i]
        if name.startswith("re(") and i + 1 < len(header) and header[i + 1] == f"im({name[3:-1]})":
            traces[name[3:-1]] = data[:, i] + 1j * data[:, i + 1]
            i += 2
        else:
            traces[name] = data[:, i]
            i += 1
    return SimResult(axis=data[:, 0], traces=traces, kind=kind)
