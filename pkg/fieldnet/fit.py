"""Reference field solvers working on the FIT matrices directly.

Results use the circuit naming (V(n{i}) for potentials and edge voltages, V(n{i}T) for
temperatures) so traces from both sides can be compared by name.
"""

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.constants
import scipy.signal
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from fieldnet.absorbing import AbcSpec
from fieldnet.config import Config
from fieldnet.eh import EdgeSource
from fieldnet.et import EtBoundarySpec, EtInitial
from fieldnet.exceptions import ConfigurationException, ConvergenceException, InvalidSpecException
from fieldnet.grid import GridTopology, operators
from fieldnet.materials import Materials, sigma_matrix_at
from fieldnet.mna import SimResult
from fieldnet.netlist import NodeKind, node_name

logger = logging.getLogger(__name__)


def refine_axis(axis: np.ndarray, factor: int) -> np.ndarray:
    """Split every interval of a monotone time axis into `factor` equal steps."""
    axis = np.asarray(axis, dtype=float)
    if factor < 1:
        raise ConfigurationException(f"refinement factor must be >= 1, got {factor}")
    if len(axis) < 2:
        return axis.copy()
    fractions = np.arange(factor) / factor
    inner = (axis[:-1, None] + np.diff(axis)[:, None] * fractions).ravel()
    return np.append(inner, axis[-1])


def _laplacian(topo: GridTopology, values: np.ndarray) -> sp.csr_matrix:
    grad = operators(topo).G.astype(float)
    return (grad.T @ sp.diags(values) @ grad).tocsr()


def _eliminate(matrix: sp.csr_matrix, rhs: np.ndarray, fixed: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Solve matrix x = rhs with x[fixed] = values."""
    x = np.zeros(len(rhs))
    x[fixed] = values
    free = np.setdiff1d(np.arange(len(rhs)), fixed)
    reduced = matrix[free][:, free].tocsc()
    b = rhs[free] - matrix[free][:, fixed] @ values
    try:
        x[free] = spla.splu(reduced).solve(b)
    except RuntimeError as e:
        raise ConvergenceException(f"singular field system: {e}") from e
    return x


def joule_power(topo: GridTopology, conductance: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Nodal Joule heat: half of every incident edge's G V^2."""
    grad = operators(topo).G.astype(float)
    voltage = -(grad @ phi)
    power = 0.5 * conductance * voltage**2
    return abs(grad).T @ power


def _edge_temperature(topo: GridTopology, T: np.ndarray) -> np.ndarray:
    return 0.5 * (abs(operators(topo).G.astype(float)) @ T)


def _impressed(topo: GridTopology, records, t: float) -> np.ndarray:
    flow = np.zeros(topo.NE)
    for record in records:
        flow[record.edge] += record.waveform(t)
    return operators(topo).G.astype(float).T @ flow


def et_transient(
    topo: GridTopology,
    mats: Materials,
    bcs: EtBoundarySpec,
    init: EtInitial,
    times: np.ndarray,
    probes: list[str] | None = None,
    tol: float = 1e-10,
    maxiter: int = 50,
) -> SimResult:
    """Backward Euler on potentials and temperatures with Gauss-Seidel coupling per step."""
    bcs.validate(topo)
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0):
        raise InvalidSpecException("FIT time axis must be strictly increasing")
    thermal = mats.thermal
    fields = mats.fields
    mass_el = _laplacian(topo, mats.eps.values)

    electric = bcs.electric_nodes() or {0: None}
    el_fixed = np.array(sorted(electric), dtype=int)

    def el_values(t: float) -> np.ndarray:
        return np.array([0.0 if electric[i] is None else electric[i](t) for i in el_fixed])

    if thermal:
        stiff_th = _laplacian(topo, mats.lam.values)
        heat_cap = mats.rhoc.values
        robin = np.zeros(topo.NP)
        ambient = 0.0
        for record, points, areas in bcs.robin_areas(topo):
            np.add.at(robin, points, record.h * areas)
            ambient = record.ambient if record.h > 0 else ambient
        th_nodes = bcs.thermal_nodes()
        th_fixed = np.array(sorted(th_nodes), dtype=int)

    phi = init.potentials(topo)
    T = init.temperatures(topo)
    phi[el_fixed] = el_values(times[0])
    states = [(phi.copy(), T.copy())]
    iterations = 0

    for t_prev, t in zip(times[:-1], times[1:]):
        dt = t - t_prev
        rhs_el = mass_el @ phi / dt + _impressed(topo, bcs.currents, t)
        new_phi, new_T = phi.copy(), T.copy()
        for sweep in range(1, maxiter + 1):
            conductance = sigma_matrix_at(topo, fields, _edge_temperature(topo, new_T))
            system = _laplacian(topo, conductance) + mass_el / dt
            next_phi = _eliminate(system, rhs_el, el_fixed, el_values(t))
            next_T = new_T
            if thermal:
                matrix = stiff_th + sp.diags(heat_cap / dt + robin)
                rhs = (
                    heat_cap * T / dt
                    + joule_power(topo, conductance, next_phi)
                    + robin * ambient
                    + _impressed(topo, bcs.heat, t)
                )
                values = np.array([th_nodes[i](t) for i in th_fixed])
                next_T = _eliminate(matrix.tocsr(), rhs, th_fixed, values)
            change = max(
                np.max(np.abs(next_phi - new_phi)) / max(np.max(np.abs(next_phi)), 1e-300),
                np.max(np.abs(next_T - new_T)) / max(np.max(np.abs(next_T)), 1e-300),
            )
            new_phi, new_T = next_phi, next_T
            if not thermal or change <= tol:
                break
        else:
            raise ConvergenceException(
                f"electrothermal coupling did not converge at t={t:g}",
                {f"T{i}": float(v) for i, v in enumerate(new_T)},
            )
        iterations += sweep
        phi, T = new_phi, new_T
        states.append((phi.copy(), T.copy()))

    traces = _et_traces(topo, states, probes, thermal)
    logger.info(f"FIT electrothermal run: {len(times) - 1} steps, {iterations} coupling sweeps")
    return SimResult(axis=times, traces=traces, kind="time", stats={"sweeps": iterations})


def _et_traces(topo: GridTopology, states, probes, thermal: bool) -> dict[str, np.ndarray]:
    phi = np.array([s[0] for s in states])
    T = np.array([s[1] for s in states])
    columns = {f"V({node_name(NodeKind.ELECTRIC, i)})": phi[:, i] for i in range(topo.NP)}
    if thermal:
        columns |= {f"V({node_name(NodeKind.THERMAL, i)})": T[:, i] for i in range(topo.NP)}
    if probes is None:
        return columns
    missing = [p for p in probes if p not in columns]
    if missing:
        raise InvalidSpecException(f"unknown FIT probe {missing[0]}")
    return {p: columns[p] for p in probes}


def _active_edges(topo: GridTopology, pec) -> np.ndarray:
    pec = set(pec)
    return np.array([m for m in topo.real_edges.tolist() if m not in pec], dtype=int)


def _source_vector(topo: GridTopology, sources: list[EdgeSource], t: float | None = None) -> np.ndarray:
    """Edge current vector: waveform values at t, or AC magnitudes when t is None."""
    out = np.zeros(topo.NE, dtype=float if t is not None else complex)
    for source in sources:
        out[source.edge] += source.waveform(t) if t is not None else (source.ac or 0.0)
    return out


def _curl_curl(topo: GridTopology, mats: Materials) -> sp.csr_matrix:
    curl = operators(topo).C.astype(float)
    return (curl.T @ sp.diags(mats.nu.values) @ curl).tocsr()


def em_frequency_solve(
    topo: GridTopology,
    mats: Materials,
    sources: list[EdgeSource],
    omega: float,
    pec=frozenset(),
    abc: AbcSpec | None = None,
) -> np.ndarray:
    """Solve (C~ M_nu C - w^2 M_eps + j w M_sigma) e = -j w j_i with PEC edges removed."""
    active = _active_edges(topo, pec)
    diagonal = -(omega**2) * mats.eps.values + 1j * omega * mats.sigma.values
    if abc is not None:
        for m, z in abc.items():
            diagonal[m] = 1j * omega / z
    matrix = (_curl_curl(topo, mats) + sp.diags(diagonal)).tocsr()[active][:, active]
    rhs = -1j * omega * _source_vector(topo, sources)[active]
    e = np.zeros(topo.NE, dtype=complex)
    try:
        e[active] = spla.splu(matrix.tocsc()).solve(rhs)
    except RuntimeError as err:
        raise ConvergenceException(f"field system singular at {omega / (2 * np.pi):g} Hz") from err
    return e


def em_sweep(
    topo: GridTopology,
    mats: Materials,
    sources: list[EdgeSource],
    frequencies,
    probes: list[int],
    pec=frozenset(),
    abc: AbcSpec | None = None,
    workers: int | None = None,
) -> SimResult:
    frequencies = np.asarray(frequencies, dtype=float)

    def solve(frequency: float) -> np.ndarray:
        try:
            e = em_frequency_solve(topo, mats, sources, 2 * np.pi * frequency, pec, abc)
        except ConvergenceException as err:
            logger.warning(str(err))
            return np.full(len(probes), np.nan + 0j)
        return e[probes]

    with ThreadPoolExecutor(max_workers=workers or Config.FIELDNET_WORKERS) as pool:
        rows = np.array(list(pool.map(solve, frequencies))).reshape(len(frequencies), len(probes))
    traces = {f"V({node_name(NodeKind.ELECTRIC, m)})": rows[:, i] for i, m in enumerate(probes)}
    logger.info(f"FIT sweep over {len(frequencies)} frequencies")
    return SimResult(axis=frequencies, traces=traces, kind="frequency")


def cfl_timestep(topo: GridTopology, mats: Materials) -> float:
    cells = topo.real_volumes
    speed = np.sqrt(mats.fields.nu[cells] / mats.fields.eps[cells])
    inverse = sum(1.0 / np.asarray(topo.spec.widths(a))[topo.coords[cells, a]] ** 2 for a in range(3))
    return float(0.99 * np.min(1.0 / (speed * np.sqrt(inverse))))


def em_energy(mats: Materials, e: np.ndarray, b_old: np.ndarray, b_new: np.ndarray) -> float:
    """Leapfrog invariant: electric energy plus the staggered magnetic product."""
    return float(0.5 * e @ (mats.eps.values * e) + 0.5 * b_old @ (mats.nu.values * b_new))


def em_leapfrog(
    topo: GridTopology,
    mats: Materials,
    sources: list[EdgeSource],
    tstop: float,
    dt: float | None = None,
    probes: list[int] | None = None,
    pec=frozenset(),
    abc: AbcSpec | None = None,
    initial: np.ndarray | None = None,
    record_energy: bool = False,
) -> SimResult:
    """Leapfrog in time: b at half steps, e at whole steps, conductive terms centred.

    Terminated edges hold no charge: e_m = z_m (C~ M_nu b - j)_m, solved together with the
    flux update using b averaged over the two half steps.
    """
    limit = cfl_timestep(topo, mats)
    dt = dt or limit
    if dt > limit * (1 + 1e-12):
        raise ConfigurationException(f"time step {dt:g} s exceeds the stability limit {limit:g} s")
    steps = int(np.ceil(tstop / dt - 1e-9))
    curl = operators(topo).C.astype(float)
    curl_t = operators(topo).C_dual.astype(float)
    nu = mats.nu.values
    eps = mats.eps.values
    sigma = mats.sigma.values
    frozen = np.ones(topo.NE, dtype=bool)
    frozen[_active_edges(topo, pec)] = False
    z = np.zeros(topo.NE)
    if abc is not None:
        for m, value in abc.items():
            z[m] = value
    terminated = np.flatnonzero(z)
    interior = ~frozen & (z == 0)
    lhs = eps / dt + sigma / 2
    gain = np.divide(eps / dt - sigma / 2, lhs, out=np.zeros(topo.NE), where=interior)
    inverse = np.divide(1.0, lhs, out=np.zeros(topo.NE), where=interior)

    if len(terminated):
        boundary_curl = curl[:, terminated]
        boundary_drive = curl_t[terminated] @ sp.diags(nu)
        half = (0.5 * dt * (boundary_curl @ sp.diags(z[terminated]) @ boundary_drive)).tocsr()
        implicit = spla.splu(sp.csc_matrix(sp.identity(topo.NF, format="csr") + half))

    e = np.zeros(topo.NE) if initial is None else np.where(interior, initial, 0.0)
    b = np.zeros(topo.NF)
    probes = list(probes) if probes is not None else _active_edges(topo, pec).tolist()
    samples = []
    energy = []
    for n in range(steps + 1):
        b_old = b
        b = b - dt * (curl @ e)
        if len(terminated):
            j = _source_vector(topo, sources, n * dt)[terminated]
            b = implicit.solve(b - half @ b_old + dt * (boundary_curl @ (z[terminated] * j)))
            e[terminated] = z[terminated] * (boundary_drive @ (0.5 * (b + b_old)) - j)
        samples.append(e[probes].copy())
        if n == steps:
            break
        if record_energy:
            energy.append(em_energy(mats, e, b_old, b))
        drive = curl_t @ (nu * b) - _source_vector(topo, sources, (n + 0.5) * dt)
        e = gain * e + inverse * drive
    axis = dt * np.arange(steps + 1)
    stacked = np.array(samples)
    traces = {f"V({node_name(NodeKind.ELECTRIC, m)})": stacked[:, i] for i, m in enumerate(probes)}
    stats = {"dt": dt, "steps": steps}
    if record_energy:
        stats["energy"] = np.array(energy)
    logger.info(f"FIT leapfrog: {steps} steps of {dt:g} s")
    return SimResult(axis=axis, traces=traces, kind="time", stats=stats)


def find_resonances(frequencies, trace, threshold: float | None = None) -> list[float]:
    """Peaks of |trace| above threshold x median, refined by a parabola through three samples."""
    frequencies = np.asarray(frequencies, dtype=float)
    magnitude = np.abs(np.asarray(trace))
    if not len(magnitude):
        return []
    finite = np.where(np.isfinite(magnitude), magnitude, 0.0)
    threshold = Config.FIELDNET_PEAK_THRESHOLD if threshold is None else threshold
    peaks, _ = scipy.signal.find_peaks(finite, height=threshold * np.median(finite))
    out = []
    for p in peaks:
        if 0 < p < len(finite) - 1:
            y0, y1, y2 = finite[p - 1 : p + 2]
            curvature = y0 - 2 * y1 + y2
            shift = 0.5 * (y0 - y2) / curvature if curvature else 0.0
            step = frequencies[p + 1] - frequencies[p] if shift > 0 else frequencies[p] - frequencies[p - 1]
            out.append(float(frequencies[p] + shift * step))
        else:
            out.append(float(frequencies[p]))
    return out


def wave_impedance(eps_r: float = 1.0, mu_r: float = 1.0) -> float:
    return float(np.sqrt(scipy.constants.mu_0 * mu_r / (scipy.constants.epsilon_0 * eps_r)))
