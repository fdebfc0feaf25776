"""Circuit-vs-reference trace comparison.

For every group of observables the relative deviation is

    delta = max_i ||x_cir(t_i) - x_ref(t_i)|| / max_i ||x_ref(t_i)||

over the reference samples t_i, with the circuit traces interpolated onto that axis by
cubic splines. The reference side is always the denominator.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.interpolate

from fieldnet.config import Config
from fieldnet.exceptions import ComparisonException
from fieldnet.fit import find_resonances
from fieldnet.mna import SimResult

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GroupDelta:
    group: str
    delta: float
    tolerance: float
    traces: int
    gated: bool = True

    @property
    def passed(self) -> bool:
        return not self.gated or self.delta <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "tolerance": self.tolerance,
            "traces": self.traces,
            "passed": self.passed,
            "gated": self.gated,
        }


@dataclass(frozen=True)
class PeakRow:
    observable: str
    reference: float
    candidate: float | None
    tolerance: float

    @property
    def error(self) -> float:
        if self.candidate is None:
            return float("inf")
        return abs(self.candidate - self.reference) / self.reference

    @property
    def passed(self) -> bool:
        return self.error <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "observable": self.observable,
            "reference_hz": self.reference,
            "circuit_hz": self.candidate,
            "error": self.error if self.candidate is not None else None,
            "passed": self.passed,
        }


@dataclass
class ComparisonReport:
    kind: str
    deltas: dict[str, GroupDelta] = field(default_factory=dict)
    peaks: list[PeakRow] = field(default_factory=list)
    checks: dict[str, dict] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return (
            all(d.passed for d in self.deltas.values())
            and all(p.passed for p in self.peaks)
            and all(c.get("passed", False) for c in self.checks.values())
        )

    def to_dict(self) -> dict:
        return {
            "ok": self.passed,
            "kind": self.kind,
            "deltas": {name: d.to_dict() for name, d in self.deltas.items()},
            "peaks": [p.to_dict() for p in self.peaks],
            "checks": self.checks,
        }


def _overlap(circuit: SimResult, reference: SimResult) -> np.ndarray:
    """Indices of reference samples inside the circuit axis."""
    lo, hi = circuit.axis[0], circuit.axis[-1]
    slack = 1e-9 * max(abs(hi - lo), abs(hi), 1e-300)
    inside = np.flatnonzero((reference.axis >= lo - slack) & (reference.axis <= hi + slack))
    if not len(inside):
        raise ComparisonException(
            f"axes do not overlap: circuit [{lo:g}, {hi:g}], "
            f"reference [{reference.axis[0]:g}, {reference.axis[-1]:g}]"
        )
    return inside


def resample(circuit: SimResult, reference: SimResult, names: list[str]) -> tuple[np.ndarray, np.ndarray]:
    """Circuit traces on the reference axis (samples x names) and the reference indices used."""
    if len(circuit.axis) == len(reference.axis) and np.allclose(circuit.axis, reference.axis, rtol=1e-12, atol=0):
        return np.column_stack([circuit[n] for n in names]), np.arange(len(reference.axis))
    if circuit.kind != "time":
        raise ComparisonException("frequency results must share the sweep")
    if len(circuit.axis) < 2 or np.any(np.diff(circuit.axis) <= 0):
        raise ComparisonException("circuit axis must be strictly increasing with at least two samples")
    inside = _overlap(circuit, reference)
    at = np.clip(reference.axis[inside], circuit.axis[0], circuit.axis[-1])
    spline = scipy.interpolate.CubicSpline(circuit.axis, np.column_stack([circuit[n] for n in names]), axis=0)
    return spline(at), inside


def relative_delta(candidate: np.ndarray, reference: np.ndarray) -> float:
    """max over samples of ||candidate - reference|| / max over samples of ||reference||."""
    finite = np.all(np.isfinite(candidate), axis=1) & np.all(np.isfinite(reference), axis=1)
    if not np.any(finite):
        raise ComparisonException("no finite samples to compare")
    if not np.all(finite):
        logger.warning(f"Skipping {np.count_nonzero(~finite)} non-finite samples")
    diff = np.linalg.norm(candidate[finite] - reference[finite], axis=1).max()
    scale = np.linalg.norm(reference[finite], axis=1).max()
    if scale == 0:
        return 0.0 if diff == 0 else float("inf")
    return float(diff / scale)


def peak_table(
    circuit: SimResult, reference: SimResult, names: list[tuple[str, str]], tolerance: float, threshold=None
) -> list[PeakRow]:
    rows = []
    for a, b in names:
        found = find_resonances(circuit.axis, circuit[a], threshold)
        for peak in find_resonances(reference.axis, reference[b], threshold):
            nearest = min(found, key=lambda f: abs(f - peak)) if found else None
            rows.append(PeakRow(b, peak, nearest, tolerance))
    return rows


def compare(
    circuit: SimResult,
    reference: SimResult,
    pairs: dict[str, list[tuple[str, str]]],
    tolerance: float | None = None,
    peak_tolerance: float = 1e-3,
) -> ComparisonReport:
    """Compare grouped traces; pairs maps a group name to (circuit name, reference name) pairs.

    Time results are gated on delta. Frequency results are gated on the peak table and
    report delta for information only.
    """
    tolerance = Config.FIELDNET_TOL if tolerance is None else tolerance
    if circuit.kind != reference.kind:
        raise ComparisonException(f"cannot compare a {circuit.kind} result with a {reference.kind} result")
    report = ComparisonReport(kind=reference.kind)
    for group, members in pairs.items():
        missing = [a for a, _ in members if a not in circuit.traces]
        missing += [b for _, b in members if b not in reference.traces]
        if missing:
            raise ComparisonException(f"group {group}: no trace named {missing[0]}")
        candidate, inside = resample(circuit, reference, [a for a, _ in members])
        expected = np.column_stack([reference[b][inside] for _, b in members])
        delta = relative_delta(candidate, expected)
        report.deltas[group] = GroupDelta(group, delta, tolerance, len(members), gated=reference.kind == "time")
        logger.info(f"Group {group}: delta = {delta:.4%} over {len(members)} traces")
    if reference.kind == "frequency":
        names = [pair for members in pairs.values() for pair in members]
        report.peaks = peak_table(circuit, reference, names, peak_tolerance)
        if not report.peaks:
            logger.warning("No resonance peaks found in the reference sweep")
    return report
