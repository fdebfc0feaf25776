"""Netlist representation, SPICE-dialect serializer and subset parser.

The dialect is the LTspice-compatible subset the extractors emit:

    Rname n+ n- value
    Cname n+ n- value [ic=v]        Lname n+ n- value [ic=i]
    Vname n+ n- <waveform> [AC mag] Iname n+ n- <waveform> [AC mag]
    Ename n+ n- nc+ nc- gain        Fname n+ n- <element> gain
    Bname n+ n- I=<expr> | V=<expr>

with the directives .tran, .ac, .ic, .options and .end. The first line is the title.
`.options method` takes the LTspice integrators trap, modtrap and gear.
"""

import abc
import enum
import logging
import math
import re
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from fieldnet.exceptions import ExpressionException, NetlistParseException, SerializationException

logger = logging.getLogger(__name__)

GROUND = "0"
GROUND_ALIASES = frozenset({"0", "gnd"})


def format_number(value: float) -> str:
    value = float(value)
    if not math.isfinite(value):
        raise SerializationException(f"cannot write non-finite number {value}")
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def normalize_node(name: str) -> str:
    return GROUND if name.lower() in GROUND_ALIASES else name


class NodeKind(enum.StrEnum):
    ELECTRIC = "electric"
    THERMAL = "thermal"
    AUXILIARY = "auxiliary"
    AMBIENT = "ambient"
    GROUND = "ground"


def node_name(kind: NodeKind, index: int | None = None, suffix: str = "", position: int | None = None) -> str:
    match kind:
        case NodeKind.ELECTRIC:
            return f"n{index}"
        case NodeKind.THERMAL:
            return f"n{index}T"
        case NodeKind.AUXILIARY:
            return f"n{suffix}{index}" if position is None else f"n{suffix}{index}k{position}"
        case NodeKind.AMBIENT:
            return "ninf"
        case NodeKind.GROUND:
            return GROUND


# Expressions


class Expr(abc.ABC):
    precedence: ClassVar[int] = 4

    def __add__(self, other) -> Expr:
        return BinOp("+", self, lift(other))

    def __radd__(self, other) -> Expr:
        return BinOp("+", lift(other), self)

    def __sub__(self, other) -> Expr:
        return BinOp("-", self, lift(other))

    def __rsub__(self, other) -> Expr:
        return BinOp("-", lift(other), self)

    def __mul__(self, other) -> Expr:
        return BinOp("*", self, lift(other))

    def __rmul__(self, other) -> Expr:
        return BinOp("*", lift(other), self)

    def __truediv__(self, other) -> Expr:
        return BinOp("/", self, lift(other))

    def __rtruediv__(self, other) -> Expr:
        return BinOp("/", lift(other), self)

    def __neg__(self) -> Expr:
        return Neg(self)

    def __str__(self) -> str:
        return format_expression(self)

    def walk(self):
        yield self


def lift(value) -> Expr:
    if isinstance(value, Expr):
        return value
    return Const(float(value))


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float

    @property
    def precedence(self) -> int:
        return 3 if self.value < 0 else 4


@dataclass(frozen=True, eq=True)
class Voltage(Expr):
    pos: str
    neg: str = GROUND

    def __post_init__(self):
        object.__setattr__(self, "pos", normalize_node(self.pos))
        object.__setattr__(self, "neg", normalize_node(self.neg))


@dataclass(frozen=True, eq=True)
class Current(Expr):
    element: str


@dataclass(frozen=True, eq=True)
class Time(Expr):
    pass


@dataclass(frozen=True, eq=True)
class Ddt(Expr):
    arg: Expr

    def walk(self):
        yield self
        yield from self.arg.walk()


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    arg: Expr
    precedence: ClassVar[int] = 3

    def walk(self):
        yield self
        yield from self.arg.walk()


@dataclass(frozen=True, eq=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    def __post_init__(self):
        if self.op not in "+-*/" or len(self.op) != 1:
            raise ExpressionException(f"unknown operator {self.op!r}")

    @property
    def precedence(self) -> int:
        return 1 if self.op in "+-" else 2

    def walk(self):
        yield self
        yield from self.left.walk()
        yield from self.right.walk()


def format_expression(expr: Expr) -> str:
    match expr:
        case Const(value=value):
            return format_number(value)
        case Voltage(pos=pos, neg=neg):
            return f"V({pos})" if neg == GROUND else f"V({pos},{neg})"
        case Current(element=element):
            return f"I({element})"
        case Time():
            return "time"
        case Ddt(arg=arg):
            return f"DDT({format_expression(arg)})"
        case Neg(arg=arg):
            text = format_expression(arg)
            if arg.precedence < 3 or (isinstance(arg, Const) and arg.value >= 0):
                text = f"({text})"
            return f"-{text}"
        case BinOp(op=op, left=left, right=right):
            lhs, rhs = format_expression(left), format_expression(right)
            if left.precedence < expr.precedence:
                lhs = f"({lhs})"
            if right.precedence <= expr.precedence or right.precedence == 3:
                rhs = f"({rhs})"
            return f"{lhs}{op}{rhs}"
    raise ExpressionException(f"cannot format {expr!r}")


_TOKEN = re.compile(
    r"\s*(?:(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/(),]))"
)


class _ExpressionParser:
    def __init__(self, text: str) -> None:
        self.text = text
        self.tokens: list[tuple[str, str]] = []
        pos = 0
        while pos < len(text):
            found = _TOKEN.match(text, pos)
            if not found or found.end() == pos:
                if text[pos:].strip() == "":
                    break
                raise ExpressionException(f"unexpected character {text[pos]!r} in {text!r}")
            pos = found.end()
            kind = found.lastgroup
            self.tokens.append((kind, found[kind]))
        self.pos = 0

    def peek(self) -> tuple[str, str] | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self, value: str | None = None) -> tuple[str, str]:
        token = self.peek()
        if token is None or (value is not None and token[1] != value):
            raise ExpressionException(f"expected {value or 'a token'} in {self.text!r}")
        self.pos += 1
        return token

    def parse(self) -> Expr:
        if not self.tokens:
            raise ExpressionException("empty expression")
        expr = self.expression()
        if self.peek() is not None:
            raise ExpressionException(f"trailing input {self.peek()[1]!r} in {self.text!r}")
        return expr

    def expression(self) -> Expr:
        expr = self.term()
        while (token := self.peek()) and token[1] in ("+", "-"):
            self.take()
            expr = BinOp(token[1], expr, self.term())
        return expr

    def term(self) -> Expr:
        expr = self.unary()
        while (token := self.peek()) and token[1] in ("*", "/"):
            self.take()
            expr = BinOp(token[1], expr, self.unary())
        return expr

    def unary(self) -> Expr:
        token = self.peek()
        if token and token[1] == "-":
            self.take()
            following = self.peek()
            if following and following[0] == "number":
                self.take()
                return Const(-float(following[1]))
            return Neg(self.unary())
        return self.primary()

    def _reference(self) -> str:
        kind, value = self.take()
        if kind not in ("name", "number"):
            raise ExpressionException(f"expected a node or element name in {self.text!r}")
        return value

    def primary(self) -> Expr:
        kind, value = self.take()
        if kind == "number":
            return Const(float(value))
        if kind == "op" and value == "(":
            expr = self.expression()
            self.take(")")
            return expr
        if kind != "name":
            raise ExpressionException(f"unexpected {value!r} in {self.text!r}")
        match value.upper():
            case "TIME":
                return Time()
            case "V":
                self.take("(")
                pos = normalize_node(self._reference())
                neg = GROUND
                if self.peek() and self.peek()[1] == ",":
                    self.take()
                    neg = normalize_node(self._reference())
                self.take(")")
                return Voltage(pos, neg)
            case "I":
                self.take("(")
                element = self._reference()
                self.take(")")
                return Current(element)
            case "DDT":
                self.take("(")
                arg = self.expression()
                self.take(")")
                return Ddt(arg)
        raise ExpressionException(f"unknown identifier {value!r} in {self.text!r}")


def parse_expression(text: str) -> Expr:
    return _ExpressionParser(text).parse()


# Waveforms


class Waveform(abc.ABC):
    @abc.abstractmethod
    def __call__(self, t):
        pass

    @abc.abstractmethod
    def card(self) -> str:
        pass

    @abc.abstractmethod
    def scaled(self, factor: float) -> Waveform:
        pass


def _check_finite(*values: float) -> None:
    if not all(math.isfinite(v) for v in values):
        raise SerializationException("waveform parameters must be finite")


@dataclass(frozen=True)
class DC(Waveform):
    value: float

    def __post_init__(self):
        _check_finite(self.value)

    def __call__(self, t):
        return self.value + 0.0 * np.asarray(t, dtype=float)

    def card(self) -> str:
        return f"DC {format_number(self.value)}"

    def scaled(self, factor: float) -> DC:
        return DC(self.value * factor)


@dataclass(frozen=True)
class StepExp(Waveform):
    """amplitude * (1 - exp(-t / tau))"""

    amplitude: float
    tau: float

    # EXP() second delay; large enough that the fall segment never starts
    NEVER: ClassVar[float] = 1e30

    def __post_init__(self):
        _check_finite(self.amplitude, self.tau)
        if self.tau <= 0:
            raise SerializationException("time constant must be positive")

    def __call__(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        return self.amplitude * -np.expm1(-t / self.tau)

    def card(self) -> str:
        tau = format_number(self.tau)
        return f"EXP(0 {format_number(self.amplitude)} 0 {tau} {format_number(self.NEVER)} {tau})"

    def scaled(self, factor: float) -> StepExp:
        return StepExp(self.amplitude * factor, self.tau)


@dataclass(frozen=True)
class Gaussian(Waveform):
    amplitude: float
    t0: float
    sigma: float

    def __post_init__(self):
        _check_finite(self.amplitude, self.t0, self.sigma)
        if self.sigma <= 0:
            raise SerializationException("pulse width must be positive")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.amplitude * np.exp(-((t - self.t0) ** 2) / (2 * self.sigma**2))

    def samples(self) -> PWL:
        """PWL over t0 +- 6 sigma in sigma/20 steps; interpolation error stays below 4e-4 of the peak."""
        times = self.t0 + self.sigma * np.arange(-120, 121) / 20
        times = np.r_[0.0, times[times > 0]]
        return PWL(tuple(zip(times.tolist(), self(times).tolist())))

    def card(self) -> str:
        return self.samples().card()

    def scaled(self, factor: float) -> Gaussian:
        return Gaussian(self.amplitude * factor, self.t0, self.sigma)


@dataclass(frozen=True)
class Sine(Waveform):
    amplitude: float
    frequency: float

    def __post_init__(self):
        _check_finite(self.amplitude, self.frequency)

    def __call__(self, t):
        return self.amplitude * np.sin(2 * np.pi * self.frequency * np.asarray(t, dtype=float))

    def card(self) -> str:
        return f"SIN(0 {format_number(self.amplitude)} {format_number(self.frequency)})"

    def scaled(self, factor: float) -> Sine:
        return Sine(self.amplitude * factor, self.frequency)


@dataclass(frozen=True)
class PWL(Waveform):
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.points:
            raise SerializationException("PWL needs at least one point")
        _check_finite(*(v for point in self.points for v in point))
        times = [t for t, _ in self.points]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise SerializationException("PWL times must increase")

    def __call__(self, t):
        times, values = zip(*self.points)
        return np.interp(np.asarray(t, dtype=float), times, values)

    def card(self) -> str:
        return "PWL(" + " ".join(f"{format_number(t)} {format_number(v)}" for t, v in self.points) + ")"

    def scaled(self, factor: float) -> PWL:
        return PWL(tuple((t, v * factor) for t, v in self.points))


_WAVE = re.compile(r"^(?P<kind>EXP|SIN|PWL)\s*\((?P<args>[^)]*)\)$", re.IGNORECASE)


def parse_waveform(text: str) -> Waveform:
    text = text.strip()
    tokens = text.split()
    try:
        if tokens and tokens[0].upper() == "DC" and len(tokens) == 2:
            return DC(float(tokens[1]))
        if len(tokens) == 1 and not _WAVE.match(text):
            return DC(float(tokens[0]))
        found = _WAVE.match(text)
        if not found:
            raise ExpressionException(f"unknown waveform {text!r}")
        args = [float(a) for a in found["args"].replace(",", " ").split()]
    except ValueError as e:
        raise ExpressionException(f"malformed waveform {text!r}") from e
    match found["kind"].upper(), args:
        case "EXP", [0.0, amplitude, 0.0, tau, never, tau2] if tau == tau2 and never >= StepExp.NEVER:
            return StepExp(amplitude, tau)
        case "SIN", [0.0, amplitude, frequency]:
            return Sine(amplitude, frequency)
        case "PWL", _ if args and len(args) % 2 == 0:
            return PWL(tuple(zip(args[::2], args[1::2])))
    raise ExpressionException(f"unsupported waveform parameters {text!r}")


# Elements


@dataclass(frozen=True)
class Element:
    name: str
    pos: str
    neg: str

    LETTER: ClassVar[str] = ""
    # element carries a branch current unknown in MNA
    BRANCH: ClassVar[bool] = False

    def __post_init__(self):
        if not self.name or self.name[0].upper() != self.LETTER:
            raise SerializationException(f"{type(self).__name__} name {self.name!r} must start with {self.LETTER}")
        object.__setattr__(self, "pos", normalize_node(self.pos))
        object.__setattr__(self, "neg", normalize_node(self.neg))

    @property
    def nodes(self) -> tuple[str, str]:
        return (self.pos, self.neg)

    def card(self) -> str:
        return f"{self.name} {self.pos} {self.neg} {self.tail()}"

    def tail(self) -> str:
        raise NotImplementedError


def _check_passive(element, value: float) -> None:
    if not (math.isfinite(value) and value > 0):
        raise SerializationException(f"{element.name}: value must be positive and finite, got {value}")


@dataclass(frozen=True)
class Resistor(Element):
    value: float
    LETTER: ClassVar[str] = "R"

    def __post_init__(self):
        super().__post_init__()
        _check_passive(self, self.value)

    def tail(self) -> str:
        return format_number(self.value)


@dataclass(frozen=True)
class Capacitor(Element):
    value: float
    ic: float | None = None
    LETTER: ClassVar[str] = "C"

    def __post_init__(self):
        super().__post_init__()
        _check_passive(self, self.value)

    def tail(self) -> str:
        ic = "" if self.ic is None else f" ic={format_number(self.ic)}"
        return f"{format_number(self.value)}{ic}"


@dataclass(frozen=True)
class Inductor(Element):
    value: float
    ic: float | None = None
    LETTER: ClassVar[str] = "L"
    BRANCH: ClassVar[bool] = True

    def __post_init__(self):
        super().__post_init__()
        _check_passive(self, self.value)

    def tail(self) -> str:
        ic = "" if self.ic is None else f" ic={format_number(self.ic)}"
        return f"{format_number(self.value)}{ic}"


@dataclass(frozen=True)
class VSource(Element):
    waveform: Waveform
    ac: float | None = None
    LETTER: ClassVar[str] = "V"
    BRANCH: ClassVar[bool] = True

    def tail(self) -> str:
        ac = "" if self.ac is None else f" AC {format_number(self.ac)}"
        return f"{self.waveform.card()}{ac}"


@dataclass(frozen=True)
class ISource(Element):
    waveform: Waveform
    ac: float | None = None
    LETTER: ClassVar[str] = "I"

    def tail(self) -> str:
        ac = "" if self.ac is None else f" AC {format_number(self.ac)}"
        return f"{self.waveform.card()}{ac}"


@dataclass(frozen=True)
class VCVS(Element):
    ctrl_pos: str
    ctrl_neg: str
    gain: float
    LETTER: ClassVar[str] = "E"
    BRANCH: ClassVar[bool] = True

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "ctrl_pos", normalize_node(self.ctrl_pos))
        object.__setattr__(self, "ctrl_neg", normalize_node(self.ctrl_neg))
        _check_finite(self.gain)

    def tail(self) -> str:
        return f"{self.ctrl_pos} {self.ctrl_neg} {format_number(self.gain)}"


@dataclass(frozen=True)
class CCCS(Element):
    control: str
    gain: float
    LETTER: ClassVar[str] = "F"

    def __post_init__(self):
        super().__post_init__()
        _check_finite(self.gain)

    def tail(self) -> str:
        return f"{self.control} {format_number(self.gain)}"


@dataclass(frozen=True)
class BehaviouralI(Element):
    expr: Expr
    LETTER: ClassVar[str] = "B"

    def tail(self) -> str:
        return f"I={format_expression(self.expr)}"


@dataclass(frozen=True)
class BehaviouralV(Element):
    expr: Expr
    LETTER: ClassVar[str] = "B"
    BRANCH: ClassVar[bool] = True

    def tail(self) -> str:
        return f"V={format_expression(self.expr)}"


# Netlist


@dataclass(frozen=True)
class Tran:
    tstep: float
    tstop: float
    tstart: float = 0.0
    tmax: float | None = None
    uic: bool = False

    def card(self) -> str:
        parts = [".tran", format_number(self.tstep), format_number(self.tstop)]
        if self.tstart or self.tmax is not None:
            parts.append(format_number(self.tstart))
        if self.tmax is not None:
            parts.append(format_number(self.tmax))
        if self.uic:
            parts.append("uic")
        return " ".join(parts)


@dataclass(frozen=True)
class Ac:
    sweep: str
    points: int
    fstart: float
    fstop: float

    def __post_init__(self):
        if self.sweep not in ("lin", "dec"):
            raise SerializationException(f"unknown AC sweep {self.sweep!r}")
        if self.points < 1 or not 0 < self.fstart <= self.fstop:
            raise SerializationException("AC sweep needs points >= 1 and 0 < fstart <= fstop")

    def card(self) -> str:
        return f".ac {self.sweep} {self.points} {format_number(self.fstart)} {format_number(self.fstop)}"

    def frequencies(self) -> np.ndarray:
        if self.sweep == "lin":
            return np.linspace(self.fstart, self.fstop, self.points)
        decades = np.log10(self.fstop / self.fstart)
        count = max(int(round(decades * self.points)) + 1, 2)
        return np.logspace(np.log10(self.fstart), np.log10(self.fstop), count)


@dataclass
class Netlist:
    title: str = "fieldnet netlist"
    elements: list[Element] = field(default_factory=list)
    tran: Tran | None = None
    ac: Ac | None = None
    ics: dict[str, float] = field(default_factory=dict)
    options: dict[str, str] = field(default_factory=dict)

    def add(self, element: Element) -> Element:
        self.elements.append(element)
        return element

    def extend(self, elements) -> None:
        self.elements.extend(elements)

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    def by_name(self) -> dict[str, Element]:
        return {element.name: element for element in self.elements}

    def remove(self, names) -> None:
        names = set(names)
        self.elements = [e for e in self.elements if e.name not in names]

    @property
    def nodes(self) -> list[str]:
        seen: dict[str, None] = {}
        for element in self.elements:
            seen.update(dict.fromkeys(n for n in element.nodes if n != GROUND))
        return list(seen)


def serialize(netlist: Netlist) -> str:
    names: set[str] = set()
    lines = [netlist.title]
    for element in netlist.elements:
        if element.name in names:
            raise SerializationException(f"duplicate element name {element.name}")
        names.add(element.name)
        lines.append(element.card())
    if netlist.options:
        lines.append(".options " + " ".join(f"{key}={value}" for key, value in sorted(netlist.options.items())))
    if netlist.ics:
        lines.append(".ic " + " ".join(f"V({node})={format_number(v)}" for node, v in netlist.ics.items()))
    if netlist.tran is not None:
        lines.append(netlist.tran.card())
    if netlist.ac is not None:
        lines.append(netlist.ac.card())
    lines.append(".end")
    return "\n".join(lines) + "\n"


def _number(token: str, lineno: int) -> float:
    try:
        return float(token)
    except ValueError as e:
        raise NetlistParseException(f"malformed number {token!r}", lineno) from e


def _parse_initial(token: str, lineno: int) -> float | None:
    if not token.lower().startswith("ic="):
        raise NetlistParseException(f"unexpected token {token!r}", lineno)
    return _number(token[3:], lineno)


_SOURCE_AC = re.compile(r"^(?P<wave>.*?)(?:\s+AC\s+(?P<ac>\S+))?\s*$", re.IGNORECASE)
_IC = re.compile(r"^V\(([^)]+)\)=(\S+)$", re.IGNORECASE)


def _parse_element(line: str, lineno: int) -> Element:
    letter = line[0].upper()
    tokens = line.split(None, 3)
    if letter not in "RCLVIEFB":
        raise NetlistParseException(f"unknown element letter {line[0]!r}", lineno)
    if len(tokens) < 4:
        raise NetlistParseException(f"incomplete card {line!r}", lineno)
    name, pos, neg, rest = tokens
    args = rest.split()
    try:
        match letter:
            case "R":
                if len(args) != 1:
                    raise NetlistParseException("resistor takes one value", lineno)
                return Resistor(name, pos, neg, _number(args[0], lineno))
            case "C" | "L":
                if len(args) not in (1, 2):
                    raise NetlistParseException(f"malformed {letter} card", lineno)
                ic = _parse_initial(args[1], lineno) if len(args) == 2 else None
                cls = Capacitor if letter == "C" else Inductor
                return cls(name, pos, neg, _number(args[0], lineno), ic)
            case "V" | "I":
                found = _SOURCE_AC.match(rest)
                ac = _number(found["ac"], lineno) if found["ac"] else None
                cls = VSource if letter == "V" else ISource
                return cls(name, pos, neg, parse_waveform(found["wave"]), ac)
            case "E":
                if len(args) != 3:
                    raise NetlistParseException("VCVS takes two control nodes and a gain", lineno)
                return VCVS(name, pos, neg, args[0], args[1], _number(args[2], lineno))
            case "F":
                if len(args) != 2:
                    raise NetlistParseException("CCCS takes a control element and a gain", lineno)
                return CCCS(name, pos, neg, args[0], _number(args[1], lineno))
            case "B":
                kind, _, text = rest.partition("=")
                if kind.strip().upper() not in ("I", "V") or not text:
                    raise NetlistParseException("behavioural source needs I=<expr> or V=<expr>", lineno)
                cls = BehaviouralI if kind.strip().upper() == "I" else BehaviouralV
                return cls(name, pos, neg, parse_expression(text))
    except (ExpressionException, SerializationException) as e:
        raise NetlistParseException(str(e), lineno) from e
    raise NetlistParseException(f"unknown card {line!r}", lineno)


def _parse_directive(netlist: Netlist, line: str, lineno: int) -> None:
    keyword, *args = line.split()
    match keyword.lower():
        case ".tran":
            uic = bool(args) and args[-1].lower() == "uic"
            values = [_number(a, lineno) for a in (args[:-1] if uic else args)]
            if not 2 <= len(values) <= 4:
                raise NetlistParseException(".tran takes tstep tstop [tstart [tmax]] [uic]", lineno)
            netlist.tran = Tran(values[0], values[1], *(values[2:3] or [0.0]), *(values[3:4] or [None]), uic=uic)
        case ".ac":
            if len(args) != 4:
                raise NetlistParseException(".ac takes lin|dec N fstart fstop", lineno)
            try:
                netlist.ac = Ac(args[0].lower(), int(args[1]), _number(args[2], lineno), _number(args[3], lineno))
            except (ValueError, SerializationException) as e:
                raise NetlistParseException(str(e), lineno) from e
        case ".ic":
            for arg in args:
                found = _IC.match(arg)
                if not found:
                    raise NetlistParseException(f"malformed initial condition {arg!r}", lineno)
                netlist.ics[normalize_node(found[1])] = _number(found[2], lineno)
        case ".options" | ".option":
            for arg in args:
                key, sep, value = arg.partition("=")
                if not sep:
                    raise NetlistParseException(f"malformed option {arg!r}", lineno)
                netlist.options[key.lower()] = value
        case _:
            raise NetlistParseException(f"unknown directive {keyword}", lineno)


def parse(text: str) -> Netlist:
    lines = text.splitlines()
    netlist = Netlist(title=lines[0].strip() if lines else "")
    names: set[str] = set()
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("*"):
            continue
        if line.startswith("."):
            if line.split()[0].lower() == ".end":
                break
            _parse_directive(netlist, line, lineno)
            continue
        element = _parse_element(line, lineno)
        if element.name in names:
            raise NetlistParseException(f"duplicate element name {element.name}", lineno)
        names.add(element.name)
        netlist.add(element)
    logger.debug(f"Parsed netlist {netlist.title!r} with {len(netlist)} elements")
    return netlist
