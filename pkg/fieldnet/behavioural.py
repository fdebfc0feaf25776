"""Compile behavioural-source expressions into vectorised numpy kernels.

Expressions are reduced to a structural template in which every constant becomes a
parameter c_i and every voltage or current reference an unknown u_i. Sources sharing a
template are evaluated together, so a netlist with thousands of Joule-loss sources
needs a handful of sympy derivations.
"""

import functools
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import sympy

from fieldnet.exceptions import ExpressionException
from fieldnet.netlist import BinOp, Const, Current, Ddt, Expr, Neg, Time, Voltage

logger = logging.getLogger(__name__)

type Ref = tuple[str, str, str]


def _has_ddt(expr: Expr) -> bool:
    return any(isinstance(node, Ddt) for node in expr.walk())


def _combine(a: Expr | None, b: Expr | None, op: str) -> Expr | None:
    if b is None:
        return a
    if a is None:
        return b if op == "+" else Neg(b)
    return BinOp(op, a, b)


def _scale(terms: list[tuple[float, Expr]], rest: Expr | None, factor: float):
    scaled_rest = None if rest is None else BinOp("*", Const(factor), rest)
    return [(factor * c, arg) for c, arg in terms], scaled_rest


def split_ddt(expr: Expr) -> tuple[list[tuple[float, Expr]], Expr | None]:
    """Split expr into sum(c_k * DDT(arg_k)) plus a DDT-free remainder."""
    if not _has_ddt(expr):
        return [], expr
    match expr:
        case Ddt(arg=arg):
            if _has_ddt(arg):
                raise ExpressionException("nested DDT is not supported")
            return [(1.0, arg)], None
        case Neg(arg=arg):
            return _scale(*split_ddt(arg), -1.0)
        case BinOp(op="+" | "-", left=left, right=right):
            lt, lr = split_ddt(left)
            rt, rr = split_ddt(right)
            if expr.op == "-":
                rt = [(-c, arg) for c, arg in rt]
            return lt + rt, _combine(lr, rr, expr.op)
        case BinOp(op="*", left=Const(value=value), right=right):
            return _scale(*split_ddt(right), value)
        case BinOp(op="*", left=left, right=Const(value=value)):
            return _scale(*split_ddt(left), value)
        case BinOp(op="/", left=left, right=Const(value=value)) if value != 0:
            return _scale(*split_ddt(left), 1.0 / value)
    raise ExpressionException(f"DDT must enter {expr} linearly with constant coefficients")


def reference(node: Expr) -> Ref:
    match node:
        case Voltage(pos=pos, neg=neg):
            return ("V", pos, neg)
        case Current(element=element):
            return ("I", element, "")
    raise ExpressionException(f"not a reference: {node!r}")


def templatize(expr: Expr) -> tuple[str, list[Ref], list[float]]:
    refs: list[Ref] = []
    consts: list[float] = []

    def visit(node: Expr) -> str:
        match node:
            case Const(value=value):
                consts.append(float(value))
                return f"c{len(consts) - 1}"
            case Voltage() | Current():
                ref = reference(node)
                if ref not in refs:
                    refs.append(ref)
                return f"u{refs.index(ref)}"
            case Time():
                return "t"
            case Neg(arg=arg):
                return f"(-{visit(arg)})"
            case BinOp(op=op, left=left, right=right):
                return f"({visit(left)}{op}{visit(right)})"
            case Ddt():
                raise ExpressionException("DDT must be split off before templating")
        raise ExpressionException(f"cannot template {node!r}")

    return visit(expr), refs, consts


@dataclass(frozen=True)
class Template:
    key: str
    n_refs: int
    n_consts: int
    linear: bool
    timed: bool
    value: Callable
    gradient: tuple[Callable, ...]
    coefficients: tuple[Callable, ...]
    offset: Callable | None


def _vectorised(func: Callable, n: int) -> Callable:
    def call(*args):
        return np.broadcast_to(np.asarray(func(*args), dtype=float), (n,)) if n else np.zeros(0)

    return call


@functools.cache
def compile_template(key: str, n_refs: int, n_consts: int) -> Template:
    u = sympy.symbols(f"u0:{n_refs}")
    c = sympy.symbols(f"c0:{n_consts}")
    t = sympy.Symbol("t")
    names = {str(s): s for s in (*u, *c, t)}
    expr = sympy.sympify(key, locals=names)
    grads = [sympy.diff(expr, ui) for ui in u]
    unknown = set(u) | {t}
    linear = all(not (g.free_symbols & unknown) for g in grads)
    offset = None
    timed = t in expr.free_symbols
    coefficients: tuple[Callable, ...] = ()
    if linear:
        base = expr.subs({ui: 0 for ui in u})
        timed = t in base.free_symbols
        offset = sympy.lambdify([*c, t], base, modules="numpy")
        coefficients = tuple(sympy.lambdify([*c], g, modules="numpy") for g in grads)
    logger.debug(f"Compiled behavioural template {key} (linear={linear})")
    return Template(
        key=key,
        n_refs=n_refs,
        n_consts=n_consts,
        linear=linear,
        timed=timed,
        value=sympy.lambdify([*u, *c, t], expr, modules="numpy"),
        gradient=tuple(sympy.lambdify([*u, *c, t], g, modules="numpy") for g in grads),
        coefficients=coefficients,
        offset=offset,
    )


@dataclass
class SourceGroup:
    """Behavioural sources sharing a template.

    rows/signs give where each source's value enters the residual; pos/neg index the
    unknowns of every reference (the extended state carries ground at index N).
    """

    template: Template
    names: list[str]
    consts: np.ndarray
    pos: np.ndarray
    neg: np.ndarray
    rows: np.ndarray
    signs: np.ndarray

    def __len__(self) -> int:
        return len(self.names)

    def arguments(self, xe: np.ndarray) -> list[np.ndarray]:
        refs = xe[self.pos] - xe[self.neg]
        return [refs[:, i] for i in range(self.template.n_refs)]

    def value(self, xe: np.ndarray, t: float) -> np.ndarray:
        f = _vectorised(self.template.value, len(self))
        return f(*self.arguments(xe), *self.consts.T, t)

    def gradient(self, xe: np.ndarray, t: float) -> np.ndarray:
        args = self.arguments(xe)
        out = np.zeros((len(self), self.template.n_refs))
        for i, g in enumerate(self.template.gradient):
            out[:, i] = _vectorised(g, len(self))(*args, *self.consts.T, t)
        return out

    def coefficient_matrix(self) -> np.ndarray:
        out = np.zeros((len(self), self.template.n_refs))
        for i, g in enumerate(self.template.coefficients):
            out[:, i] = _vectorised(g, len(self))(*self.consts.T)
        return out

    def offset(self, t: float) -> np.ndarray:
        return _vectorised(self.template.offset, len(self))(*self.consts.T, t)
