"""Renormalization-constant sequences and the case structure they fall into.

A schedule assigns to each cutoff ``n`` a coupling ``g_n >= 0``, a mass
counterterm ``m_n`` and a field-strength term ``a_n``.  For the normalized
field the action density splits into three scale terms

    g_n c_n**2 * I,    m_n c_n * M,    a_n d_n c_n * D,

and ``schedule_eval`` factors out the dominating one as ``A_n``.

Schedules may be given as preset names or as expressions in ``n`` and ``c``
(the covariance ``c_n``), e.g. ``"1/c**2"`` or ``"n**2 * log(n)"``.
"""

from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InputError

CASE_LABELS = ("A1", "A2", "A3", "B")
BOUNDED_SLOPE = 0.05

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {"log": math.log, "sqrt": math.sqrt, "exp": math.exp}


def _compile_node(node):
    if isinstance(node, ast.Expression):
        return _compile_node(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        v = float(node.value)
        return lambda n, c: v
    if isinstance(node, ast.Name):
        if node.id == "n":
            return lambda n, c: n
        if node.id == "c":
            return lambda n, c: c
        raise InputError(f"unknown symbol {node.id!r} in schedule expression")
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        op, lhs, rhs = _BINOPS[type(node.op)], _compile_node(node.left), _compile_node(node.right)
        return lambda n, c: op(lhs(n, c), rhs(n, c))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
        op, arg = _UNARY[type(node.op)], _compile_node(node.operand)
        return lambda n, c: op(arg(n, c))
    if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS
            and len(node.args) == 1 and not node.keywords):
        fn, arg = _FUNCS[node.func.id], _compile_node(node.args[0])
        return lambda n, c: fn(arg(n, c))
    raise InputError(f"unsupported construct in schedule expression: {ast.dump(node)}")


def parse_expression(text: str) -> Callable[[float, float], float]:
    """Compile a closed-form expression in ``n`` and ``c`` to ``f(n, c)``.

    Only numbers, the symbols ``n`` and ``c``, ``+ - * / **`` and the functions
    ``log``, ``sqrt``, ``exp`` are accepted.
    """
    try:
        tree = ast.parse(str(text).strip().replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise InputError(f"cannot parse schedule expression {text!r}: {exc.msg}") from None
    return _compile_node(tree)


@dataclass(frozen=True)
class RenormSchedule:
    """Renormalization sequences as expressions in ``n`` and ``c``.

    ``case`` optionally pins the dominating term (``A1``: coupling, ``A2``:
    mass, ``A3``: field strength, ``B``: bounded, normalized by the coupling
    term).  Without it the largest term at each ``n`` dominates.
    """

    name: str
    d: int
    g: str = "0"
    m: str = "0"
    a: str = "0"
    case: str | None = None
    _fns: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.d not in (2, 3, 4, 5):
            raise InputError(f"dimension must be in 2..5, got {self.d}")
        if self.case is not None and self.case not in CASE_LABELS:
            raise InputError(f"case must be one of {CASE_LABELS}, got {self.case!r}")
        object.__setattr__(self, "_fns", {k: parse_expression(getattr(self, k)) for k in ("g", "m", "a")})

    def values(self, n: int, c_n: float):
        out = []
        for key in ("g", "m", "a"):
            try:
                v = float(self._fns[key](float(n), float(c_n)))
            except (ValueError, ZeroDivisionError, OverflowError) as exc:
                raise InputError(f"schedule {self.name!r}: {key}_n undefined at n={n}: {exc}") from None
            if not math.isfinite(v):
                raise InputError(f"schedule {self.name!r}: {key}_n is not finite at n={n}")
            out.append(v)
        if out[0] < 0:
            raise InputError(f"schedule {self.name!r}: coupling g_n must be non-negative (g_{n} = {out[0]})")
        return tuple(out)

    def scaled(self, factor: float) -> "RenormSchedule":
        """Multiply every sequence by a constant."""
        f = repr(float(factor))
        return RenormSchedule(self.name, self.d, f"({f})*({self.g})", f"({f})*({self.m})", f"({f})*({self.a})", self.case)

    def to_dict(self):
        return {"name": self.name, "d": self.d, "g": self.g, "m": self.m, "a": self.a, "case": self.case}


PRESETS = {
    "A1-d4": RenormSchedule("A1-d4", 4, g="1", case="A1"),
    "A2-d4": RenormSchedule("A2-d4", 4, g="1", m="n**2", case="A2"),
    "A3-d4": RenormSchedule("A3-d4", 4, g="1", a="n", case="A3"),
    "B-d4": RenormSchedule("B-d4", 4, g="1/c**2", case="B"),
    "B-d3": RenormSchedule("B-d3", 3, g="1/c**2", case="B"),
    "d2-standard": RenormSchedule("d2-standard", 2, g="1"),
    "d3-standard": RenormSchedule("d3-standard", 3, g="1", m="log(n)"),
}


def get_schedule(spec) -> RenormSchedule:
    """Preset name, an existing schedule, or a mapping with ``d, g, m, a``."""
    if isinstance(spec, RenormSchedule):
        return spec
    if isinstance(spec, str):
        if spec not in PRESETS:
            raise InputError(f"unknown schedule preset {spec!r}; known: {sorted(PRESETS)}")
        return PRESETS[spec]
    if isinstance(spec, dict):
        return RenormSchedule(name=spec.get("name", "custom"), d=int(spec["d"]), g=str(spec.get("g", "0")),
                              m=str(spec.get("m", "0")), a=str(spec.get("a", "0")), case=spec.get("case"))
    raise InputError(f"cannot build a schedule from {spec!r}")


@dataclass(frozen=True)
class CouplingSet:
    n: int
    g_n: float
    m_n: float
    a_n: float
    c_n: float
    d_n: float
    lambda_n: float
    alpha_n: float
    beta_n: float
    A_n: float
    case_label: str

    def terms(self):
        return (self.g_n * self.c_n**2, self.m_n * self.c_n, self.a_n * self.d_n * self.c_n)


def schedule_eval(schedule: RenormSchedule, n: int, c_n: float) -> CouplingSet:
    """Scale terms at cutoff ``n`` and their normalization by the dominating one."""
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise InputError(f"cutoff index must be a positive integer, got {n!r}")
    if not (math.isfinite(c_n) and c_n > 0):
        raise InputError(f"c_n must be positive, got {c_n}")
    g, m, a = schedule.values(n, c_n)
    d_n = float(n)
    terms = (g * c_n**2, m * c_n, a * d_n * c_n)
    if all(t == 0 for t in terms):
        raise InputError(f"schedule {schedule.name!r} is degenerate at n={n}: all scale terms vanish")
    case = schedule.case
    if case is None:
        case = ("A1", "A2", "A3")[int(np.argmax(np.abs(terms)))]
    pick = {"A1": 0, "B": 0, "A2": 1, "A3": 2}[case]
    A = terms[pick]
    if A == 0:
        A = max(terms, key=abs)
    lam, alpha, beta = (t / A for t in terms)
    if case != "B":
        # exact unit normalization of the dominating term
        lam, alpha, beta = [1.0 if i == pick else v for i, v in enumerate((lam, alpha, beta))]
    return CouplingSet(n=int(n), g_n=g, m_n=m, a_n=a, c_n=float(c_n), d_n=d_n, lambda_n=lam, alpha_n=alpha,
                       beta_n=beta, A_n=A, case_label=case)


def _loglog_slope(ns, values):
    values = np.abs(np.asarray(values, dtype=float))
    if np.all(values == 0):
        return -math.inf
    if np.any(values == 0):
        return math.nan
    return float(np.polyfit(np.log(ns), np.log(values), 1)[0])


@dataclass
class CaseReport:
    schedule: str
    d: int
    n_range: list
    term_slopes: dict
    bounded: dict
    coupling_nonvanishing: bool
    mass_condition: bool
    strength_condition: bool
    branch: str
    notes: list

    def to_dict(self):
        return dict(self.__dict__)


def classify_case(schedule: RenormSchedule, d: int | None = None, n_range=None, c_of_n=None) -> CaseReport:
    """Decide which alternative a schedule falls into over a finite range of ``n``.

    A term is "bounded" when its fitted log-log slope is at most
    ``BOUNDED_SLOPE``.  Returns ``branch`` ``"1"`` (all terms bounded),
    ``"2"`` (d >= 4 with a non-vanishing coupling or a side condition), or
    ``"n/a"``/``"undetermined"``.  ``c_of_n`` defaults to the quadrature
    variance of the default mollifier.
    """
    if not n_range:
        raise InputError("n_range must not be empty")
    ns = sorted(int(n) for n in n_range)
    if len(ns) < 3:
        raise InputError("classification needs at least 3 cutoffs")
    d = schedule.d if d is None else d
    if c_of_n is None:
        from .spectral import variance

        def c_of_n(n):
            return variance(n, d)
    rows = [schedule.values(n, c_of_n(n)) for n in ns]
    cs = [c_of_n(n) for n in ns]
    g, m, a = (np.array(col) for col in zip(*rows))
    terms = {"coupling": g * np.array(cs) ** 2, "mass": m * np.array(cs),
             "strength": a * np.array(ns, dtype=float) * np.array(cs)}
    slopes = {k: _loglog_slope(ns, v) for k, v in terms.items()}
    bounded = {k: bool(s <= BOUNDED_SLOPE) for k, s in slopes.items()}
    notes = []
    if any(math.isnan(s) for s in slopes.values()):
        notes.append("a term changes between zero and non-zero across the range; reported as unstable, "
                     "no subsequence is extracted")
    gnd = g * np.array(ns, dtype=float) ** (d - 4)
    nonvanishing = bool(np.all(gnd > 0) and _loglog_slope(ns, gnd) >= -BOUNDED_SLOPE)
    mass_cond = bool(np.all(m > 0) and _loglog_slope(ns, m / np.array(ns, dtype=float) ** 2) >= -BOUNDED_SLOPE)
    strength_cond = bool(np.all(a > 0) and _loglog_slope(ns, a / np.array(ns, dtype=float)) >= -BOUNDED_SLOPE)
    if any(math.isnan(s) for s in slopes.values()):
        branch = "undetermined"
    elif all(bounded.values()):
        branch = "1"
    elif d >= 4 and (nonvanishing or mass_cond or strength_cond):
        branch = "2"
    elif d < 4:
        branch = "n/a"
        notes.append(f"d={d}: the dichotomy is stated for d >= 4 only")
    else:
        branch = "undetermined"
    return CaseReport(schedule=schedule.name, d=d, n_range=ns, term_slopes=slopes, bounded=bounded,
                      coupling_nonvanishing=nonvanishing, mass_condition=mass_cond, strength_condition=strength_cond,
                      branch=branch, notes=notes)
