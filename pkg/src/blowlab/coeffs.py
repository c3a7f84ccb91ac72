"""Time coefficients: a small expression language, adaptive quadrature and
the cumulative integrals built on top of it.

Coefficients such as ``h_i(t)`` and ``k_i(t)`` are written as plain text
(``"2*exp(-t)+1"``), parsed into an immutable tree and evaluated with numpy so
that a whole array of abscissae is handled in one call.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := ('-')? power
    power  := atom ('^' power)?
    atom   := number | VAR | func '(' expr ')' | '(' expr ')'
    func   := exp | log | sqrt | sin | cos

``^`` binds tightest and is right-associative, so ``-2^2 == -4`` and
``2^3^2 == 512``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

FUNCTIONS = {
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "sin": np.sin,
    "cos": np.cos,
}

DEFAULT_REL_TOL = 1e-10
MAX_SUBDIVISIONS = 10**6
DEFAULT_SAMPLES = 10_001
DEFAULT_HORIZON = 100.0
T_CUT = 1e6


class ExprError(ValueError):
    """Raised for malformed expressions; ``offset`` is a byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class CoefficientError(ValueError):
    pass


class QuadratureError(ArithmeticError):
    pass


class TailContradiction(ValueError):
    pass


# --------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Union[Const, Var, Neg, BinOp, Call]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)


class _Parser:
    def __init__(self, source: str, variable: str):
        self.source = source
        self.variable = variable
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(source):
            if source[pos:].strip() == "":
                break
            m = _TOKEN.match(source, pos)
            if m is None:
                start = pos + len(source[pos:]) - len(source[pos:].lstrip())
                raise ExprError(f"unexpected character {source[start]!r}", self._byte(start))
            kind = m.lastgroup
            self.tokens.append((kind, m.group(kind), m.start(kind)))
            pos = m.end()
        self.i = 0

    def _byte(self, char_index: int) -> int:
        return len(self.source[:char_index].encode("utf-8"))

    def _peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def _end_offset(self) -> int:
        return self._byte(len(self.source))

    def _error(self, message: str, tok=None):
        off = self._byte(tok[2]) if tok is not None else self._end_offset()
        raise ExprError(message, off)

    def _take(self, text: str):
        tok = self._peek()
        if tok is None or tok[1] != text:
            if text == ")":
                self._error("unbalanced parentheses: expected ')'", tok)
            self._error(f"expected {text!r}", tok)
        self.i += 1
        return tok

    def parse(self) -> Expr:
        if not self.tokens:
            raise ExprError("empty expression", 0)
        node = self.expr()
        tok = self._peek()
        if tok is not None:
            if tok[1] == ")":
                self._error("unbalanced parentheses: unexpected ')'", tok)
            self._error(f"unexpected token {tok[1]!r}", tok)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while (tok := self._peek()) is not None and tok[1] in "+-" and tok[0] == "op":
            self.i += 1
            node = BinOp(tok[1], node, self.term())
        return node

    def term(self) -> Expr:
        node = self.factor()
        while (tok := self._peek()) is not None and tok[1] in "*/" and tok[0] == "op":
            self.i += 1
            node = BinOp(tok[1], node, self.factor())
        return node

    def factor(self) -> Expr:
        tok = self._peek()
        if tok is not None and tok[1] == "-":
            self.i += 1
            return Neg(self.power())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        tok = self._peek()
        if tok is not None and tok[1] == "^":
            self.i += 1
            return BinOp("^", base, self.power())
        return base

    def atom(self) -> Expr:
        tok = self._peek()
        if tok is None:
            self._error("unexpected end of expression")
        kind, text, _ = tok
        if kind == "num":
            self.i += 1
            return Const(float(text))
        if kind == "name":
            self.i += 1
            if text == self.variable:
                return Var(text)
            if text in FUNCTIONS:
                self._take("(")
                arg = self.expr()
                self._take(")")
                return Call(text, arg)
            self._error(f"unknown identifier {text!r}", tok)
        if text == "(":
            self.i += 1
            node = self.expr()
            self._take(")")
            return node
        if text == ")":
            self._error("unbalanced parentheses: unexpected ')'", tok)
        self._error(f"unexpected token {text!r}", tok)


def parse_expr(source: str, variable: str = "t") -> Expr:
    """Parse ``source`` into an expression tree in the single variable ``variable``."""
    return _Parser(source, variable).parse()


def to_source(node: Expr) -> str:
    """Print ``node`` so that ``parse_expr(to_source(node))`` evaluates identically."""
    if isinstance(node, Const):
        text = repr(float(node.value))
        return f"(-{text[1:]})" if text.startswith("-") else text
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_source(node.operand)})"
    if isinstance(node, Call):
        return f"{node.func}({to_source(node.arg)})"
    return f"({to_source(node.left)}{node.op}{to_source(node.right)})"


def variables(node: Expr) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Const):
        return set()
    if isinstance(node, (Neg, Call)):
        return variables(node.operand if isinstance(node, Neg) else node.arg)
    return variables(node.left) | variables(node.right)


def compile_expr(node: Expr) -> Callable:
    """Turn a tree into a numpy-vectorized callable of one argument."""
    if isinstance(node, Const):
        v = float(node.value)
        return lambda x: np.full(np.shape(x), v) if np.ndim(x) else v
    if isinstance(node, Var):
        return lambda x: x
    if isinstance(node, Neg):
        f = compile_expr(node.operand)
        return lambda x: -f(x)
    if isinstance(node, Call):
        g, f = FUNCTIONS[node.func], compile_expr(node.arg)
        return lambda x: g(f(x))
    lf, rf = compile_expr(node.left), compile_expr(node.right)
    op = node.op
    if op == "+":
        return lambda x: lf(x) + rf(x)
    if op == "-":
        return lambda x: lf(x) - rf(x)
    if op == "*":
        return lambda x: lf(x) * rf(x)
    if op == "/":
        return lambda x: np.true_divide(lf(x), rf(x))
    return lambda x: np.power(lf(x), rf(x))


def evaluate(node: Expr, x):
    with np.errstate(all="ignore"):
        out = compile_expr(node)(np.asarray(x, dtype=float) if np.ndim(x) else float(x))
    return out if np.ndim(out) else float(out)


# small constructors used when composing coefficients
def mul(a: Expr, b: Expr) -> Expr:
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    return BinOp("/", a, b)


def power(a: Expr, exponent: float) -> Expr:
    if exponent == 1.0:
        return a
    return BinOp("^", a, Const(float(exponent)))


def scale(c: float, a: Expr) -> Expr:
    if c == 1.0:
        return a
    return BinOp("*", Const(float(c)), a)


def power_product(factors) -> Expr:
    """``prod f^q`` over ``(expr, q)`` pairs, grouped so it evaluates without 0 * inf.

    Repeated factors have their exponents added, and ``exp`` factors are
    merged into one ``exp(sum q * arg)``; the naive product underflows to
    ``0 * inf`` when decaying and growing factors cancel.
    """
    powers: dict = {}
    exp_args = []
    for expr, q in factors:
        if q == 0:
            continue
        if isinstance(expr, Call) and expr.func == "exp":
            exp_args.append(scale(q, expr.arg))
            continue
        key = to_source(expr)
        e, q0 = powers.get(key, (expr, 0.0))
        powers[key] = (e, q0 + q)
    terms = [power(e, q) for e, q in powers.values() if q != 0]
    if exp_args:
        arg = exp_args[0]
        for a in exp_args[1:]:
            arg = BinOp("+", arg, a)
        terms.append(Call("exp", arg))
    if not terms:
        return Const(1.0)
    out = terms[0]
    for t in terms[1:]:
        out = mul(out, t)
    return out


def is_constant(node: Expr) -> bool:
    return not variables(node)


# --------------------------------------------------------------------------
# Tail descriptors


@dataclass(frozen=True)
class TailDescriptor:
    """Asymptotic class ``f(t) ~ C t^power exp(-rate t)`` as ``t -> inf``.

    ``known=False`` marks an undeclared tail.
    """

    rate: float = 0.0
    power: float = 0.0
    known: bool = True

    @classmethod
    def power_law(cls, exponent: float) -> "TailDescriptor":
        return cls(0.0, float(exponent))

    @classmethod
    def exponential(cls, rate: float, power: float = 0.0) -> "TailDescriptor":
        return cls(float(rate), float(power))

    @classmethod
    def unknown(cls) -> "TailDescriptor":
        return cls(0.0, 0.0, False)

    @classmethod
    def from_config(cls, spec) -> "TailDescriptor":
        if spec is None or spec == "unknown":
            return cls.unknown()
        if isinstance(spec, dict):
            kind = spec.get("kind")
            if kind == "power":
                return cls.power_law(spec["exponent"])
            if kind == "exp":
                return cls.exponential(spec["rate"], spec.get("power", 0.0))
            if kind == "unknown":
                return cls.unknown()
        raise ValueError(f"bad tail descriptor {spec!r}")

    def to_config(self):
        if not self.known:
            return {"kind": "unknown"}
        if self.rate == 0.0:
            return {"kind": "power", "exponent": self.power}
        return {"kind": "exp", "rate": self.rate, "power": self.power}

    @property
    def converges(self) -> Optional[bool]:
        if not self.known:
            return None
        if self.rate != 0.0:
            return self.rate > 0
        return self.power < -1.0

    def __mul__(self, other: "TailDescriptor") -> "TailDescriptor":
        if not (self.known and other.known):
            return TailDescriptor.unknown()
        return TailDescriptor(self.rate + other.rate, self.power + other.power)

    def __pow__(self, q: float) -> "TailDescriptor":
        if not self.known:
            return self
        return TailDescriptor(self.rate * q, self.power * q)

    def _key(self):
        # larger key = dominant (slower decay)
        return (-self.rate, self.power)


def _linear_coefficient(node: Expr, var: str) -> Optional[float]:
    """Return c if ``node`` is exactly c*var (+ const), else None."""
    if isinstance(node, Var):
        return 1.0
    if isinstance(node, Const):
        return 0.0
    if isinstance(node, Neg):
        c = _linear_coefficient(node.operand, var)
        return None if c is None else -c
    if isinstance(node, BinOp):
        if node.op in "+-":
            a, b = _linear_coefficient(node.left, var), _linear_coefficient(node.right, var)
            if a is None or b is None:
                return None
            return a + b if node.op == "+" else a - b
        if node.op == "*":
            if is_constant(node.left):
                c = _linear_coefficient(node.right, var)
                return None if c is None else float(evaluate(node.left, 0.0)) * c
            if is_constant(node.right):
                c = _linear_coefficient(node.left, var)
                return None if c is None else float(evaluate(node.right, 0.0)) * c
        if node.op == "/" and is_constant(node.right):
            c = _linear_coefficient(node.left, var)
            return None if c is None else c / float(evaluate(node.right, 0.0))
    return None


def infer_tail(node: Expr) -> TailDescriptor:
    """Conservative symbolic tail classification; unknown when unsure."""
    unknown = TailDescriptor.unknown()
    if isinstance(node, Const):
        return TailDescriptor() if node.value != 0 else unknown
    if isinstance(node, Var):
        return TailDescriptor.power_law(1.0)
    if isinstance(node, Neg):
        return infer_tail(node.operand)
    if isinstance(node, Call):
        if node.func == "exp":
            c = _linear_coefficient(node.arg, "t")
            return TailDescriptor.exponential(-c) if c is not None else unknown
        if node.func == "sqrt":
            return infer_tail(node.arg) ** 0.5
        return unknown
    left, right = infer_tail(node.left), infer_tail(node.right)
    if node.op == "*":
        return left * right
    if node.op == "/":
        return left * (right ** -1.0)
    if node.op == "^":
        if is_constant(node.right):
            return left ** float(evaluate(node.right, 0.0))
        return unknown
    # sums: the slower-decaying term dominates; equal classes may cancel
    if not (left.known and right.known):
        return unknown
    if left._key() == right._key():
        return left if node.op == "+" else unknown
    return max(left, right, key=TailDescriptor._key)


# --------------------------------------------------------------------------
# Quadrature (Gauss-Kronrod 7/15)

_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XGK[:-1], [0.0], _XGK[:-1][::-1]])
_WK = np.concatenate([_WGK[:-1], [_WGK[-1]], _WGK[:-1][::-1]])
_WG15 = np.zeros(15)
_WG15[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate([_WG[:3], [_WG[3]], _WG[:3][::-1]])
_EPS = np.finfo(float).eps


def _gk15(fn, a: np.ndarray, b: np.ndarray):
    """Vectorized Gauss-Kronrod rule over intervals ``[a_k, b_k]``."""
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    x = mid[:, None] + half[:, None] * _NODES[None, :]
    with np.errstate(all="ignore"):
        fx = np.asarray(fn(x), dtype=float)
    if fx.shape != x.shape:
        fx = np.broadcast_to(fx, x.shape)
    if not np.all(np.isfinite(fx)):
        bad = x[~np.isfinite(fx)][0]
        raise QuadratureError(f"non-finite integrand value at {bad!r}")
    kron = fx @ _WK
    gauss = fx @ _WG15
    mean = 0.5 * kron
    resasc = np.abs(fx - mean[:, None]) @ _WK
    resabs = np.abs(fx) @ _WK
    err = np.abs(kron - gauss)
    with np.errstate(all="ignore"):
        scaled = np.where(resasc > 0, resasc * np.minimum(1.0, (200.0 * err / np.where(resasc > 0, resasc, 1.0)) ** 1.5), err)
    scaled = np.maximum(scaled, 50.0 * _EPS * resabs)
    return kron * half, np.abs(scaled * half), fx, x


def adaptive_quad(fn: Callable, a: float, b: float, rel_tol: float = DEFAULT_REL_TOL,
                  abs_tol: float = 0.0, max_subdivisions: int = MAX_SUBDIVISIONS,
                  check_positive: bool = False) -> tuple[float, float]:
    """Globally adaptive Gauss-Kronrod quadrature of a vectorized ``fn`` on [a, b].

    Returns ``(value, error_estimate)``. Intervals are bisected in batches,
    largest errors first, until the summed error meets the tolerance.
    """
    if a == b:
        return 0.0, 0.0
    if not (math.isfinite(a) and math.isfinite(b)):
        raise QuadratureError("finite limits required; use improper_integral")
    if b < a:
        v, e = adaptive_quad(fn, b, a, rel_tol, abs_tol, max_subdivisions, check_positive)
        return -v, e
    rel_tol = max(rel_tol, 50 * _EPS)
    lo, hi = np.array([a], float), np.array([b], float)
    val, err, fx, _ = _gk15(fn, lo, hi)
    if check_positive and np.any(fx < 0):
        raise CoefficientError("coefficient negative at a quadrature node")
    n_total = 1
    while True:
        total = float(np.sum(val))
        total_err = float(np.sum(err))
        target = max(abs_tol, rel_tol * abs(total))
        if total_err <= target:
            return total, total_err
        width = hi - lo
        splittable = width > 64 * _EPS * np.maximum(np.abs(lo), np.abs(hi))
        if not np.any(splittable):
            raise QuadratureError("tolerance not reached: intervals at roundoff width")
        # refine the largest contributors until the remainder would fit the target
        order = np.argsort(-err, kind="stable")
        order = order[splittable[order]]
        cum = np.cumsum(err[order])
        keep_err = total_err - cum
        n_split = int(np.searchsorted(-keep_err, -0.5 * target)) + 1
        n_split = min(max(n_split, 1), len(order))
        idx = order[:n_split]
        if n_total + n_split > max_subdivisions:
            raise QuadratureError(
                f"tolerance {rel_tol:g} not reached within {max_subdivisions} subdivisions")
        m = 0.5 * (lo[idx] + hi[idx])
        new_lo = np.concatenate([lo[idx], m])
        new_hi = np.concatenate([m, hi[idx]])
        v2, e2, fx2, _ = _gk15(fn, new_lo, new_hi)
        if check_positive and np.any(fx2 < 0):
            raise CoefficientError("coefficient negative at a quadrature node")
        mask = np.ones(len(lo), bool)
        mask[idx] = False
        lo = np.concatenate([lo[mask], new_lo])
        hi = np.concatenate([hi[mask], new_hi])
        val = np.concatenate([val[mask], v2])
        err = np.concatenate([err[mask], e2])
        n_total += n_split


# --------------------------------------------------------------------------
# Coefficients


@dataclass(frozen=True)
class TimeCoefficient:
    """A positive continuous function of time given by an expression.

    Positivity is certified by dense sampling on ``[0, horizon]`` at
    construction and by sign checks at every quadrature node.
    """

    expr: Expr
    horizon: float = DEFAULT_HORIZON
    samples: int = DEFAULT_SAMPLES
    tail: TailDescriptor = field(default_factory=TailDescriptor.unknown)
    sampled_min: float = field(default=float("nan"), compare=False)

    def __post_init__(self):
        extra = variables(self.expr) - {"t"}
        if extra:
            raise CoefficientError(f"unexpected variables {sorted(extra)}")
        ts = np.linspace(0.0, self.horizon, self.samples)
        vals = np.broadcast_to(evaluate(self.expr, ts), ts.shape)
        if not np.all(np.isfinite(vals)):
            raise CoefficientError(f"{to_source(self.expr)} is not finite on [0, {self.horizon:g}]")
        vmin = float(np.min(vals))
        if vmin <= 0:
            where = float(ts[int(np.argmin(vals))])
            raise CoefficientError(
                f"{to_source(self.expr)} is not positive on [0, {self.horizon:g}] (value {vmin:g} at t={where:g})")
        object.__setattr__(self, "sampled_min", vmin)
        object.__setattr__(self, "_fn", compile_expr(self.expr))

    @classmethod
    def parse(cls, source: str, tail=None, horizon: float = DEFAULT_HORIZON,
              samples: int = DEFAULT_SAMPLES) -> "TimeCoefficient":
        expr = parse_expr(source)
        if tail is None:
            tail = infer_tail(expr)
        elif not isinstance(tail, TailDescriptor):
            tail = TailDescriptor.from_config(tail)
        return cls(expr, horizon, samples, tail)

    @classmethod
    def constant(cls, value: float) -> "TimeCoefficient":
        return cls(Const(float(value)), tail=TailDescriptor())

    @property
    def source(self) -> str:
        return to_source(self.expr)

    @property
    def is_constant(self) -> bool:
        return is_constant(self.expr)

    def __call__(self, t):
        with np.errstate(all="ignore"):
            out = self._fn(np.asarray(t, dtype=float) if np.ndim(t) else float(t))
        return out if np.ndim(out) else float(out)

    def derived(self, expr: Expr, tail: TailDescriptor) -> "TimeCoefficient":
        return TimeCoefficient(expr, self.horizon, self.samples, tail)


def integrate(f: Callable, s: float, t: float, rel_tol: float = DEFAULT_REL_TOL) -> float:
    """Integral of ``f`` over ``[s, t]`` (``s <= t``) by adaptive quadrature."""
    if s > t:
        raise ValueError("integrate requires s <= t")
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    if s == t:
        return 0.0
    check = isinstance(f, TimeCoefficient)
    return adaptive_quad(f, s, t, rel_tol, check_positive=check)[0]


@dataclass(frozen=True)
class ImproperResult:
    """Value of an integral over ``[a, inf)``.

    ``status`` is ``"finite"``, ``"divergent"`` (value is ``inf``) or
    ``"undetermined"`` (value is a lower bound from ``[a, T_CUT]``).
    """

    value: float
    status: str
    cutoff: float = float("inf")

    @property
    def determined(self) -> bool:
        return self.status != "undetermined"


def _check_tail(f: Callable, tail: TailDescriptor, a: float) -> None:
    """Compare a declared tail with sampled local decay; raise on contradiction."""
    if not tail.known:
        return
    if tail.rate != 0.0:
        t0 = a + max(5.0, 10.0 / abs(tail.rate))
        t1 = t0 + max(1.0, 2.0 / abs(tail.rate))
        with np.errstate(all="ignore"):
            f0, f1 = float(f(t0)), float(f(t1))
        if not (f0 > 0 and f1 > 0):
            return
        slope = (math.log(f1) - math.log(f0)) / (t1 - t0)
        expected = -tail.rate + tail.power * (math.log(t1) - math.log(t0)) / (t1 - t0)
        if abs(slope - expected) > 0.25 * max(1.0, abs(tail.rate)):
            raise TailContradiction(
                f"declared exponential rate {tail.rate:g}; sampled log-slope {-slope:g}")
        return
    t0 = max(a, 1.0) * 1e4
    t1 = 2 * t0
    with np.errstate(all="ignore"):
        f0, f1 = float(f(t0)), float(f(t1))
    if not (f0 > 0 and f1 > 0):
        return
    slope = (math.log(f1) - math.log(f0)) / math.log(2.0)
    if abs(slope - tail.power) > 0.1 * max(1.0, abs(tail.power)):
        raise TailContradiction(f"declared power tail {tail.power:g}; sampled exponent {slope:g}")


def improper_integral(f: Callable, tail: Optional[TailDescriptor] = None, a: float = 0.0,
                      rel_tol: float = DEFAULT_REL_TOL) -> ImproperResult:
    """Integral of a positive ``f`` over ``[a, inf)`` guided by its tail class.

    Doubling panels are summed until the asymptotic remainder implied by the
    tail is below ``rel_tol`` of the running total.
    """
    if tail is None:
        tail = getattr(f, "tail", TailDescriptor.unknown())
    _check_tail(f, tail, a)
    conv = tail.converges
    if conv is False:
        return ImproperResult(math.inf, "divergent")
    check = isinstance(f, TimeCoefficient)
    if conv is None:
        total, t = 0.0, a
        width = 1.0
        last = 0.0
        while t < T_CUT:
            nxt = min(T_CUT, t + width)
            last = adaptive_quad(f, t, nxt, rel_tol, check_positive=check)[0]
            total += last
            t, width = nxt, 2 * width
        if last <= 1e-8 * total:
            return ImproperResult(total, "finite", T_CUT)
        return ImproperResult(total, "undetermined", T_CUT)
    # convergent tail: panels [t, t + w], w doubling
    width = 1.0 if tail.rate == 0 else min(1.0, 1.0 / tail.rate)
    total, t = 0.0, a
    while True:
        nxt = t + width
        total += adaptive_quad(f, t, nxt, rel_tol, abs_tol=rel_tol * abs(total) * 1e-2,
                               check_positive=check)[0]
        t, width = nxt, 2 * width
        ft = float(f(t))
        if tail.rate > 0:
            remainder = ft / tail.rate
        else:
            remainder = ft * max(t, 1.0) / (-tail.power - 1.0)
        if remainder <= 0.1 * rel_tol * abs(total) or ft == 0.0:
            return ImproperResult(total, "finite")
        if t > 1e150:
            return ImproperResult(total + remainder, "finite")


class CumulativeIntegral:
    """``G(x) = integral of f over [0, x]`` with cached unit panels.

    ``K(s, t) = G(t) - G(s)`` is evaluated directly over ``[s, t]`` so that
    ``K(t, t) == 0`` exactly.
    """

    def __init__(self, integrand: Callable, rel_tol: float = DEFAULT_REL_TOL, panel: float = 1.0):
        self.integrand = integrand
        self.rel_tol = rel_tol
        self.panel = panel
        self._nodes = [0.0]  # G at k*panel

    def _node_value(self, k: int) -> float:
        while len(self._nodes) <= k:
            j = len(self._nodes) - 1
            self._nodes.append(self._nodes[j] + integrate(
                self.integrand, j * self.panel, (j + 1) * self.panel, self.rel_tol))
        return self._nodes[k]

    def __call__(self, x: float) -> float:
        if x < 0:
            raise ValueError("cumulative integral defined for x >= 0")
        k = int(x // self.panel)
        if k > 10**7:
            return integrate(self.integrand, 0.0, x, self.rel_tol)
        base = self._node_value(k)
        return base + integrate(self.integrand, k * self.panel, x, self.rel_tol)

    def between(self, s: float, t: float) -> float:
        if s > t:
            raise ValueError("K(s, t) requires s <= t")
        if s == t:
            return 0.0
        return integrate(self.integrand, s, t, self.rel_tol)

    def inverse(self, target: float, cap: float = 1e9, xtol: float = 1e-15) -> float:
        """Smallest x with G(x) = target; ``inf`` when G stays below it up to ``cap``."""
        if target <= 0:
            return 0.0
        lo, g_lo = 0.0, 0.0
        hi = 1.0
        g_hi = self(hi)
        while g_hi < target:
            if hi >= cap:
                return math.inf
            lo, g_lo = hi, g_hi
            hi = min(2 * hi, cap)
            g_hi = g_lo + self.between(lo, hi)
        # bisection on the monotone cumulative integral
        while hi - lo > xtol * max(1.0, hi):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            g_mid = g_lo + self.between(lo, mid)
            if g_mid < target:
                lo, g_lo = mid, g_mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


class HtildeRatio:
    """``h_i(t) / h_j(t)`` with sampled monotonicity and constancy checks."""

    def __init__(self, numerator: TimeCoefficient, denominator: TimeCoefficient,
                 horizon: Optional[float] = None, samples: int = DEFAULT_SAMPLES,
                 tol: float = 1e-12):
        self.numerator = numerator
        self.denominator = denominator
        self.horizon = horizon if horizon is not None else min(numerator.horizon, denominator.horizon)
        ts = np.linspace(0.0, self.horizon, samples)
        vals = np.broadcast_to(self(ts), ts.shape)
        scale_ = np.maximum(np.abs(vals), 1.0)
        self.nonincreasing = bool(np.all(np.diff(vals) <= tol * scale_[1:]))
        v0 = float(vals[0])
        self.max_rel_deviation = float(np.max(np.abs(vals - v0)) / abs(v0))
        self.is_constant = self.max_rel_deviation <= 1e-12
        self.value_at_zero = v0

    def __call__(self, t):
        return np.true_divide(self.numerator(t), self.denominator(t))

    @property
    def expr(self) -> Expr:
        return div(self.numerator.expr, self.denominator.expr)

    @property
    def tail(self) -> TailDescriptor:
        return self.numerator.tail * (self.denominator.tail ** -1.0)
