"""Scalar blow-up problems ``y' = f(t) b(y)``, ``y(0) = y0``.

With ``B(x) = int_{y0}^x ds / b(s)`` and ``F(t) = int_0^t f``, the solution is
``y(t) = B^{-1}(F(t))``; it blows up at ``F^{-1}(B(inf))`` when
``B(inf) < F(inf)`` and is global otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .coeffs import (
    CumulativeIntegral,
    Expr,
    ImproperResult,
    TailDescriptor,
    TimeCoefficient,
    adaptive_quad,
    compile_expr,
    improper_integral,
    parse_expr,
    to_source,
)

F_INVERSE_CAP = 1e9
_INNER_TOL = 1e-12


class UndeterminedTail(ArithmeticError):
    """An improper integral could not be classified as finite or infinite."""


class BeyondBlowUp(ValueError):
    pass


@dataclass(frozen=True)
class PowerLaw:
    """``b(s) = s^alpha``."""

    alpha: float

    def __call__(self, s):
        return np.power(s, self.alpha)

    def describe(self) -> str:
        return f"s^{self.alpha:g}"


@dataclass(frozen=True)
class PowerLog:
    """``b(s) = s^p (log s)^q`` on ``(s0, inf)``."""

    p: float
    q: float
    s0: float = 1.0

    def __call__(self, s):
        with np.errstate(all="ignore"):
            return np.power(s, self.p) * np.power(np.log(s), self.q)

    def describe(self) -> str:
        return f"s^{self.p:g} (log s)^{self.q:g}"


@dataclass(frozen=True)
class ExpPower:
    """``b(s) = s^p exp(c s^a)``."""

    p: float
    c: float
    a: float

    def __call__(self, s):
        with np.errstate(all="ignore"):
            return np.power(s, self.p) * np.exp(self.c * np.power(s, self.a))

    def describe(self) -> str:
        return f"s^{self.p:g} exp({self.c:g} s^{self.a:g})"


@dataclass(frozen=True)
class Custom:
    """``b`` given as an expression in ``s``; ``tail_power`` is its growth exponent."""

    expr: Expr
    tail_power: Optional[float] = None

    @classmethod
    def parse(cls, source: str, tail_power: Optional[float] = None) -> "Custom":
        return cls(parse_expr(source, variable="s"), tail_power)

    def __call__(self, s):
        with np.errstate(all="ignore"):
            out = compile_expr(self.expr)(np.asarray(s, float) if np.ndim(s) else float(s))
        return out

    def describe(self) -> str:
        return to_source(self.expr)


Nonlinearity = Union[PowerLaw, PowerLog, ExpPower, Custom]


@dataclass(frozen=True)
class OsgoodProblem:
    y0: float
    f: TimeCoefficient
    b: Nonlinearity

    def __post_init__(self):
        if not self.y0 > 0:
            raise ValueError("y0 must be positive")
        if isinstance(self.b, PowerLog) and self.y0 <= max(self.b.s0, 1.0):
            raise ValueError("PowerLog nonlinearity needs y0 > max(s0, 1)")
        if isinstance(self.b, Custom):
            xs = self.y0 * np.geomspace(1.0, 1e6, 2001)
            vals = np.broadcast_to(self.b(xs), xs.shape)
            if not np.all(np.isfinite(vals) & (vals > 0)):
                raise ValueError("custom nonlinearity is not positive above y0")


@dataclass(frozen=True)
class OsgoodSolution:
    """Blow-up data of a scalar problem.

    ``blow_up_time`` is ``inf`` for global solutions. When the inversion of
    ``F`` hits the search cap, ``exceeds_cap`` is set and ``blow_up_time``
    holds the cap as a lower bound.
    """

    problem: OsgoodProblem
    B_infinity: float
    F_infinity: float
    blow_up_time: float
    exceeds_cap: bool = False
    F_status: str = "finite"

    @property
    def is_global(self) -> bool:
        return math.isinf(self.blow_up_time)

    def evaluate(self, t):
        return evaluate_solution(self.problem, t, self)


def _inv_b(prob: OsgoodProblem):
    b = prob.b
    return lambda s: 1.0 / b(s)


def B_transform(prob: OsgoodProblem, x: float) -> float:
    """``B(x) = int_{y0}^x ds / b(s)`` for ``x >= y0``."""
    y0 = prob.y0
    if x < y0:
        raise ValueError("B_transform requires x >= y0")
    if x == y0:
        return 0.0
    b = prob.b
    if isinstance(b, PowerLaw):
        a = b.alpha
        if a == 1.0:
            return math.log(x / y0)
        return (y0 ** (1 - a) - x ** (1 - a)) / (a - 1)
    try:
        return adaptive_quad(_inv_b(prob), y0, x, _INNER_TOL)[0]
    except ArithmeticError as exc:
        raise ValueError(f"b vanishes or is singular on [{y0:g}, {x:g}]: {exc}") from exc


def B_infinity(prob: OsgoodProblem) -> float:
    """``B(inf)``; raises :class:`UndeterminedTail` when it cannot be classified."""
    b, y0 = prob.b, prob.y0
    if isinstance(b, PowerLaw):
        if b.alpha > 1:
            return y0 ** (1 - b.alpha) / (b.alpha - 1)
        return math.inf
    if isinstance(b, PowerLog):
        # s = exp(u): ds / b(s) = exp((1 - p) u) u^(-q) du on [log y0, inf)
        u0 = math.log(y0)
        if b.p < 1 or (b.p == 1 and b.q <= 1):
            return math.inf
        if b.p == 1:
            return u0 ** (1 - b.q) / (b.q - 1)
        rate = b.p - 1
        g = lambda u: np.exp(-rate * (u - u0)) * np.power(u, -b.q)
        res = improper_integral(g, TailDescriptor.exponential(rate, -b.q), a=u0, rel_tol=_INNER_TOL)
        return math.exp(-rate * u0) * res.value
    if isinstance(b, ExpPower):
        # v = c s^a: integrand (1/a) c^((p-1)/a) v^(k-1) exp(-v), k = (1-p)/a
        k = (1 - b.p) / b.a
        v0 = b.c * y0 ** b.a
        pref = (1 / b.a) * b.c ** ((b.p - 1) / b.a)
        g = lambda v: np.exp(-(v - v0)) * np.power(v, k - 1)
        res = improper_integral(g, TailDescriptor.exponential(1.0, k - 1), a=v0, rel_tol=_INNER_TOL)
        return pref * math.exp(-v0) * res.value
    if b.tail_power is None:
        raise UndeterminedTail("custom nonlinearity without a tail exponent")
    res = improper_integral(_inv_b(prob), TailDescriptor.power_law(-b.tail_power), a=y0,
                            rel_tol=_INNER_TOL)
    if not res.determined:
        raise UndeterminedTail("B(inf) undetermined")
    return res.value


def F_infinity(prob: OsgoodProblem) -> ImproperResult:
    return improper_integral(prob.f, prob.f.tail)


def solve(prob: OsgoodProblem) -> OsgoodSolution:
    """Blow-up time ``F^{-1}(B(inf))`` or ``inf``."""
    b_inf = B_infinity(prob)
    f_res = F_infinity(prob)
    if not f_res.determined:
        # a lower bound on F(inf) that already exceeds B(inf) still decides
        if not f_res.value > b_inf:
            raise UndeterminedTail("F(inf) undetermined and its lower bound does not exceed B(inf)")
    f_inf = f_res.value
    if not b_inf < f_inf:
        return OsgoodSolution(prob, b_inf, f_inf, math.inf, F_status=f_res.status)
    tau = CumulativeIntegral(prob.f, rel_tol=_INNER_TOL).inverse(b_inf, cap=F_INVERSE_CAP)
    if math.isinf(tau):
        return OsgoodSolution(prob, b_inf, f_inf, F_INVERSE_CAP, exceeds_cap=True,
                              F_status=f_res.status)
    return OsgoodSolution(prob, b_inf, f_inf, tau, F_status=f_res.status)


def blow_up_time(prob: OsgoodProblem) -> float:
    return solve(prob).blow_up_time


def _invert_B(prob: OsgoodProblem, target: float) -> float:
    """Solve ``B(x) = target`` by bisection on ``[y0, inf)``."""
    b = prob.b
    y0 = prob.y0
    if target <= 0:
        return y0
    if isinstance(b, PowerLaw):
        a = b.alpha
        if a == 1.0:
            return y0 * math.exp(target)
        base = y0 ** (1 - a) - (a - 1) * target
        if a > 1 and base <= 0:
            raise BeyondBlowUp("F(t) >= B(inf)")
        return base ** (1 / (1 - a))
    lo, b_lo = y0, 0.0
    hi = 2 * y0
    b_hi = B_transform(prob, hi)
    while b_hi < target:
        if hi > 1e300:
            raise BeyondBlowUp("F(t) >= B(inf)")
        lo, b_lo = hi, b_hi
        hi *= 2
        b_hi = b_lo + adaptive_quad(_inv_b(prob), lo, hi, _INNER_TOL)[0]
    while hi - lo > 1e-12 * max(1.0, lo):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        b_mid = b_lo + adaptive_quad(_inv_b(prob), lo, mid, _INNER_TOL)[0]
        if b_mid < target:
            lo, b_lo = mid, b_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def evaluate_solution(prob: OsgoodProblem, t: float,
                      solution: Optional[OsgoodSolution] = None) -> float:
    """``y(t) = B^{-1}(F(t))`` for ``t`` below the blow-up time."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if solution is not None and t >= solution.blow_up_time and not solution.exceeds_cap:
        raise BeyondBlowUp(f"t={t:g} is not below the blow-up time {solution.blow_up_time:g}")
    if t == 0:
        return prob.y0
    F_t = CumulativeIntegral(prob.f, rel_tol=_INNER_TOL)(t)
    return _invert_B(prob, F_t)
