"""The spatially homogeneous companion system

    y_i' = h_i(t) y_i^{p_ii} y_j^{p_ij},    i = 1, 2,  j = 3 - i,

integrated in log variables with an embedded Dormand-Prince 5(4) pair.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, TextIO, Union

import numpy as np

from .coeffs import (
    CumulativeIntegral,
    TimeCoefficient,
    _gk15,
    adaptive_quad,
)

Y_MAX = 1e12
RTOL = 1e-10
MAX_STEPS = 10**7
HORIZON = 1e4


class SingularIntegrand(ArithmeticError):
    pass


class InconclusiveBracket(RuntimeError):
    pass


class PipelineInconsistency(AssertionError):
    """The numerical pipeline contradicts the comparison theorem."""


@dataclass(frozen=True)
class ExponentMatrix:
    """Powers ``p_ij`` of the reaction terms (indices are 1-based)."""

    p11: float
    p12: float
    p21: float
    p22: float

    def __post_init__(self):
        for name in ("p11", "p12", "p21", "p22"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a finite nonnegative real, got {v!r}")

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "ExponentMatrix":
        (p11, p12), (p21, p22) = rows
        return cls(float(p11), float(p12), float(p21), float(p22))

    def rows(self) -> list[list[float]]:
        return [[self.p11, self.p12], [self.p21, self.p22]]

    def p(self, i: int, j: int) -> float:
        return self.rows()[i - 1][j - 1]

    def a(self, i: int) -> float:
        """``a_i = p_ji - p_ii + 1``."""
        j = 3 - i
        return self.p(j, i) - self.p(i, i) + 1.0

    def alpha(self, i: int) -> float:
        """``alpha_i = p_ii + p_ij a_i / a_j``; requires ``a_j != 0``."""
        j = 3 - i
        aj = self.a(j)
        if aj == 0:
            raise ZeroDivisionError(f"alpha_{i} undefined: a_{j} = 0")
        return self.p(i, i) + self.p(i, j) * self.a(i) / aj

    def row_sum(self, i: int) -> float:
        return self.p(i, 1) + self.p(i, 2)

    @property
    def symmetric(self) -> bool:
        return self.p11 == self.p22 and self.p12 == self.p21


@dataclass(frozen=True)
class CompanionProblem:
    exponents: ExponentMatrix
    h1: TimeCoefficient
    h2: TimeCoefficient
    y1_0: float
    y2_0: float

    def __post_init__(self):
        if not (self.y1_0 > 0 and self.y2_0 > 0):
            raise ValueError("initial values must be strictly positive")

    def h(self, i: int) -> TimeCoefficient:
        return self.h1 if i == 1 else self.h2

    def y0(self, i: int) -> float:
        return self.y1_0 if i == 1 else self.y2_0

    def rhs_log(self, t, ell):
        """Right-hand side for ``ell_i = log y_i``."""
        P = self.exponents
        l1, l2 = ell
        with np.errstate(over="ignore"):
            d1 = self.h1(t) * math.exp(min((P.p11 - 1) * l1 + P.p12 * l2, 700.0))
            d2 = self.h2(t) * math.exp(min((P.p22 - 1) * l2 + P.p21 * l1, 700.0))
        return np.array([d1, d2])


@dataclass(frozen=True)
class Completed:
    t_end: float
    kind: str = "Completed"


@dataclass(frozen=True)
class BlowUp:
    t_lo: float
    t_hi: float
    kind: str = "BlowUp"

    @property
    def bracket(self) -> tuple[float, float]:
        return (self.t_lo, self.t_hi)


@dataclass(frozen=True)
class BudgetExceeded:
    t_reached: float
    kind: str = "BudgetExceeded"


Status = Union[Completed, BlowUp, BudgetExceeded]


@dataclass(frozen=True)
class CompanionTrajectory:
    """Accepted steps ``(t, y1, y2)`` with log-space slopes for dense output."""

    problem: CompanionProblem
    t: np.ndarray
    log_y: np.ndarray  # shape (n, 2)
    slopes: np.ndarray  # d(log y)/dt, shape (n, 2)
    status: Status
    n_steps: int = 0
    n_rejected: int = 0

    @property
    def y(self) -> np.ndarray:
        return np.exp(self.log_y)

    @property
    def y1(self) -> np.ndarray:
        return np.exp(self.log_y[:, 0])

    @property
    def y2(self) -> np.ndarray:
        return np.exp(self.log_y[:, 1])

    @property
    def samples(self) -> list[tuple[float, float, float]]:
        y = self.y
        return [(float(t), float(a), float(b)) for t, a, b in zip(self.t, y[:, 0], y[:, 1])]

    def log_at(self, ts) -> np.ndarray:
        """Cubic Hermite interpolation of ``log y`` at times ``ts`` (shape (m, 2))."""
        ts = np.atleast_1d(np.asarray(ts, float))
        if np.any(ts < self.t[0]) or np.any(ts > self.t[-1]):
            raise ValueError("interpolation outside the integrated interval")
        k = np.clip(np.searchsorted(self.t, ts, side="right") - 1, 0, len(self.t) - 2)
        t0, t1 = self.t[k], self.t[k + 1]
        hstep = t1 - t0
        s = ((ts - t0) / hstep)[:, None]
        y0, y1 = self.log_y[k], self.log_y[k + 1]
        m0, m1 = self.slopes[k] * hstep[:, None], self.slopes[k + 1] * hstep[:, None]
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1

    def at(self, ts) -> np.ndarray:
        return np.exp(self.log_at(ts))

    def to_csv(self, out: Union[str, TextIO, None] = None) -> str:
        """Write columns ``t, y1, y2`` with 17 significant digits."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "y1", "y2"])
        for t, a, b in self.samples:
            w.writerow([f"{t:.17g}", f"{a:.17g}", f"{b:.17g}"])
        text = buf.getvalue()
        if isinstance(out, str):
            with open(out, "w", newline="") as fh:
                fh.write(text)
        elif out is not None:
            out.write(text)
        return text


# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def remaining_time_bound(prob: CompanionProblem, t0: float, y: Sequence[float]) -> float:
    """Rigorous upper bound on ``tau - t0`` from the state ``y`` at ``t0``.

    Two comparison arguments are combined and the smaller bound kept:

    * ``z = min_i y_i(t)/y_i(t0)`` obeys ``z' >= g(t) z^s`` with
      ``s = min_i (p_ii + p_ij) > 1`` and ``g = min_i h_i y_i^{p_ii-1} y_j^{p_ij}``;
    * freezing the slower component, ``y_i' >= h_i y_j(t0)^{p_ij} y_i^{p_ii}``
      when ``p_ii > 1``.

    Returns ``inf`` when neither argument applies.
    """
    P = prob.exponents
    y1, y2 = float(y[0]), float(y[1])
    yv = {1: y1, 2: y2}
    bounds = []

    def _solve(fn, target):
        if target <= 0:
            return 0.0
        G = CumulativeIntegral(lambda u: fn(t0 + u), rel_tol=1e-12)
        return G.inverse(target, cap=1e9)

    s = min(P.row_sum(1), P.row_sum(2))
    if s > 1:
        c = {}
        for i in (1, 2):
            j = 3 - i
            c[i] = yv[i] ** (P.p(i, i) - 1) * yv[j] ** P.p(i, j)
        g = lambda t: np.minimum(c[1] * prob.h1(t), c[2] * prob.h2(t))
        bounds.append(_solve(g, 1.0 / (s - 1)))
    for i in (1, 2):
        j = 3 - i
        pii = P.p(i, i)
        if pii > 1:
            scale = yv[j] ** P.p(i, j)
            h = prob.h(i)
            target = yv[i] ** (1 - pii) / (pii - 1)
            bounds.append(_solve(lambda t, h=h, scale=scale: scale * h(t), target))
    return min(bounds) if bounds else math.inf


def solve(prob: CompanionProblem, T_end: float, rtol: float = RTOL, y_max: float = Y_MAX,
          max_steps: int = MAX_STEPS, t_eval: Optional[Iterable[float]] = None,
          first_step: Optional[float] = None) -> CompanionTrajectory:
    """Integrate the companion system on ``[0, T_end]``.

    Stops at ``T_end``, when ``max(y1, y2)`` reaches ``y_max`` (status
    :class:`BlowUp` with a bracket on the blow-up time), or when the step size
    underflows. Times in ``t_eval`` are hit exactly.
    """
    if not T_end > 0:
        raise ValueError("T_end must be positive")
    stops = sorted({float(x) for x in (() if t_eval is None else t_eval) if 0 < x < T_end}
                   | {float(T_end)})
    log_max = math.log(y_max)
    t = 0.0
    ell = np.log([prob.y1_0, prob.y2_0])
    k1 = prob.rhs_log(t, ell)
    ts, ls, ks = [t], [ell.copy()], [k1.copy()]
    rate = float(np.max(np.abs(k1)))
    dt = first_step or min(T_end, 0.01 / max(rate, 1e-12), 0.1)
    dt = max(dt, 1e-12)
    err_prev = 1e-4
    n_steps = n_rej = 0
    next_stop = 0
    status: Optional[Status] = None
    while status is None:
        if n_steps >= max_steps:
            status = BudgetExceeded(t)
            break
        target = stops[next_stop]
        hit = False
        dt_free = dt
        if t + dt >= target:
            dt = target - t
            hit = True
        K = [k1]
        for s in range(1, 7):
            inc = sum(a * K[m] for m, a in enumerate(_A[s]))
            K.append(prob.rhs_log(t + _C[s] * dt, ell + dt * inc))
        Karr = np.array(K)
        new = ell + dt * (_B5 @ Karr)
        err_vec = dt * (_E @ Karr)
        err = float(np.max(np.abs(err_vec))) / rtol
        if not np.all(np.isfinite(new)):
            err = math.inf
        if err <= 1.0:
            t = target if hit else t + dt
            ell = new
            k1 = Karr[6]
            n_steps += 1
            ts.append(t)
            ls.append(ell.copy())
            ks.append(k1.copy())
            if hit:
                next_stop += 1
            if float(np.max(ell)) >= log_max:
                y = np.exp(ell)
                status = BlowUp(float(t), float(t + remaining_time_bound(prob, t, y)))
                break
            if hit and next_stop == len(stops):
                status = Completed(t)
                break
            # PI step-size control
            fac = 0.9 * max(err, 1e-10) ** (-0.7 / 5) * err_prev ** (0.4 / 5)
            fac = min(5.0, max(0.2, fac))
            err_prev = max(err, 1e-4)
            dt = dt * fac if not hit else max(dt * fac, dt_free)
        else:
            n_rej += 1
            fac = 0.9 * err ** (-1 / 5) if math.isfinite(err) else 0.1
            dt = dt * max(0.1, min(0.9, fac))
        if dt < 1e-15 * max(t, 1.0):
            y = np.exp(ell)
            status = BlowUp(float(t), float(t + remaining_time_bound(prob, t, y)))
    return CompanionTrajectory(prob, np.array(ts), np.array(ls), np.array(ks), status,
                               n_steps, n_rej)


@dataclass(frozen=True)
class Global:
    horizon_reached: float
    evidence: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Bracket:
    t_lo: float
    t_hi: float
    trajectory_status: str = "BlowUp"
    time_error: float = 0.0

    @property
    def width(self) -> float:
        return self.t_hi - self.t_lo

    def __contains__(self, t: float) -> bool:
        return self.t_lo <= t <= self.t_hi


def blow_up_bracket(prob: CompanionProblem, horizon: float = HORIZON, rtol: float = RTOL,
                    bounds_verdicts=None) -> Union[Bracket, Global]:
    """Bracket the blow-up time or certify global existence.

    The bracket is the escape time and the escape time plus the tail bound,
    widened by the change observed when the tolerance is tightened 32-fold
    (an estimate of the accumulated time error of the integration).
    """
    coarse = solve(prob, horizon, rtol=rtol)
    st = coarse.status
    if isinstance(st, BlowUp) and math.isfinite(st.t_hi):
        fine = solve(prob, horizon, rtol=rtol / 32)
        st2 = fine.status
        if isinstance(st2, BlowUp) and math.isfinite(st2.t_hi):
            shift = max(abs(st.t_lo - st2.t_lo), abs(st.t_hi - st2.t_hi))
            err = 2.0 * shift + 8 * np.finfo(float).eps * st2.t_hi
            return Bracket(float(min(st.t_lo, st2.t_lo) - err), float(max(st.t_hi, st2.t_hi) + err),
                           time_error=float(err))
    from .bounds import certify_global

    cert = certify_global(prob) if bounds_verdicts is None else bounds_verdicts
    if cert:
        reached = st.t_end if isinstance(st, Completed) else (
            st.t_lo if isinstance(st, BlowUp) else st.t_reached)
        # a certified-global trajectory may still cross y_max (e.g. exponential growth)
        kind = "EscapeThreshold" if isinstance(st, BlowUp) else st.kind
        return Global(reached, {"status": kind, "certificates": cert})
    raise InconclusiveBracket(
        f"neither a blow-up bracket nor a global certificate by horizon {horizon:g}"
        f" (trajectory status {st.kind})")


# --------------------------------------------------------------------------
# power-product identity


def _endpoint_integral(g, left_exp: float, right_exp: float, rel_tol: float = 1e-13) -> float:
    """Integral of ``g`` over [0, 1] where ``g ~ t^left_exp`` at 0 and
    ``g ~ (1-t)^right_exp`` at 1; singular ends are removed by substitution."""
    if left_exp <= -1 or right_exp <= -1:
        raise SingularIntegrand("non-integrable endpoint singularity")

    def left_piece(m):
        # t = u^k flattens t^e when k = 1 / (1 + e)
        k = 1.0 / (1.0 + left_exp)
        return adaptive_quad(lambda u: g(u**k) * k * u ** (k - 1), 0.0, m ** (1 / k), rel_tol)[0]

    def right_piece(m):
        k = 1.0 / (1.0 + right_exp)
        return adaptive_quad(lambda u: g(1.0 - u**k) * k * u ** (k - 1), 0.0, (1 - m) ** (1 / k),
                             rel_tol)[0]

    if left_exp < 0 and right_exp < 0:
        return left_piece(0.5) + right_piece(0.5)
    if left_exp < 0:
        return left_piece(1.0)
    if right_exp < 0:
        return right_piece(0.0)
    return adaptive_quad(g, 0.0, 1.0, rel_tol)[0]


def power_product_identity(a: float, b: float, c: float, d: float, p: float, q: float,
                           rel_tol: float = 1e-13) -> tuple[float, float]:
    """Both sides of

        a^p b^q - c^p d^q = p (a-c) int_0^1 x^{p-1} y^q dt + q (b-d) int_0^1 x^p y^{q-1} dt

    with ``x = c + t (a - c)`` and ``y = d + t (b - d)``.
    """
    if min(a, b, c, d, p, q) < 0:
        raise ValueError("all arguments must be nonnegative")
    lhs = a**p * b**q - c**p * d**q
    x = lambda t: c + t * (a - c)
    y = lambda t: d + t * (b - d)

    def ends(ex, ey):
        left = (ex if c == 0 else 0.0) + (ey if d == 0 else 0.0)
        right = (ex if a == 0 else 0.0) + (ey if b == 0 else 0.0)
        return left, right

    rhs = 0.0
    if p != 0 and a != c:
        g = lambda t: np.power(x(t), p - 1) * np.power(y(t), q)
        rhs += p * (a - c) * _endpoint_integral(g, *ends(p - 1, q), rel_tol=rel_tol)
    if q != 0 and b != d:
        g = lambda t: np.power(x(t), p) * np.power(y(t), q - 1)
        rhs += q * (b - d) * _endpoint_integral(g, *ends(p, q - 1), rel_tol=rel_tol)
    return float(lhs), float(rhs)


# --------------------------------------------------------------------------
# comparison harness


@dataclass(frozen=True)
class ComparisonReport:
    direction: str
    horizon: float
    delta_scale: float
    integral_margin: float  # min over samples of the signed, scaled residual
    pointwise_margin: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.integral_margin >= -self.tolerance and self.pointwise_margin >= -self.tolerance


def comparison_check(prob: CompanionProblem, perturbation: str, horizon: float,
                     delta_scale: float = 0.01, n_samples: int = 2001,
                     tolerance: float = 1e-8, strict: bool = True) -> ComparisonReport:
    """Check a perturbed trajectory ``z = y (1 +/- delta(t))`` against the
    integral inequality and the ordering it implies.

    ``delta(t) = delta_scale * t / (1 + t)``. Margins are relative to the
    local solution size. With ``strict`` a violated integral inequality
    raises :class:`PipelineInconsistency`.
    """
    if perturbation not in ("super", "sub"):
        raise ValueError("perturbation must be 'super' or 'sub'")
    sign = 1.0 if perturbation == "super" else -1.0
    grid = np.linspace(0.0, horizon, n_samples)
    traj = solve(prob, horizon, t_eval=grid[1:-1])
    if not isinstance(traj.status, Completed):
        raise ValueError("horizon is beyond the escape of the companion solution")
    P = prob.exponents

    def z(ts):
        ys = traj.at(ts)
        d = delta_scale * ts / (1 + ts)
        return ys * (1 + sign * d)[:, None]

    def integrand(ts, i):
        flat = ts.ravel()
        zz = z(flat)
        j = 2 - i
        vals = prob.h(i)(flat) * zz[:, i - 1] ** P.p(i, i) * zz[:, j] ** P.p(i, 3 - i)
        return np.broadcast_to(vals, flat.shape).reshape(ts.shape)

    zg = z(grid)
    yg = traj.at(grid)
    integral_margin = math.inf
    for i in (1, 2):
        pieces, _, _, _ = _gk15(lambda ts: integrand(ts, i), grid[:-1], grid[1:])
        cum = np.concatenate([[0.0], np.cumsum(pieces)])
        resid = zg[:, i - 1] - zg[0, i - 1] - cum
        scale_ = np.maximum(zg[:, i - 1], 1.0)
        integral_margin = min(integral_margin, float(np.min(sign * resid / scale_)))
    point = sign * (zg - yg) / np.maximum(yg, 1.0)
    report = ComparisonReport(perturbation, horizon, delta_scale, integral_margin,
                              float(np.min(point)), tolerance)
    if strict and integral_margin < -tolerance:
        raise PipelineInconsistency(
            f"{perturbation} integral inequality violated by {-integral_margin:.3g}")
    return report
