"""Explicit blow-up-time bounds and global-existence certificates for the
companion system.

Every verdict concerns one component ``k``: an upper bound on its maximal
existence time, a certificate that it stays finite for all time, or a
reason why neither could be concluded. Roles are written ``(i, j)`` with
``j = 3 - i``; in a role, the comparison inequality is used for index ``i``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .coeffs import (
    CoefficientError,
    CumulativeIntegral,
    HtildeRatio,
    TimeCoefficient,
    QuadratureError,
    TailContradiction,
    improper_integral,
    power_product,
)
from .companion import CompanionProblem, CompanionTrajectory, ExponentMatrix
from .osgood import (
    F_INVERSE_CAP,
    B_infinity,
    ExpPower,
    OsgoodProblem,
    PowerLaw,
    PowerLog,
    UndeterminedTail,
)

ZERO_TOL = 1e-12


@dataclass(frozen=True)
class ComparisonConstants:
    which: str  # "c19" or "c20"
    i: int
    M: float
    log_c: float

    @property
    def c(self) -> float:
        return float(np.exp(self.log_c))


@dataclass
class BoundVerdict:
    component: int
    kind: str  # UpperBound | GlobalCertificate | BlowUpCertificate | Inconclusive | HypothesisUnverified
    case: str
    tau_bar: Optional[float] = None
    reason: str = ""
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: v for k, v in d.items() if v not in (None, "", {})}


@dataclass(frozen=True)
class Dispatch:
    label: str  # a | b | c | unsupported
    a1: float
    a2: float
    roles: tuple  # ((case, i, j), ...)

    def a(self, i: int) -> float:
        return self.a1 if i == 1 else self.a2


def _snap(x: float, tol: float) -> float:
    return 0.0 if abs(x) <= tol else x


def case_dispatch(exponents: ExponentMatrix, tol: float = ZERO_TOL,
                  override: Optional[str] = None) -> Dispatch:
    """Which case of the bound theorem applies, and in which index orders.

    ``override`` declares the case when ``a_i = 0`` holds structurally but the
    float computation is slightly off; it may only move values within 1e-6.
    """
    a = {i: _snap(exponents.a(i), tol) for i in (1, 2)}
    if override is not None:
        if override not in ("a", "b", "c"):
            raise ValueError(f"unknown case override {override!r}")
        if override == "c":
            zero = (1, 2)
        elif override == "b":
            zero = (min((1, 2), key=lambda i: abs(a[i])),)
        else:
            zero = ()
        for i in zero:
            if abs(a[i]) > 1e-6:
                raise ValueError(f"case override {override!r} contradicts a_{i} = {a[i]:g}")
            a[i] = 0.0
    roles = []
    for i in (1, 2):
        j = 3 - i
        if a[i] > 0 and a[j] != 0:
            roles.append(("a", i, j))
        elif a[i] > 0 and a[j] == 0:
            roles.append(("b", i, j))
        elif a[i] == 0 and a[j] == 0:
            roles.append(("c", i, j))
    # at most one case label can occur for a given (a_1, a_2)
    label = roles[0][0] if roles else "unsupported"
    return Dispatch(label, a[1], a[2], tuple(roles))


def _htilde(prob: CompanionProblem, i: int) -> HtildeRatio:
    return HtildeRatio(prob.h(i), prob.h(3 - i))


def constant_c19(prob: CompanionProblem, i: int, dispatch: Optional[Dispatch] = None) -> ComparisonConstants:
    """Constant in ``y_i >= c htilde_i^{1/a_i} y_j^{a_j/a_i}`` (needs a_i > 0, a_j != 0)."""
    d = dispatch or case_dispatch(prob.exponents)
    j = 3 - i
    ai, aj = d.a(i), d.a(j)
    if not (ai > 0 and aj != 0):
        raise ValueError("c19 requires a_i > 0 and a_j != 0")
    h0 = _htilde(prob, i).value_at_zero
    log_second = math.log(h0) + aj * math.log(prob.y0(j)) - ai * math.log(prob.y0(i))
    log_M = max(math.log(aj / ai), log_second) if aj > 0 else log_second
    M = float(np.exp(log_M))
    return ComparisonConstants("c19", i, M, -log_M / ai)


def constant_c20(prob: CompanionProblem, i: int, dispatch: Optional[Dispatch] = None) -> ComparisonConstants:
    """Constant in ``y_i^{a_i} >= c htilde_i log y_j`` (needs a_i > 0, a_j = 0)."""
    d = dispatch or case_dispatch(prob.exponents)
    j = 3 - i
    ai = d.a(i)
    if not (ai > 0 and d.a(j) == 0):
        raise ValueError("c20 requires a_i > 0 and a_j = 0")
    h0 = _htilde(prob, i).value_at_zero
    M = max(1.0 / ai, math.log(prob.y0(j)) * h0 / prob.y0(i) ** ai)
    if not M > 0:
        raise ValueError("c20 requires M > 0")
    return ComparisonConstants("c20", i, M, -math.log(M))


def _rate(base: TimeCoefficient, ht: HtildeRatio, q: float, log_C: float):
    """``(log C, thunk for g)`` with ``g = base * htilde^q``.

    A constant ``htilde`` is folded into ``log C`` so that extreme powers of
    it never reach floating point; errors building ``g`` surface in
    :func:`_scalar_verdict`.
    """
    if q == 0:
        return log_C, base
    if ht.is_constant:
        return log_C + q * math.log(ht.value_at_zero), base

    def build():
        num, den = ht.numerator, ht.denominator
        expr = power_product([(base.expr, 1.0), (num.expr, q), (den.expr, -q)])
        return base.derived(expr, base.tail * num.tail ** q * den.tail ** (-q))

    return log_C, build


def _scalar_verdict(component: int, case: str, mode: str, y0: float, b, log_C: float,
                    rate, details: dict) -> BoundVerdict:
    """Compare ``F = exp(log_C) int g`` with ``B(inf)`` for ``y' = F' b(y)``.

    ``mode`` is ``"upper"`` (blow-up of a minorant: UpperBound) or
    ``"global"`` (boundedness of a majorant: GlobalCertificate). The constant
    stays in log form, so bounds are decided even when it over- or underflows.
    """
    details = dict(details, log_constant=log_C)
    try:
        g = rate if isinstance(rate, TimeCoefficient) else rate()
        b_inf = B_infinity(OsgoodProblem(y0, g, b))
    except (CoefficientError, ValueError, OverflowError) as exc:
        return BoundVerdict(component, "Inconclusive", case, reason=f"rate not representable: {exc}",
                            details=details)
    except UndeterminedTail as exc:
        return BoundVerdict(component, "Inconclusive", case, reason=f"undetermined improper integral: {exc}",
                            details=details)
    try:
        G = improper_integral(g, g.tail)
    except (QuadratureError, TailContradiction) as exc:
        return BoundVerdict(component, "Inconclusive", case, reason=f"improper integral failed: {exc}",
                            details=details)
    details.update(B_infinity=b_inf, G_infinity=G.value, G_status=G.status)
    with np.errstate(over="ignore"):
        details["F_infinity"] = float(np.exp(log_C) * G.value) if G.value > 0 else 0.0
    if math.isinf(b_inf):
        blows = False
    elif G.value == 0:
        blows = False
    else:
        blows = log_C + math.log(G.value) > math.log(b_inf)
    if not blows and not G.determined:
        return BoundVerdict(component, "Inconclusive", case, reason="undetermined improper integral",
                            details=details)
    if mode == "global":
        if blows:
            return BoundVerdict(component, "Inconclusive", case, reason="F(inf) exceeds the threshold",
                                details=details)
        return BoundVerdict(component, "GlobalCertificate", case, details=details)
    if not blows:
        return BoundVerdict(component, "Inconclusive", case, reason="F(inf) does not exceed the threshold",
                            details=details)
    target = float(np.exp(math.log(b_inf) - log_C))
    tau = CumulativeIntegral(g, rel_tol=1e-12).inverse(target, cap=F_INVERSE_CAP)
    if not (math.isfinite(target) and math.isfinite(tau)):
        return BoundVerdict(component, "Inconclusive", case, reason="bound exceeds the inversion cap 1e9",
                            details=details)
    return BoundVerdict(component, "UpperBound", case, tau_bar=tau, details=details)


def verdict_a1(prob: CompanionProblem, i: int, dispatch: Optional[Dispatch] = None) -> BoundVerdict:
    """Upper bound on the existence time of component ``j`` (case a)."""
    d = dispatch or case_dispatch(prob.exponents)
    P, j = prob.exponents, 3 - i
    ai, aj = d.a(i), d.a(j)
    ht = _htilde(prob, i)
    if not ht.nonincreasing:
        return BoundVerdict(j, "HypothesisUnverified", "a.1", reason=f"htilde_{i} not nonincreasing on samples")
    const = constant_c19(prob, i, d)
    alpha_j = P.p(j, j) + P.p(j, i) * aj / ai
    details = {"role": [i, j], "a_i": ai, "a_j": aj, "alpha_j": alpha_j, "M": const.M, "c19": const.c}
    if not alpha_j > 1:
        return BoundVerdict(j, "Inconclusive", "a.1", reason="alpha_j <= 1", details=details)
    details["threshold"] = prob.y0(j) ** (1 - alpha_j) / (alpha_j - 1)
    q = P.p(j, i) / ai
    return _scalar_verdict(j, "a.1", "upper", prob.y0(j), PowerLaw(alpha_j), *_rate(
        prob.h(j), ht, q, P.p(j, i) * const.log_c), details)


def verdict_a2(prob: CompanionProblem, i: int, dispatch: Optional[Dispatch] = None) -> BoundVerdict:
    """Global certificate for component ``i`` (case a)."""
    d = dispatch or case_dispatch(prob.exponents)
    P, j = prob.exponents, 3 - i
    ai, aj = d.a(i), d.a(j)
    ht = _htilde(prob, i)
    if not ht.nonincreasing:
        return BoundVerdict(i, "HypothesisUnverified", "a.2", reason=f"htilde_{i} not nonincreasing on samples")
    if aj < 0:
        return BoundVerdict(i, "HypothesisUnverified", "a.2",
                            reason="a_j < 0: the comparison inequality cannot be inverted for y_j")
    const = constant_c19(prob, i, d)
    alpha_i = P.p(i, i) + P.p(i, j) * ai / aj
    details = {"role": [i, j], "a_i": ai, "a_j": aj, "alpha_i": alpha_i, "M": const.M, "c19": const.c}
    if alpha_i <= 1:
        return BoundVerdict(i, "GlobalCertificate", "a.2", reason="alpha_i <= 1", details=details)
    details["threshold"] = prob.y0(i) ** (1 - alpha_i) / (alpha_i - 1)
    q = -P.p(i, j) / aj
    return _scalar_verdict(i, "a.2", "global", prob.y0(i), PowerLaw(alpha_i), *_rate(
        prob.h(i), ht, q, (P.p(i, i) - alpha_i) * const.log_c), details)


def verdict_b1(prob: CompanionProblem, i: int, dispatch: Optional[Dispatch] = None) -> BoundVerdict:
    """Upper bound on the existence time of component ``j`` (case b).

    The rate carries ``c20^{p_ji / a_i}``, the power that follows from raising
    the comparison inequality to ``1 / a_i``.
    """
    d = dispatch or case_dispatch(prob.exponents)
    P, j = prob.exponents, 3 - i
    ai = d.a(i)
    ht = _htilde(prob, i)
    if prob.y0(j) <= 1:
        return BoundVerdict(j, "HypothesisUnverified", "b.1", reason="y_j(0) <= 1")
    if not ht.nonincreasing:
        return BoundVerdict(j, "HypothesisUnverified", "b.1", reason=f"htilde_{i} not nonincreasing on samples")
    const = constant_c20(prob, i, d)
    q = P.p(j, i) / ai
    details = {"role": [i, j], "a_i": ai, "M": const.M, "c20": const.c, "log_power": q}
    return _scalar_verdict(j, "b.1", "upper", prob.y0(j), PowerLog(P.p(j, j), q), *_rate(
        prob.h(j), ht, q, q * const.log_c), details)


def verdict_b2(prob: CompanionProblem, i: int, dispatch: Optional[Dispatch] = None) -> BoundVerdict:
    """Global certificate for component ``i`` (case b, constant htilde)."""
    d = dispatch or case_dispatch(prob.exponents)
    P, j = prob.exponents, 3 - i
    ai = d.a(i)
    ht = _htilde(prob, i)
    if not ht.is_constant:
        return BoundVerdict(i, "HypothesisUnverified", "b.2",
                            reason=f"htilde_{i} not constant (max rel. deviation {ht.max_rel_deviation:.3g})")
    ct = ht.value_at_zero
    const = constant_c20(prob, i, d)
    details = {"role": [i, j], "a_i": ai, "M": const.M, "c20": const.c, "c_tilde": ct}
    if P.p(i, j) == 0:
        b = PowerLaw(P.p(i, i))
    else:
        b = ExpPower(P.p(i, i), P.p(i, j) * math.exp(-const.log_c) / ct, ai)
        details["exp_coefficient"] = b.c
    return _scalar_verdict(i, "b.2", "global", prob.y0(i), b, 0.0, prob.h(i), details)


def verdict_c1(prob: CompanionProblem, i: int, dispatch: Optional[Dispatch] = None) -> BoundVerdict:
    """Upper bound on the existence time of component ``j`` (case c).

    From ``y_i >= y_i(0) (y_j / y_j(0))^{c~}``:
    ``y_j' >= (y_i(0) / y_j(0)^{c~})^{p_ji} h_j y_j^{beta_j}``,
    ``beta_j = p_jj + p_ji c~``.
    """
    P, j = prob.exponents, 3 - i
    ht = _htilde(prob, i)
    if not ht.is_constant:
        return BoundVerdict(j, "HypothesisUnverified", "c.1",
                            reason=f"htilde_{i} not constant (max rel. deviation {ht.max_rel_deviation:.3g})")
    ct = ht.value_at_zero
    beta = P.p(j, j) + P.p(j, i) * ct
    log_pref = P.p(j, i) * (math.log(prob.y0(i)) - ct * math.log(prob.y0(j)))
    details = {"role": [i, j], "c_tilde": ct, "beta_j": beta, "prefactor": float(np.exp(log_pref))}
    if not beta > 1:
        return BoundVerdict(j, "Inconclusive", "c.1", reason="beta_j <= 1", details=details)
    details["threshold"] = prob.y0(j) ** (1 - beta) / (beta - 1)
    return _scalar_verdict(j, "c.1", "upper", prob.y0(j), PowerLaw(beta), log_pref, prob.h(j), details)


def verdict_c2(prob: CompanionProblem, i: int, dispatch: Optional[Dispatch] = None) -> BoundVerdict:
    """Global certificate for component ``i`` (case c)."""
    P, j = prob.exponents, 3 - i
    ht = _htilde(prob, i)
    if not ht.is_constant:
        return BoundVerdict(i, "HypothesisUnverified", "c.2",
                            reason=f"htilde_{i} not constant (max rel. deviation {ht.max_rel_deviation:.3g})")
    ct = ht.value_at_zero
    gamma = P.p(i, i) + P.p(i, j) / ct
    log_pref = P.p(i, j) * (math.log(prob.y0(j)) - math.log(prob.y0(i)) / ct)
    details = {"role": [i, j], "c_tilde": ct, "gamma_i": gamma, "prefactor": float(np.exp(log_pref))}
    if gamma <= 1:
        return BoundVerdict(i, "GlobalCertificate", "c.2", reason="gamma_i <= 1", details=details)
    details["threshold"] = prob.y0(i) ** (1 - gamma) / (gamma - 1)
    return _scalar_verdict(i, "c.2", "global", prob.y0(i), PowerLaw(gamma), log_pref, prob.h(i), details)


def prop1_check(prob: CompanionProblem, i: int) -> BoundVerdict:
    """Blow-up certificate from ``y_i' >= y_j(0)^{p_ij} h_i y_i^{p_ii}`` (needs p_ii > 1)."""
    P, j = prob.exponents, 3 - i
    pii = P.p(i, i)
    if not pii > 1:
        return BoundVerdict(i, "Inconclusive", "prop1", reason="p_ii <= 1")
    log_pref = P.p(i, j) * math.log(prob.y0(j))
    details = {"p_ii": pii, "threshold": float(np.exp((1 - pii) * math.log(prob.y0(i)) - log_pref)) / (pii - 1)}
    v = _scalar_verdict(i, "prop1", "upper", prob.y0(i), PowerLaw(pii), log_pref, prob.h(i), details)
    v.details["integral_h"] = v.details.get("G_infinity")
    if v.kind == "UpperBound":
        v.kind = "BlowUpCertificate"
    return v


def corollary_classify(exponents: ExponentMatrix) -> str:
    """``BlowUp`` iff p11 > 1, p22 > 1 or (p11-1)(p22-1) - p12 p21 < 0 (constant h)."""
    P = exponents
    if P.p11 > 1 or P.p22 > 1 or (P.p11 - 1) * (P.p22 - 1) - P.p12 * P.p21 < 0:
        return "BlowUp"
    return "NotCovered"


_CASE_VERDICTS = {
    "a": (verdict_a1, verdict_a2),
    "b": (verdict_b1, verdict_b2),
    "c": (verdict_c1, verdict_c2),
}


def theorem_verdicts(prob: CompanionProblem, dispatch: Optional[Dispatch] = None) -> list[BoundVerdict]:
    d = dispatch or case_dispatch(prob.exponents)
    out = []
    for case, i, _ in d.roles:
        for fn in _CASE_VERDICTS[case]:
            out.append(fn(prob, i, d))
    return out


def summarize(verdicts: list[BoundVerdict]) -> dict:
    """Per component: the tightest upper bound, or a global certificate."""
    summary = {}
    for k in (1, 2):
        mine = [v for v in verdicts if v.component == k]
        uppers = [v for v in mine if v.kind in ("UpperBound", "BlowUpCertificate")]
        globals_ = [v for v in mine if v.kind == "GlobalCertificate"]
        if uppers:
            best = min(uppers, key=lambda v: v.tau_bar)
            summary[k] = {"kind": "UpperBound", "tau_bar": best.tau_bar, "case": best.case}
        elif globals_:
            summary[k] = {"kind": "GlobalCertificate", "case": globals_[0].case}
        else:
            summary[k] = {"kind": "Inconclusive"}
    finite = [s["tau_bar"] for s in summary.values() if s["kind"] == "UpperBound"]
    summary["system"] = {"tau_upper": min(finite)} if finite else {}
    return summary


def all_verdicts(prob: CompanionProblem, override: Optional[str] = None) -> dict:
    """Dispatch, every applicable verdict, single-component blow-up checks and the summary."""
    d = case_dispatch(prob.exponents, override=override)
    verdicts = theorem_verdicts(prob, d) if d.label != "unsupported" else []
    for i in (1, 2):
        if prob.exponents.p(i, i) > 1:
            verdicts.append(prop1_check(prob, i))
    report = {
        "case": d.label,
        "a": [d.a1, d.a2],
        "roles": [list(r) for r in d.roles],
        "verdicts": [v.to_dict() for v in verdicts],
        "summary": {str(k): v for k, v in summarize(verdicts).items()},
    }
    if d.label == "unsupported":
        report["note"] = "no case of the bound theorem applies (a_1, a_2 not covered)"
    if prob.h1.is_constant and prob.h2.is_constant:
        report["corollary"] = corollary_classify(prob.exponents)
    return report


def certify_global(prob: CompanionProblem) -> list[dict]:
    """Global certificates for both components, or an empty list."""
    d = case_dispatch(prob.exponents)
    if d.label == "unsupported":
        return []
    verdicts = theorem_verdicts(prob, d)
    certs = {}
    for v in verdicts:
        if v.kind == "GlobalCertificate":
            certs.setdefault(v.component, v.to_dict())
    if set(certs) == {1, 2} and not any(v.kind == "UpperBound" for v in verdicts):
        return [certs[1], certs[2]]
    return []


def inequality_slack(prob: CompanionProblem, traj: CompanionTrajectory,
                     dispatch: Optional[Dispatch] = None) -> dict:
    """Minimum relative slack of the comparison inequalities along ``traj``.

    Keys are ``"19:i"``, ``"20:i"`` or ``"21:i"``; a value below zero means the
    inequality fails at some sample by that relative amount.
    """
    d = dispatch or case_dispatch(prob.exponents)
    t = traj.t
    y = traj.y
    out = {}
    for case, i, j in d.roles:
        log_yi, yj = np.log(y[:, i - 1]), y[:, j - 1]
        log_ht = np.log(np.broadcast_to(_htilde(prob, i)(t), t.shape))
        # slack = 1 - rhs / lhs, with the ratio formed in log space
        with np.errstate(over="ignore", divide="ignore"):
            if case == "a":
                ai, aj = d.a(i), d.a(j)
                log_ratio = constant_c19(prob, i, d).log_c + log_ht / ai + (aj / ai) * np.log(yj) - log_yi
                out[f"19:{i}"] = float(np.min(1 - np.exp(log_ratio)))
            elif case == "b":
                log_c = constant_c20(prob, i, d).log_c
                ratio = np.exp(log_c + log_ht - d.a(i) * log_yi) * np.log(yj)
                out[f"20:{i}"] = float(np.min(1 - ratio))
            else:
                log_ratio = math.log(prob.y0(i)) + np.exp(log_ht) * np.log(yj / prob.y0(j)) - log_yi
                out[f"21:{i}"] = float(np.min(1 - np.exp(log_ratio)))
    return out
