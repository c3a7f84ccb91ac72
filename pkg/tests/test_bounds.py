import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings, strategies as st

from blowlab.bounds import (
    all_verdicts,
    case_dispatch,
    certify_global,
    constant_c19,
    constant_c20,
    corollary_classify,
    inequality_slack,
    prop1_check,
    theorem_verdicts,
    verdict_a1,
    verdict_a2,
    verdict_b1,
    verdict_b2,
    verdict_c1,
    verdict_c2,
)
from blowlab.cli import dumps
from blowlab.coeffs import TimeCoefficient
from blowlab.companion import BlowUp, CompanionProblem, ExponentMatrix, blow_up_bracket, solve

ONE = TimeCoefficient.parse("1")
DECAY = TimeCoefficient.parse("exp(-t)")


def prob(rows, y1=1.0, y2=1.0, h1="1", h2="1"):
    return CompanionProblem(ExponentMatrix.from_rows(rows), TimeCoefficient.parse(h1),
                            TimeCoefficient.parse(h2), y1, y2)


@pytest.mark.parametrize("rows, label, a", [
    ([[0, 2], [2, 0]], "a", (3, 3)),
    ([[2, 1], [1, 2]], "c", (0, 0)),
    ([[0, 1], [1, 2]], "b", (2, 0)),
    ([[2, 0], [0, 2]], "unsupported", (-1, -1)),
])
def test_dispatch_examples(rows, label, a):
    d = case_dispatch(ExponentMatrix.from_rows(rows))
    assert d.label == label and (d.a1, d.a2) == pytest.approx(a)


def test_dispatch_roles_and_override():
    d = case_dispatch(ExponentMatrix.from_rows([[0, 2], [2, 0]]))
    assert d.roles == (("a", 1, 2), ("a", 2, 1))
    near = ExponentMatrix.from_rows([[2, 1 + 1e-9], [1 + 1e-9, 2]])
    assert case_dispatch(near).label == "a"
    assert case_dispatch(near, override="c").label == "c"
    with pytest.raises(ValueError):
        case_dispatch(ExponentMatrix.from_rows([[0, 2], [2, 0]]), override="c")


def test_constants():
    c = constant_c19(prob([[0, 2], [2, 0]]), 1)
    assert c.M == 1.0 and c.c == 1.0
    c = constant_c20(prob([[0, 1], [1, 2]], 1.0, 2.0), 1)
    assert c.M == pytest.approx(math.log(2)) and c.c == pytest.approx(1 / math.log(2), rel=1e-14)


def test_a1_examples():
    v = verdict_a1(prob([[0, 2], [2, 0]]), 1)
    assert v.kind == "UpperBound" and v.case == "a.1" and v.tau_bar == pytest.approx(1.0, abs=1e-9)
    p = prob([[0, 2], [2, 0]], 2.0, 2.0)
    v = verdict_a1(p, 1)
    assert v.kind == "UpperBound" and v.tau_bar == pytest.approx(0.5, rel=1e-9)
    assert blow_up_bracket(p).t_lo <= v.tau_bar * (1 + 1e-6)
    v = verdict_a1(prob([[0.5, 0.25], [0.25, 0.5]]), 1)
    assert v.kind == "Inconclusive" and "alpha" in v.reason


def test_a2_examples():
    v = verdict_a2(prob([[0.5, 0.1], [0.1, 0.5]]), 1)
    assert v.kind == "GlobalCertificate" and v.details["alpha_i"] == pytest.approx(0.6)
    assert verdict_a2(prob([[0.5, 0.5], [0.5, 0.5]]), 2).kind == "GlobalCertificate"  # alpha = 1
    p = prob([[0, 2], [2, 0]], 0.1, 0.1, "exp(-t)", "exp(-t)")
    v = verdict_a2(p, 1)
    assert v.kind == "GlobalCertificate" and v.details["F_infinity"] == pytest.approx(1.0)
    assert not isinstance(solve(p, 1e3).status, BlowUp)


def test_a2_negative_aj_is_unverified():
    p = prob([[2.8, 0.26], [1.81, 1.46]])
    assert verdict_a2(p, 1).kind == "HypothesisUnverified"


def test_b_examples():
    p = prob([[0, 1], [1, 2]], 1.0, 2.0)
    v = verdict_b1(p, 1)
    ref = float(mpmath.quad(lambda s: 1 / (s**2 * mpmath.sqrt(mpmath.log(s))), [2, mpmath.inf]))
    assert v.details["B_infinity"] == pytest.approx(ref, rel=1e-10)
    assert ref == pytest.approx(0.42367299648892, rel=1e-12)
    # rate c20^{p21/a1} = (1/ln 2)^{1/2}
    assert v.kind == "UpperBound" and v.tau_bar == pytest.approx(ref * math.sqrt(math.log(2)), rel=1e-9)
    assert blow_up_bracket(p).t_hi <= v.tau_bar
    assert verdict_b1(prob([[0, 1], [1, 2]], 1.0, 0.5), 1).kind == "HypothesisUnverified"


def test_b2_exppower_against_oracle():
    p = prob([[0, 1], [1, 2]], 1.0, 2.0, "exp(-t)", "exp(-t)")
    v = verdict_b2(p, 1)
    ln2 = math.log(2)
    assert v.details["exp_coefficient"] == pytest.approx(ln2)
    ref = float(mpmath.quad(lambda s: mpmath.exp(-ln2 * s**2), [1, mpmath.inf]))
    assert v.details["B_infinity"] == pytest.approx(ref, rel=1e-9)
    assert v.kind == ("GlobalCertificate" if 1.0 <= ref else "Inconclusive")
    assert verdict_b2(prob([[0, 1], [1, 2]], 1.0, 2.0, "exp(-t)", "1"), 1).kind == "HypothesisUnverified"


def test_c_examples():
    v = verdict_c1(prob([[2, 1], [1, 2]]), 1)
    assert v.kind == "UpperBound" and v.tau_bar == pytest.approx(0.5, abs=1e-9)
    assert v.details["prefactor"] == 1.0
    # beta_j = p_jj + p_ji c~ with prefactor (y_i0 / y_j0^{c~})^{p_ji}
    p = prob([[3, 1], [2, 2]], 1.0, 2.0, "3", "1")
    v = verdict_c1(p, 1)
    assert v.kind == "UpperBound" and v.tau_bar == pytest.approx(1 / 14, rel=1e-9)
    assert blow_up_bracket(p).t_lo <= v.tau_bar * (1 + 1e-6)
    v = verdict_c2(prob([[1, 0], [0, 1]]), 1)
    assert v.kind == "GlobalCertificate"
    assert verdict_c1(prob([[2, 1], [1, 2]], h1="exp(-t)"), 1).kind == "HypothesisUnverified"


def test_small_exponents_give_global_case_a():
    p = prob([[0.3, 0.2], [0.2, 0.3]])
    r = all_verdicts(p)
    assert r["case"] == "a"
    assert [r["summary"][k]["kind"] for k in ("1", "2")] == ["GlobalCertificate"] * 2
    assert len(certify_global(p)) == 2


def test_prop1_examples():
    p = CompanionProblem(ExponentMatrix.from_rows([[2, 0], [0, 0]]), DECAY, ONE, 2.0, 1.0)
    v = prop1_check(p, 1)
    assert v.kind == "BlowUpCertificate" and v.tau_bar == pytest.approx(math.log(2), abs=1e-9)
    p = CompanionProblem(ExponentMatrix.from_rows([[2, 0], [0, 0]]), DECAY, ONE, 0.5, 1.0)
    assert prop1_check(p, 1).kind == "Inconclusive"
    assert prop1_check(prob([[2, 0.3], [0, 0]], 0.01, 5.0), 1).kind == "BlowUpCertificate"
    assert prop1_check(prob([[1, 0], [0, 0]]), 1).reason == "p_ii <= 1"


@pytest.mark.parametrize("rows, expected", [
    ([[0, 2], [2, 0]], "BlowUp"),
    ([[2, 0], [0, 0.5]], "BlowUp"),
    ([[1, 0], [0, 1]], "NotCovered"),
])
def test_corollary_examples(rows, expected):
    assert corollary_classify(ExponentMatrix.from_rows(rows)) == expected


def test_report_is_json_serializable():
    r = all_verdicts(prob([[0, 1], [1, 2]], 1.0, 2.0))
    back = json.loads(dumps(r))
    assert back["case"] == "b" and back["corollary"] == "BlowUp"
    assert all_verdicts(prob([[2, 0], [0, 2]]))["note"]


def test_extreme_exponents_do_not_crash():
    # c19 ** p_ji underflows in linear space; the log-space constant keeps the verdict
    p = prob([[0.01, 2.99], [0.02, 0.01]], 0.5, 2.0)
    for v in theorem_verdicts(p):
        assert v.kind in ("UpperBound", "GlobalCertificate", "Inconclusive", "HypothesisUnverified")


def test_decaying_htilde_rate_is_evaluable():
    # h2 = exp(-t): h2 * (h2/h1)^{-2/3} is 0 * inf far out unless the powers are grouped
    p = prob([[0, 2], [2, 0]], 1.0, 1.0, "1", "exp(-t)")
    v = verdict_a1(p, 2)
    assert v.kind == "UpperBound"
    assert blow_up_bracket(p).t_lo <= v.tau_bar
    assert verdict_a2(p, 2).kind in ("GlobalCertificate", "Inconclusive")


_exp = st.floats(0.0, 3.0).map(lambda x: round(x, 2))
_y = st.floats(0.5, 2.0)


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.lists(_exp, min_size=4, max_size=4), _y, _y, st.sampled_from(["1", "2", "1+t", "exp(-t/4)", "1/(1+t)^2"]))
def test_upper_bounds_are_sound(p, y1, y2, h2):
    pr = prob([p[:2], p[2:]], y1, y2, "1", h2)
    r = all_verdicts(pr)
    ups = [v["tau_bar"] for v in r["verdicts"] if v["kind"] in ("UpperBound", "BlowUpCertificate")]
    assume(ups)
    # the escape time of the companion trajectory is a lower bound on the blow-up time
    st_ = solve(pr, 1e4).status
    assert isinstance(st_, BlowUp)
    assert st_.t_lo <= min(ups) * (1 + 1e-6)


@settings(max_examples=80, deadline=None)
@given(st.lists(_exp, min_size=4, max_size=4), _y, _y)
def test_corollary_theorem_consistency(p, y1, y2):
    P = ExponentMatrix.from_rows([p[:2], p[2:]])
    d = case_dispatch(P)
    assume(d.label == "a")
    pr = CompanionProblem(P, ONE, TimeCoefficient.parse("2"), y1, y2)
    a1 = any(v.kind == "UpperBound" and v.case == "a.1" for v in theorem_verdicts(pr, d))
    det = (P.p11 - 1) * (P.p22 - 1) - P.p12 * P.p21
    assume(abs(det) > 1e-9)
    # alpha_j - 1 = -det / a_i, so a.1 fires exactly on the determinant disjunct
    assert a1 == (det < 0)
    prop1 = any(prop1_check(pr, i).kind == "BlowUpCertificate" for i in (1, 2))
    assert (corollary_classify(P) == "BlowUp") == (a1 or prop1)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 0.3), min_size=4, max_size=4), _y, _y)
def test_global_certificates_are_sound_sublinear(p, y1, y2):
    pr = prob([p[:2], p[2:]], y1, y2)
    certs = certify_global(pr)
    assert certs  # row sums <= 0.6 are always certified
    traj = solve(pr, 1e3)
    assert not isinstance(traj.status, BlowUp)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.02, 0.45), st.floats(0.02, 0.45))
def test_global_certificates_are_sound_decaying(y1, y2):
    pr = prob([[0, 2], [2, 0]], y1, y2, "exp(-t)", "exp(-t)")
    if certify_global(pr):
        assert not isinstance(solve(pr, 1e3).status, BlowUp)


def _random_blowup(rng, case):
    while True:
        if case == "a":
            P = rng.uniform(0, 2.5, (2, 2))
        elif case == "b":
            p11, p22 = rng.uniform(0, 1), rng.uniform(1.2, 2.5)
            P = np.array([[p11, p22 - 1], [rng.uniform(p11, 2.5), p22]])
        else:
            p11, p22 = rng.uniform(1.2, 2.5), rng.uniform(1.2, 2.5)
            P = np.array([[p11, p22 - 1], [p11 - 1, p22]])
        E = ExponentMatrix.from_rows(P.tolist())
        pr = CompanionProblem(E, ONE, TimeCoefficient.parse(f"{rng.uniform(0.5, 2):.3f}"),
                              *rng.uniform(1.1, 2.0, 2))
        d = case_dispatch(E, tol=1e-9)
        if d.label != case:
            continue
        traj = solve(pr, 1e3)
        if isinstance(traj.status, BlowUp):
            return pr, traj, d


@pytest.mark.parametrize("case", ["a", "b", "c"])
def test_comparison_inequalities_hold(case):
    rng = np.random.default_rng({"a": 1, "b": 2, "c": 3}[case])
    for _ in range(4):
        pr, traj, d = _random_blowup(rng, case)
        slack = inequality_slack(pr, traj, d)
        assert slack and min(slack.values()) >= -1e-8, slack
