"""Acceptance criteria 1-12. Each test carries ``criterion(n)``; the terminal
summary prints one PASS/FAIL line per criterion."""
import math
import time

import numpy as np
import pytest

from blowlab.bounds import (
    case_dispatch,
    corollary_classify,
    inequality_slack,
    prop1_check,
    verdict_a1,
    verdict_c1,
)
from blowlab.cli import lemma1_fuzz
from blowlab.coeffs import TimeCoefficient
from blowlab.companion import BlowUp, Bracket, CompanionProblem, ExponentMatrix, blow_up_bracket, solve
from blowlab.config import DEFAULT_SEED
from blowlab.osgood import OsgoodProblem, PowerLaw, blow_up_time
from blowlab.pde import (
    Constant,
    ConstantMinusBump,
    Grid,
    PDEConfig,
    domination_margin,
    far_field_error,
    heat_multiply,
    picard_validate,
    run,
    space_infinity_report,
)

ONE = TimeCoefficient.parse("1")
DECAY = TimeCoefficient.parse("exp(-t)")
RICCATI = ExponentMatrix.from_rows([[0, 2], [2, 0]])
SNAPSHOTS = tuple(round(0.05 * n, 10) for n in range(1, 20))


class Timer:
    def __init__(self, limit):
        self.limit = limit

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.elapsed < self.limit, f"runtime {self.elapsed:.2f}s exceeds {self.limit}s"


def problem(rows, y1, y2, h1=ONE, h2=ONE):
    return CompanionProblem(ExponentMatrix.from_rows(rows), h1, h2, y1, y2)


@pytest.mark.criterion(1)
def test_scalar_blow_up_formula():
    rng = np.random.default_rng(DEFAULT_SEED)
    with Timer(1.0):
        for p, M in zip(rng.uniform(1.0, 5.0, 20), rng.uniform(0.5, 10.0, 20)):
            p = max(p, 1.01)
            tau = blow_up_time(OsgoodProblem(M, ONE, PowerLaw(p)))
            assert tau == pytest.approx(M ** (1 - p) / (p - 1), rel=1e-10)


@pytest.mark.criterion(2)
def test_non_autonomous_scalar():
    with Timer(1.0):
        assert blow_up_time(OsgoodProblem(2.0, DECAY, PowerLaw(2))) == pytest.approx(math.log(2), abs=1e-9)
        assert math.isinf(blow_up_time(OsgoodProblem(0.5, DECAY, PowerLaw(2))))


@pytest.mark.criterion(3)
def test_symmetric_system_exactness():
    with Timer(5.0):
        prob = problem([[0, 2], [2, 0]], 1.0, 1.0)
        b = blow_up_bracket(prob)
        assert isinstance(b, Bracket) and 1.0 in b and b.width <= 1e-6
        v = verdict_a1(prob, 1)
        assert v.kind == "UpperBound" and abs(v.tau_bar - 1.0) <= 1e-9
        assert corollary_classify(prob.exponents) == "BlowUp"


@pytest.mark.criterion(4)
def test_case_c_tightness():
    with Timer(5.0):
        prob = problem([[2, 1], [1, 2]], 1.0, 1.0)
        v = verdict_c1(prob, 1)
        assert v.kind == "UpperBound" and abs(v.tau_bar - 0.5) <= 1e-9
        assert 0.5 in blow_up_bracket(prob)


@pytest.mark.criterion(5)
def test_proposition1_sharpness():
    with Timer(10.0):
        v = prop1_check(problem([[2, 0], [0, 0]], 2.0, 1.0, DECAY), 1)
        assert v.kind == "BlowUpCertificate" and abs(v.tau_bar - math.log(2)) <= 1e-9
        prob = problem([[2, 0], [0, 0]], 0.5, 1.0, DECAY)
        assert prop1_check(prob, 1).kind == "Inconclusive"
        traj = solve(prob, 1e3)
        assert not isinstance(traj.status, BlowUp)
        assert traj.t[-1] == 1e3 and np.max(traj.y1) < 1e3 * 0.5


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
        h2 = TimeCoefficient.parse(f"{rng.uniform(0.5, 2):.3f}")
        prob = CompanionProblem(E, ONE, h2, *rng.uniform(1.1, 2.0, 2))
        d = case_dispatch(E, tol=1e-9)
        if d.label != case:
            continue
        traj = solve(prob, 1e3)
        if isinstance(traj.status, BlowUp):
            return prob, traj, d


@pytest.mark.criterion(6)
def test_comparison_constant_inequalities():
    rng = np.random.default_rng(DEFAULT_SEED)
    worst = math.inf
    with Timer(30.0):
        for case in "aaaabbbccc":
            prob, traj, d = _random_blowup(rng, case)
            slack = inequality_slack(prob, traj, d)
            assert slack
            worst = min(worst, *slack.values())
    assert worst >= -1e-8


@pytest.mark.criterion(7)
def test_lemma1_identity():
    with Timer(10.0):
        assert lemma1_fuzz(1000, DEFAULT_SEED) <= 1e-8


@pytest.mark.criterion(8)
def test_pde_homogeneous_exactness():
    with Timer(30.0):
        cfg = PDEConfig(RICCATI, ONE, ONE, ONE, ONE, Constant(1.0), Constant(1.0), N=64,
                        T_end=0.75, snapshot_times=(0.25, 0.5))
        r = run(cfg)
    for s in r.snapshots[1:]:
        y = 1 / (1 - s.t)
        assert s.y1 == pytest.approx(y, rel=1e-10)
        for v in (s.sup1, s.sup2, s.center1, s.center2, s.far1, s.far2):
            assert v == pytest.approx(y, rel=1e-4)
    assert [s.t for s in r.snapshots[1:]] == [0.25, 0.5, 0.75]


@pytest.fixture(scope="module")
def bump_run():
    bump = ConstantMinusBump(1.0, 0.5, 1.0)
    cfg = PDEConfig(RICCATI, ONE, ONE, ONE, ONE, bump, bump, N=512, T_end=2.0, snapshot_times=SNAPSHOTS)
    t0 = time.perf_counter()
    r = run(cfg)
    return r, time.perf_counter() - t0


@pytest.mark.criterion(9)
def test_far_field_tracking(bump_run):
    r, elapsed = bump_run
    assert elapsed < 120
    assert far_field_error(r, 0.8) <= 1e-3
    assert domination_margin(r) <= 1e-6


@pytest.mark.criterion(10)
def test_separation_at_last_stable_time(bump_run):
    r, elapsed = bump_run
    assert elapsed < 120 and r.status == "BlowUpDetected"
    rep = space_infinity_report(r)
    for i in (0, 1):
        assert rep["center"][i] <= 0.9 * rep["far"][i]


@pytest.mark.criterion(10)
@pytest.mark.xfail(strict=True, reason=(
    "the center/far ratio of the exact dynamics rises for t < ~0.2 (its initial slope is +0.25 for "
    "this data) before decreasing; monotonicity over all snapshots does not hold"))
def test_center_far_ratio_nonincreasing(bump_run):
    r, _ = bump_run
    assert space_infinity_report(r)["ratio_nonincreasing"]


@pytest.mark.criterion(11)
def test_picard_vs_splitting():
    bump = ConstantMinusBump(1.0, 0.5, 1.0)
    cfg = PDEConfig(RICCATI, ONE, ONE, ONE, ONE, bump, bump, N=64)
    with Timer(60.0):
        rep = picard_validate(cfg, iterations=20)
    assert rep.discrepancy <= 1e-5
    assert rep.contraction_ok and not rep.diverging
    d = rep.distances
    assert all(d1 <= d0 / 2 for d0, d1 in zip(d, d[1:]) if d0 > 1e-11)


@pytest.mark.criterion(12)
def test_diffusion_exactness():
    with Timer(5.0):
        g = Grid(1, 256, 15.0)
        s0, K = 1.0, 0.5
        x = g.axis
        u0 = np.exp(-x**2 / (4 * s0))
        exact = math.sqrt(s0 / (s0 + K)) * np.exp(-x**2 / (4 * (s0 + K)))
        assert max(u0[0], exact[0]) < 1e-14  # tail mass at the box edge
        assert np.max(np.abs(heat_multiply(g, u0, K) - exact)) <= 1e-10
