import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blowlab.coeffs import TimeCoefficient
from blowlab.companion import ExponentMatrix
from blowlab.pde import (
    SNAPSHOT_COLUMNS,
    Constant,
    ConstantMinusBump,
    FieldPair,
    Grid,
    PDEConfig,
    RadialTable,
    default_T_short,
    diffusion_step,
    domination_margin,
    far_field_error,
    heat_multiply,
    initial_fields,
    picard_validate,
    reaction_step,
    run,
    space_infinity_report,
    strang_step,
)

ONE = TimeCoefficient.parse("1")
RICCATI = ExponentMatrix.from_rows([[0, 2], [2, 0]])


def config(profile, **kw):
    return PDEConfig(RICCATI, ONE, ONE, ONE, ONE, profile, profile, **kw)


def test_profile_validation():
    with pytest.raises(ValueError):
        ConstantMinusBump(1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        RadialTable((0.0, 1.0), (0.5, 2.0), 1.0)
    with pytest.raises(ValueError):
        Grid(1, 100, 1.0)
    t = RadialTable((0.0, 2.0), (0.5, 1.0), 1.0)
    assert t.evaluate(np.array([1.0, 5.0])) == pytest.approx([0.75, 1.0])


def test_constant_field_unchanged_by_diffusion():
    g = Grid(1, 64, 5.0)
    u = np.full(g.shape, 3.0)
    assert heat_multiply(g, u, 0.7) == pytest.approx(u, rel=1e-15)


def test_gaussian_heat_oracle():
    g = Grid(1, 256, 15.0)
    s0, K = 1.0, 0.5
    x = g.axis
    out = heat_multiply(g, np.exp(-x**2 / (4 * s0)), K)
    exact = math.sqrt(s0 / (s0 + K)) * np.exp(-x**2 / (4 * (s0 + K)))
    assert np.max(np.abs(out - exact)) <= 1e-10


def test_diffusion_identity_and_order():
    cfg = config(ConstantMinusBump(1.0, 0.5, 1.0), N=64, L=8.0)
    g = cfg.grid()
    f = initial_fields(cfg, g)
    assert np.array_equal(diffusion_step(cfg, g, f, 1, 0.3, 0.3).u, f.u)
    with pytest.raises(ValueError):
        diffusion_step(cfg, g, f, 1, 0.5, 0.3)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 5.0), st.integers(1, 2), st.floats(0.2, 2.0))
def test_diffusion_preserves_mean(K, dim, sigma):
    g = Grid(dim, 32, 6.0)
    u = ConstantMinusBump(2.0, 1.5, sigma).evaluate(g.radius())
    out = heat_multiply(g, u, K)
    assert abs(out.mean() - u.mean()) <= 1e-13 * abs(u.mean())
    assert out.min() >= 0


def test_reaction_examples():
    f = FieldPair(np.ones((2, 16)), 0.0)
    cfg = config(Constant(1.0))
    out = reaction_step(cfg.companion, f, 0.0, 0.1)
    assert out.u == pytest.approx(np.full((2, 16), 1 / 0.9), abs=1e-6)
    assert np.array_equal(reaction_step(cfg.companion, f, 0.0, 0.0).u, f.u)


def test_reaction_uses_stage_times():
    # all exponents zero: u' = h(t) = 1 + t, so u(1) - u(0) = 3/2, not h(0) = 1
    zero = ExponentMatrix.from_rows([[0, 0], [0, 0]])
    cfg = PDEConfig(zero, TimeCoefficient.parse("1+t"), TimeCoefficient.parse("1+t"), ONE, ONE,
                    Constant(1.0), Constant(1.0))
    out = reaction_step(cfg.companion, FieldPair(np.ones((2, 16)), 0.0), 0.0, 1.0)
    assert out.u == pytest.approx(np.full((2, 16), 2.5), rel=1e-12)


def test_strang_constant_data_matches_riccati():
    cfg = config(Constant(1.0), N=16, L=4.0)
    g = cfg.grid()
    f = initial_fields(cfg, g)
    dt = 0.01
    for n in range(50):
        f = strang_step(cfg, g, f, n * dt, dt)
    assert f.t == pytest.approx(0.5)
    assert np.max(np.abs(f.u / 2.0 - 1)) <= 1e-5
    assert np.ptp(f.u[0]) <= 1e-12


def _strang_to(cfg, g, T, n):
    f = initial_fields(cfg, g)
    dt = T / n
    for m in range(n):
        f = strang_step(cfg, g, f, m * dt, dt)
    return f.u


def test_strang_second_order():
    cfg = PDEConfig(RICCATI, TimeCoefficient.parse("1+t"), ONE, ONE, TimeCoefficient.parse("0.5"),
                    ConstantMinusBump(1.0, 0.5, 1.0), ConstantMinusBump(0.8, 0.3, 0.7), N=64, L=10.0)
    g = cfg.grid()
    ref = _strang_to(cfg, g, 0.3, 192)
    errs = [np.max(np.abs(_strang_to(cfg, g, 0.3, n) - ref)) for n in (6, 12, 24)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(3.3 <= r <= 4.7 for r in ratios), (errs, ratios)


def test_symmetry():
    cfg = config(ConstantMinusBump(1.0, 0.5, 1.0), N=64, T_end=0.5, snapshot_times=(0.25,))
    r = run(cfg)
    u = r.fields.u
    N = cfg.N
    mirror = (N - np.arange(N)) % N
    assert np.max(np.abs(u[:, mirror] - u)) <= 1e-12 * np.max(u)


def test_picard_constant_data():
    rep = picard_validate(config(Constant(1.0), N=32), T_short=0.05)
    assert rep.discrepancy <= 1e-6


def test_picard_bump_contracts():
    rep = picard_validate(config(ConstantMinusBump(1.0, 0.5, 1.0), N=64), T_short=0.05, iterations=20)
    assert rep.contraction_ok and not rep.diverging
    assert rep.discrepancy <= 1e-5
    assert len(rep.distances) == 20


def test_picard_zero_iterations_is_baseline():
    rep = picard_validate(config(ConstantMinusBump(1.0, 0.5, 1.0), N=32), T_short=0.05, iterations=0)
    assert rep.distances == [] and 0 < rep.discrepancy < math.inf


def test_default_T_short():
    cfg = config(Constant(1.0))
    assert default_T_short(cfg) == pytest.approx(0.25 / 4, rel=1e-10)  # R = 2, R^2 T = 1/4


def test_constant_data_run():
    cfg = config(Constant(1.0), N=64, T_end=2.0, snapshot_times=(0.25, 0.5, 0.75))
    r = run(cfg)
    assert r.status == "BlowUpDetected" and 0.99 < r.t_last < 1.0
    s = next(s for s in r.snapshots if s.t == 0.5)
    for v in (s.sup1, s.center1, s.far1, s.sup2):
        assert v == pytest.approx(2.0, rel=1e-4)
    rep = space_infinity_report(r)
    assert all(x[1] == pytest.approx(1.0, rel=1e-12) for x in rep["center_over_far"])


def test_bump_run_examples():
    cfg = config(ConstantMinusBump(1.0, 0.5, 1.0), N=256, T_end=2.0, snapshot_times=(0.25, 0.5, 0.75))
    r = run(cfg)
    s = next(s for s in r.snapshots if s.t == 0.5)
    assert abs(s.far1 - 2.0) <= 1e-3 and s.center1 < s.far1
    assert domination_margin(r) <= 1e-6
    assert far_field_error(r, 0.8) <= 1e-3
    rep = space_infinity_report(r)
    assert rep["radii"]["L/2"]["max1"] <= rep["far"][0] + 1e-8
    assert rep["center"][0] <= 0.9 * rep["far"][0]
    assert r.fields.u.min() >= 0


def test_space_infinity_report_needs_blow_up():
    r = run(config(Constant(1.0), N=16, T_end=0.1))
    assert r.status == "Completed"
    with pytest.raises(ValueError):
        space_infinity_report(r)


def test_csv_outputs():
    r = run(config(ConstantMinusBump(1.0, 0.5, 1.0), N=32, T_end=0.1, snapshot_times=(0.05,)))
    lines = r.to_csv().splitlines()
    assert lines[0].split(",") == SNAPSHOT_COLUMNS
    assert [float(x.split(",")[0]) for x in lines[1:]] == [0.0, 0.05, 0.1]
    buf = io.StringIO()
    r.dump_fields(buf)
    text = buf.getvalue().splitlines()
    assert text[0].startswith("# dim=1 N=32") and len(text) == 2 + 32


def test_self_convergence():
    base = dict(T_end=0.6, snapshot_times=(0.2, 0.4))
    a = run(config(ConstantMinusBump(1.0, 0.5, 1.0), N=256, dt_max=0.01, **base))
    b = run(config(ConstantMinusBump(1.0, 0.5, 1.0), N=512, dt_max=0.005, **base))
    for sa, sb in zip(a.snapshots, b.snapshots):
        assert sa.t == sb.t
        for x, y in zip(sa.row()[1:7], sb.row()[1:7]):
            assert abs(x - y) <= 1e-4 * abs(y)
