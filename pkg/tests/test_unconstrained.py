import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import exit_time_oracle, rk4_position
from roundabout_ocbf.errors import SolverError
from roundabout_ocbf.unconstrained import beta_from_alpha, eval_reference, solve_unconstrained


def test_beta_from_alpha():
    assert beta_from_alpha(0.2, 5.0, -5.0) == pytest.approx(3.125)
    assert beta_from_alpha(0.0, 5.0, -5.0) == 0.0
    with pytest.raises(ValueError):
        beta_from_alpha(1.0, 5.0, -5.0)


def test_reference_example_matches_oracle():
    p = solve_unconstrained(0.0, 10.0, 180.0, 3.125)
    assert np.linalg.norm(p.residuals()) <= 1e-9
    assert p.tf == pytest.approx(exit_time_oracle(10.0, 180.0, 3.125), abs=1e-8)
    x, _ = rk4_position(lambda t: p.a * t + p.b, 10.0, p.tf)
    assert x == pytest.approx(180.0, abs=1e-6)
    assert p.a * p.tf + p.b == pytest.approx(0.0, abs=1e-9)


def test_doubling_beta_shortens_exit_time():
    p1 = solve_unconstrained(0.0, 10.0, 180.0, 3.125)
    p2 = solve_unconstrained(0.0, 10.0, 180.0, 6.25)
    assert p2.tf < p1.tf


def test_reference_endpoints_and_coasting():
    p = solve_unconstrained(3.0, 8.0, 240.0, 2.0)
    u, v, x = eval_reference(p, p.t0)
    assert (v, x) == (pytest.approx(8.0), pytest.approx(0.0, abs=1e-12))
    u, v, x = eval_reference(p, p.tf)
    assert u == pytest.approx(0.0, abs=1e-12)
    assert x == pytest.approx(240.0, abs=1e-9)
    u2, v2, x2 = eval_reference(p, p.tf + 2.0)
    assert u2 == 0.0 and v2 == pytest.approx(v) and x2 == pytest.approx(240.0 + 2.0 * v)


def test_reference_derivatives_match_finite_differences():
    p = solve_unconstrained(0.0, 12.0, 120.0, 1.0)
    h = 1e-4
    for t in np.linspace(0.1, p.tf - 0.1, 7):
        u, v, x = eval_reference(p, t)
        _, v_hi, x_hi = eval_reference(p, t + h)
        _, v_lo, x_lo = eval_reference(p, t - h)
        assert (x_hi - x_lo) / (2 * h) == pytest.approx(v, abs=1e-6)
        assert (v_hi - v_lo) / (2 * h) == pytest.approx(u, abs=1e-6)


def test_reference_matches_euler_integration():
    p = solve_unconstrained(0.0, 10.0, 180.0, 3.125)
    h, x, v, t = 1e-4, 0.0, 10.0, 0.0
    t_mid = 0.5 * p.tf
    while t < t_mid - 1e-12:
        u = p.a * t + p.b
        x += v * h + 0.5 * u * h * h
        v += u * h
        t += h
    _, v_ref, x_ref = eval_reference(p, t)
    assert x == pytest.approx(x_ref, abs=1e-3)
    assert v == pytest.approx(v_ref, abs=1e-3)


def test_shift_invariance():
    p0 = solve_unconstrained(0.0, 9.0, 200.0, 3.0)
    p1 = solve_unconstrained(500.0, 9.0, 200.0, 3.0)
    assert p1.duration == pytest.approx(p0.duration, rel=1e-10)
    for tau in (0.0, 3.0, 9.0):
        a = eval_reference(p0, tau)
        b = eval_reference(p1, 500.0 + tau)
        assert b == pytest.approx(a, abs=1e-8)


def test_energy_and_objective():
    p = solve_unconstrained(0.0, 6.0, 150.0, 2.0)
    ts = np.linspace(p.t0, p.tf, 20001)
    u = p.a * ts + p.b
    assert p.energy == pytest.approx(np.trapezoid(0.5 * u * u, ts), rel=1e-6)
    assert p.objective == pytest.approx(p.beta * p.duration + p.energy)


def test_standing_start_and_fast_entry():
    for v0 in (0.0, 30.0):
        p = solve_unconstrained(0.0, v0, 100.0, 3.125)
        assert np.linalg.norm(p.residuals()) <= 1e-9
        assert p.tf == pytest.approx(exit_time_oracle(v0, 100.0, 3.125), rel=1e-8)


@pytest.mark.parametrize("args", [(-1.0, 100.0, 1.0), (10.0, 0.0, 1.0), (10.0, 100.0, 0.0)])
def test_bad_inputs(args):
    with pytest.raises(ValueError):
        solve_unconstrained(0.0, *args)


def test_non_convergence_reports_diagnostics():
    with pytest.raises(SolverError) as info:
        solve_unconstrained(0.0, 10.0, 180.0, 3.125, max_iter=0)
    assert info.value.diagnostics["attempts"]


@settings(max_examples=150, deadline=None)
@given(st.floats(0.0, 17.0), st.floats(60.0, 300.0), st.floats(0.05, 0.5))
def test_residuals_and_oracle_agree(v0, xf, alpha):
    beta = beta_from_alpha(alpha, 5.0, -5.0)
    p = solve_unconstrained(0.0, v0, xf, beta)
    assert np.linalg.norm(p.residuals()) <= 1e-9
    assert p.tf == pytest.approx(exit_time_oracle(v0, xf, beta), rel=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.floats(5.0, 15.0), st.floats(60.0, 300.0))
def test_exit_time_decreases_in_beta(v0, xf):
    tfs = [solve_unconstrained(0.0, v0, xf, b).tf for b in np.geomspace(0.1, 20.0, 10)]
    assert all(b < a for a, b in zip(tfs, tfs[1:]))
