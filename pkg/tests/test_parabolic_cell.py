import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oscbc.operator import LinearPiece, OperatorSpec, laplacian
from oscbc.parabolic_cell import mu_parabolic, solve_time_periodic, step_count
from oscbc.strip_grid import BoundaryData

HEAT = laplacian(1)
COS_T = BoundaryData("time-periodic", 0.0, [(1.0, (1.0,), 0.0)])


def heat_exact(x, s):
    r = math.sqrt(math.pi)
    return np.exp(-r * x) * np.cos(2 * np.pi * s - r * x)


def test_constant_phi():
    v = solve_time_periodic(HEAT, BoundaryData("time-periodic", 0.6), 2.0, 0.05)
    assert v.converged and v.report.sweeps <= 2
    assert np.max(np.abs(v.values - 0.6)) < 1e-12


def test_heat_oracle():
    h = 0.01
    v = solve_time_periodic(HEAT, COS_T, 4.0, h)
    assert v.converged
    x = v.grid.heights
    exact = heat_exact(x[None, :], v.times[:, None])
    assert np.max(np.abs(v.values[:, 0, :] - exact)) <= 5 * (h**2 + h)


def test_heat_plus_constant():
    v = solve_time_periodic(HEAT, COS_T, 2.0, 0.02)
    w = solve_time_periodic(HEAT, COS_T + 0.3, 2.0, 0.02)
    assert np.max(np.abs(w.values - v.values - 0.3)) < 1e-7


def test_seam_and_tangential_invariance():
    spec = OperatorSpec((LinearPiece.constant(np.diag([1.0, 2.0])), LinearPiece.constant(np.diag([2.0, 0.5]))))
    tol = 1e-8
    v = solve_time_periodic(spec, COS_T, 1.0, 0.1, tol=tol)
    assert v.converged
    assert v.report.seam_gap <= tol
    assert v.tangential_oscillation() <= 10 * tol


@settings(max_examples=5)
@given(st.integers(0, 2**32 - 1))
def test_comparison(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-1, 1, 2)
    p1 = BoundaryData("time-periodic", 0.0, [(a, (1.0,), 0.0), (b, (2.0,), 0.5)])
    c = rng.uniform(0, 0.5)
    # p2 - p1 = c (1 + cos(6 pi s + 0.2)) + gap >= 0, not a constant
    p2 = BoundaryData("time-periodic", c + rng.uniform(0, 0.1), p1.terms + ((c, (3.0,), 0.2),))
    s = np.linspace(0, 1, 1001)
    assert np.all(p1.at_time(s) <= p2.at_time(s))
    tol = 1e-8
    v1 = solve_time_periodic(HEAT, p1, 1.0, 0.05, tol=tol)
    v2 = solve_time_periodic(HEAT, p2, 1.0, 0.05, tol=tol)
    assert np.all(v1.values <= v2.values + 2 * tol)


def test_mu_nonexpansive():
    p1 = BoundaryData("time-periodic", 0.1, [(0.5, (1.0,), 0.0)])
    p2 = BoundaryData("time-periodic", -0.2, [(0.8, (2.0,), 1.0)])
    s = np.linspace(0, 1, 4001)
    dist = float(np.max(np.abs(p1.at_time(s) - p2.at_time(s))))
    m1 = mu_parabolic(HEAT, p1, h0=0.05, R0=2.0).mu
    m2 = mu_parabolic(HEAT, p2, h0=0.05, R0=2.0).mu
    assert abs(m1 - m2) <= dist + 2e-3


def test_mu_constant():
    rep = mu_parabolic(HEAT, BoundaryData("time-periodic", -0.7), h0=0.05)
    assert rep.mu == pytest.approx(-0.7, abs=1e-10)


def test_mu_heat_rate():
    rep = mu_parabolic(HEAT, COS_T)
    assert abs(rep.mu) <= 1e-3
    assert rep.decay_rate == pytest.approx(math.sqrt(math.pi), rel=0.05)
    assert rep.verdict == "converged"
    assert rep.extras["dt_used"] == rep.h_used


def test_mu_heat_offset():
    rep = mu_parabolic(HEAT, BoundaryData("time-periodic", 0.4, [(0.6, (1.0,), 0.0)]))
    assert rep.mu == pytest.approx(0.4, abs=1e-3)


def test_rejects_drift_and_y_dependence():
    with pytest.raises(ValueError, match="gradient"):
        solve_time_periodic(OperatorSpec((LinearPiece.constant([[1.0]], [1.0]),)), COS_T, 1.0, 0.1)
    with pytest.raises(ValueError):
        solve_time_periodic(HEAT, BoundaryData("lattice-periodic", 0.0), 1.0, 0.1)


def test_step_count():
    assert step_count(0.01) == 100
    with pytest.raises(ValueError):
        step_count(0.3)


def test_slice_csv(tmp_path):
    v = solve_time_periodic(HEAT, COS_T, 1.0, 0.1)
    p = tmp_path / "slice.csv"
    v.to_csv(p)
    rows = np.loadtxt(p, delimiter=",", skiprows=1)
    assert rows.shape == (10 * 11, 3)
    assert np.allclose(rows[rows[:, 0] == 0.0, 2], np.cos(2 * np.pi * v.times), atol=1e-12)
    assert v.at_step(10).values.tolist() == v.at_step(0).values.tolist()
