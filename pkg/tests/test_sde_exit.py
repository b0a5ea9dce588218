import math

import numpy as np
import pytest

from oscbc.elliptic_solver import wr_closed_form, wr_solve
from oscbc.operator import LinearPiece, TrigField
from oscbc.sde_exit import DiffusionSpec, exit_growth_probe, simulate_exit


def one_d(b, a=1.0, **kw):
    return DiffusionSpec(b=(b,), sigma=((math.sqrt(a),),), **kw)


def within(stats, ref, k=3.0):
    return abs(stats.mean - ref) <= k * stats.std_error


def test_brownian_strip_midpoint():
    R = 4.0
    s = simulate_exit(one_d(0.0, n_paths=20_000, R_cap=R, seed=5), [R / 2])
    assert within(s, R**2 / 8)
    assert 0.45 < s.bottom_fraction < 0.55


def test_diffusion_convention_pinned():
    # generator a W'' with a = sigma^2: doubling a halves the exit time
    R = 4.0
    s = simulate_exit(one_d(0.0, a=2.0, n_paths=20_000, R_cap=R, seed=6), [1.0])
    assert within(s, 1.0 * (R - 1.0) / (2 * 2.0))


def test_positive_drift_matches_pde():
    s = simulate_exit(one_d(1.0, n_paths=20_000, seed=7), [5.0])
    assert within(s, float(wr_closed_form(5.0, 1.0, 10.0)))
    assert within(s, wr_solve(1.0, 10.0, 1e-3).interpolate(0.0, 5.0))
    assert s.bottom_fraction < 0.05


def test_strong_inward_drift():
    s = simulate_exit(one_d(-5.0, n_paths=5_000, seed=8), [1.0])
    assert s.bottom_fraction == 1.0
    assert s.mean < 0.5
    assert within(s, float(wr_closed_form(1.0, -5.0, 10.0)))


def test_two_dimensional_drift_field():
    # tangential oscillation does not change the exit time of the normal component
    b1 = TrigField(0.0, [(0.8, (1.0, 0.0), 0.0)])
    spec = DiffusionSpec(b=(b1, 1.0), sigma=((1.0, 0.0), (0.0, 1.0)), n_paths=20_000, seed=9)
    s = simulate_exit(spec, [0.3, 5.0])
    assert within(s, float(wr_closed_form(5.0, 1.0, 10.0)))


def test_seed_reproducible_and_thread_independent():
    spec = one_d(1.0, n_paths=3_000, chunk=1000, seed=11)
    a = simulate_exit(spec, [5.0])
    b = simulate_exit(spec, [5.0])
    c = simulate_exit(spec, [5.0], threads=2)
    assert a.to_dict() == b.to_dict() == c.to_dict()
    d = simulate_exit(one_d(1.0, n_paths=3_000, chunk=1000, seed=12), [5.0])
    assert d.mean != a.mean


def test_dt_halving_weak_order():
    coarse = simulate_exit(one_d(1.0, n_paths=100_000, seed=13), [5.0])
    fine = simulate_exit(one_d(1.0, n_paths=100_000, seed=13, dt=2.5e-5, dt_max=0.025), [5.0])
    assert abs(coarse.mean - fine.mean) < coarse.std_error


def test_from_piece_reproduces_A():
    A = np.array([[2.0, 0.3], [0.3, 1.0]])
    piece = LinearPiece.constant(A, [0.1, -0.2])
    spec = DiffusionSpec.from_piece(piece, n_paths=10)
    y = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    assert spec.check_against(piece, y) <= 1e-10
    osc = LinearPiece(((TrigField(1.0, [(0.2, (1.0, 0.0), 0.0)]), 0.0), (0.0, 1.0)), (0.0, 0.0))
    with pytest.raises(ValueError):
        DiffusionSpec.from_piece(osc)


def test_invariant_checks():
    with pytest.raises(ValueError, match="R_cap/10"):
        one_d(1000.0, dt=0.01, dt_max=0.01)
    with pytest.raises(ValueError):
        one_d(1.0, dt=0.1, dt_max=0.05)
    with pytest.raises(ValueError):
        DiffusionSpec(b=(0.0, 0.0), sigma=((1.0,),))
    with pytest.raises(ValueError):
        simulate_exit(one_d(1.0, n_paths=10), [10.0])


def test_no_exit_aborts():
    spec = one_d(0.0, a=1e-8, n_paths=50, chunk=50, R_cap=1.0)
    with pytest.raises(RuntimeError, match="no path exited"):
        simulate_exit(spec, [0.5])


def test_growth_positive_drift():
    rep = exit_growth_probe(one_d(1.0, n_paths=2_000, seed=1), (10.0, 20.0, 40.0))
    assert rep.exponent >= 0.8
    assert rep.verdict == "probable-failure"
    ref = [float(wr_closed_form(1.0, 1.0, R)) for R in rep.R]
    for s, w in zip(rep.stats, ref):
        assert within(s, w, 4.0)


def test_growth_negative_drift_saturates():
    rep = exit_growth_probe(one_d(-1.0, n_paths=2_000, seed=2), (10.0, 20.0, 40.0))
    means = [s.mean for s in rep.stats]
    assert abs(means[2] - means[1]) / means[1] < 0.05
    assert rep.verdict == "compatible"


def test_growth_no_drift(tmp_path):
    rep = exit_growth_probe(one_d(0.0, n_paths=500, seed=3), (2.0, 4.0, 8.0), x0=[1.0])
    assert rep.verdict == "no-verdict"
    d = rep.to_dict()
    assert len(d["bottom_means"]) == 3 and all(m is not None for m in d["bottom_means"])
    rep.to_csv(tmp_path / "growth.csv")
    rows = np.loadtxt(tmp_path / "growth.csv", delimiter=",", skiprows=1)
    assert rows.shape == (3, 5)
    with pytest.raises(ValueError):
        exit_growth_probe(one_d(0.0, n_paths=10), (2.0, 1.0, 3.0))
