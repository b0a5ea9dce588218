import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oscbc.operator import (
    LinearPiece,
    OperatorSpec,
    TrigField,
    eval_operator,
    slow_drift_family,
    fast_drift_family,
    laplacian,
)

finite = st.floats(-3, 3, allow_nan=False)


def oscillating_hjb():
    a22 = TrigField(1.5, [(0.4, (1.0, 0.0), 0.3), (0.2, (0.0, 1.0), 1.1)])
    b1 = TrigField(0.0, [(0.7, (1.0, 1.0), 0.0)])
    p1 = LinearPiece(((1.0, 0.0), (0.0, a22)), (b1, -0.5))
    p2 = LinearPiece.constant(np.diag([2.0, 0.8]), [0.3, 0.2])
    return OperatorSpec((p1, p2))


def direct_eval(spec, M, p, y):
    """Independent per-piece loop."""
    best = -math.inf
    for piece in spec.pieces:
        A = np.array([[float(f(np.asarray(y))) for f in row] for row in piece.A])
        b = np.array([float(f(np.asarray(y))) for f in piece.b])
        best = max(best, -np.trace(A @ M) - b @ p)
    return best


def random_sym(rng, n):
    X = rng.normal(size=(n, n))
    return X + X.T


def test_laplacian_examples():
    spec = laplacian(2)
    assert eval_operator(spec, np.eye(2), np.zeros(2), np.zeros(2)) == -2.0
    assert eval_operator(spec, np.zeros((2, 2)), [5.0, -3.0], [0.3, 0.7]) == 0.0


def test_two_piece_hand_value():
    spec = OperatorSpec((LinearPiece.constant(np.eye(2)), LinearPiece.constant(2 * np.eye(2))))
    assert spec.form == "hjb-max"
    assert eval_operator(spec, -np.eye(2), np.zeros(2), np.zeros(2)) == 4.0


def test_matches_direct_loop(rng):
    spec = oscillating_hjb()
    for _ in range(50):
        M, p, y = random_sym(rng, 2), rng.normal(size=2), rng.uniform(-2, 2, 2)
        assert eval_operator(spec, M, p, y) == pytest.approx(direct_eval(spec, M, p, y), abs=1e-12)


def test_vectorized_broadcast(rng):
    spec = oscillating_hjb()
    M = np.stack([random_sym(rng, 2) for _ in range(7)])
    p = rng.normal(size=(7, 2))
    y = rng.uniform(-1, 1, (7, 2))
    out = eval_operator(spec, M, p, y)
    assert out.shape == (7,)
    for k in range(7):
        assert out[k] == pytest.approx(direct_eval(spec, M[k], p[k], y[k]), abs=1e-12)


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension mismatch"):
        eval_operator(laplacian(2), np.eye(3), np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        eval_operator(laplacian(2), np.eye(2), np.zeros(1), np.zeros(2))


def test_constants_kappa_and_K():
    spec = oscillating_hjb()
    assert spec.kappa == pytest.approx(min(p.nu for p in spec.pieces))
    assert spec.kappa <= 0.8 + 1e-12
    sample = spec.cell_samples(12)
    bmax = max(np.linalg.norm(p.b_at(sample), axis=-1).max() for p in spec.pieces)
    assert spec.lipschitz_p >= bmax - 1e-12


def test_zero_at_origin(rng):
    spec = oscillating_hjb()
    y = rng.uniform(-3, 3, (100, 2))
    assert np.all(eval_operator(spec, np.zeros((100, 2, 2)), np.zeros((100, 2)), y) == 0.0)


def test_convexity_samples(rng):
    spec = oscillating_hjb()
    for _ in range(1000):
        M1, M2 = random_sym(rng, 2), random_sym(rng, 2)
        p1, p2 = rng.normal(size=2), rng.normal(size=2)
        y = rng.uniform(-2, 2, 2)
        t = rng.uniform()
        lhs = eval_operator(spec, t * M1 + (1 - t) * M2, t * p1 + (1 - t) * p2, y)
        rhs = t * eval_operator(spec, M1, p1, y) + (1 - t) * eval_operator(spec, M2, p2, y)
        assert lhs <= rhs + 1e-12


def test_uniform_ellipticity_samples(rng):
    spec = oscillating_hjb()
    for _ in range(1000):
        M, p, y = random_sym(rng, 2), rng.normal(size=2), rng.uniform(-2, 2, 2)
        u = rng.normal(size=2)
        u /= np.linalg.norm(u)
        P = np.outer(u, u)
        t = rng.uniform(0, 3)
        assert eval_operator(spec, M + t * P, p, y) <= eval_operator(spec, M, p, y) - spec.kappa * t + 1e-12


def test_lipschitz_in_p_samples(rng):
    spec = oscillating_hjb()
    K = spec.lipschitz_p
    for _ in range(1000):
        M, y = random_sym(rng, 2), rng.uniform(-2, 2, 2)
        p, q = rng.normal(size=2), rng.normal(size=2)
        gap = abs(eval_operator(spec, M, p, y) - eval_operator(spec, M, q, y))
        assert gap <= K * np.linalg.norm(p - q) + 1e-12


@given(st.tuples(finite, finite), st.integers(0, 1), st.integers(-3, 3))
def test_lattice_periodicity(y, axis, mult):
    spec = oscillating_hjb()
    M = np.array([[1.0, 0.2], [0.2, -0.5]])
    p = np.array([0.3, -1.2])
    y = np.asarray(y)
    shifted = y + mult * spec.lattice[axis]
    assert eval_operator(spec, M, p, shifted) == pytest.approx(eval_operator(spec, M, p, y), abs=1e-12)


@given(st.floats(-2, 2), st.lists(st.tuples(st.floats(-1, 1), st.integers(-3, 3), st.floats(0, 6.3)), max_size=3),
       st.tuples(finite, finite), st.tuples(finite, finite))
def test_trigfield_shift_and_bounds(c, terms, y, tau):
    f = TrigField(c, [(a, (float(k), 0.5 * k), ph) for a, k, ph in terms])
    y, tau = np.asarray(y), np.asarray(tau)
    direct = c + sum(a * math.cos(2 * math.pi * (k * y[0] + 0.5 * k * y[1]) + ph) for a, k, ph in terms)
    assert float(f(y)) == pytest.approx(direct, abs=1e-12)
    assert float(f.shifted(tau)(y)) == pytest.approx(float(f(y + tau)), abs=1e-9)
    assert abs(float(f(y))) <= f.sup_bound() + 1e-12


def test_trigfield_mean_value():
    f = TrigField(0.5, [(2.0, (0.0, 0.0), 0.0), (1.0, (1.0, 0.0), 0.0)])
    assert f.mean_value() == pytest.approx(2.5)
    assert not f.is_constant
    assert TrigField(1.0, [(3.0, (0.0,), 0.0)]).is_constant


def test_piece_rejects_asymmetric_and_bad_bounds():
    with pytest.raises(ValueError):
        LinearPiece.constant([[1.0, 0.3], [0.0, 1.0]])
    with pytest.raises(ValueError):
        LinearPiece.constant(np.eye(2), nu=0.0)
    with pytest.raises(ValueError):
        LinearPiece.constant(np.diag([1.0, -1.0]))
    with pytest.raises(ValueError):
        LinearPiece.constant(np.eye(2), nu=1.5)


def test_spec_rejects_bad_geometry():
    piece = LinearPiece.constant(np.eye(2))
    with pytest.raises(ValueError, match="linearly dependent"):
        OperatorSpec((piece,), lattice=[[1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(ValueError, match="orthogonal"):
        OperatorSpec((piece,), lattice=[[1.0, 1.0], [0.0, 1.0]], normal=[0.0, 1.0])
    osc = LinearPiece(((TrigField(1.0, [(0.2, (math.sqrt(2), 0.0), 0.0)]), 0.0), (0.0, 1.0)), (0.0, 0.0))
    with pytest.raises(ValueError, match="not lattice-periodic"):
        OperatorSpec((osc,))
    with pytest.raises(ValueError):
        OperatorSpec(())


def test_rotated_normal_lattice():
    n = np.array([3.0, 4.0]) / 5.0
    spec = laplacian(2, normal=n)
    assert spec.tangent @ n == pytest.approx(0.0, abs=1e-15)
    assert spec.tangential_period == pytest.approx(1.0)


def test_serialization_round_trip():
    spec = oscillating_hjb()
    back = OperatorSpec.from_dict(spec.to_dict())
    rng = np.random.default_rng(3)
    for _ in range(10):
        M, p, y = random_sym(rng, 2), rng.normal(size=2), rng.uniform(-1, 1, 2)
        assert eval_operator(back, M, p, y) == eval_operator(spec, M, p, y)


def test_family_limits():
    prob = slow_drift_family(np.eye(2))
    lim = prob.frozen_spec([0.3, 0.0])
    assert lim.drift_free and lim.kappa == pytest.approx(1.0) and lim.lipschitz_p == 0.0
    prob = slow_drift_family(np.eye(2), b=[0.0, 5.0])
    assert prob.frozen_spec([0.0, 0.0]).drift_free  # O(1) drift vanishes in the blow-up
    prob = fast_drift_family(np.eye(2), b=[0.0, -1.0])
    lim = prob.frozen_spec([0.0, 0.0])
    assert not lim.drift_free
    assert float(lim.pieces[0].b_at(np.zeros(2)) @ lim.normal) == pytest.approx(-1.0)


def test_family_slow_factors():
    prob = fast_drift_family(np.eye(2), b=[0.0, 1.0], A_slow=lambda x: 1.0 + x[..., 0] ** 2, b_slow=lambda x: 2.0 + 0 * x[..., 0])
    lim = prob.frozen_spec([1.0, 0.0])
    assert lim.kappa == pytest.approx(2.0)
    assert float(lim.pieces[0].b_at(np.zeros(2))[1]) == pytest.approx(2.0)


def test_family_rejects_bad_coefficients():
    with pytest.raises(ValueError):
        slow_drift_family([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ValueError):
        fast_drift_family([[0.0, 0.0], [0.0, 1.0]])
