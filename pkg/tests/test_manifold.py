import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ergolab.errors import DomainError, UsageError
from ergolab.manifold import (
    Euclidean,
    ManifoldPoint,
    Sphere,
    TangentVector,
    Torus,
    ball_volume,
    distance,
    exp,
    log,
)

coord = st.floats(-3, 3, allow_nan=False)
unit = st.floats(0, 1, allow_nan=False, exclude_max=True)


def test_torus_distance_wraps():
    T = Torus(2)
    assert T.distance(np.array([0.05, 0.5]), np.array([0.95, 0.5])) == pytest.approx(0.1)


def test_torus_dimension_guard():
    with pytest.raises(UsageError):
        Torus(1)


def test_sphere_antipodal_log_is_domain_error():
    S = Sphere(2)
    with pytest.raises(DomainError):
        S.log(np.array([0, 0, 1.0]), np.array([0, 0, -1.0]))


def test_ball_volumes():
    T = Torus(2)
    assert T.ball_volume(0.1) == pytest.approx(math.pi * 0.01)
    assert T.ball_volume(1.0) == 1.0
    S = Sphere(2)
    # normalized cap area (1 - cos r) / 2
    assert S.ball_volume(0.3) == pytest.approx((1 - math.cos(0.3)) / 2)
    assert S.ball_volume(math.pi) == pytest.approx(1.0)


def test_torus_ball_volume_beyond_half_matches_monte_carlo():
    T = Torus(2)
    rng = np.random.default_rng(0)
    P = rng.random((200_000, 2))
    r = 0.6
    est = np.mean(T.distance(np.zeros(2), P) < r)
    assert T.ball_volume(r) == pytest.approx(est, abs=5e-3)


@given(st.tuples(unit, unit), st.tuples(unit, unit), st.tuples(unit, unit))
def test_torus_triangle_inequality(a, b, c):
    T = Torus(2)
    a, b, c = map(np.array, (a, b, c))
    assert T.distance(a, c) <= T.distance(a, b) + T.distance(b, c) + 1e-12


@given(st.tuples(coord, coord, coord), st.tuples(coord, coord, coord))
def test_sphere_exp_log_roundtrip(p, q):
    S = Sphere(2)
    p, q = np.array(p), np.array(q)
    if np.linalg.norm(p) < 1e-3 or np.linalg.norm(q) < 1e-3:
        return
    p, q = S.canonical(p), S.canonical(q)
    if S.distance(p, q) > math.pi - 1e-3:
        return
    v = S.log(p, q)
    assert abs(v @ p) < 1e-9
    assert np.allclose(S.exp(p, v), q, atol=1e-9)


@given(st.tuples(unit, unit), st.tuples(unit, unit))
def test_torus_exp_log_roundtrip(p, q):
    T = Torus(2)
    p, q = np.array(p), np.array(q)
    try:
        v = T.log(p, q)
    except DomainError:
        return
    assert T.distance(T.exp(p, v), q) < 1e-12


def test_kdtree_counts_agree_with_brute_force():
    rng = np.random.default_rng(1)
    for M in (Torus(2), Sphere(2), Euclidean(3)):
        P = M.sample_uniform(500, rng)
        idx = M.kdtree(P)
        D = M.distance(P[:, None], P[None])
        for r in (0.05, 0.2):
            assert np.array_equal(idx.counts(P, r), (D < r).sum(axis=1))


def test_scalar_api():
    T = Torus(2)
    p = ManifoldPoint(T, np.array([0.1, 0.2]))
    q = ManifoldPoint(T, np.array([0.3, 0.2]))
    assert distance(p, q) == pytest.approx(0.2)
    v = log(p, q)
    assert isinstance(v, TangentVector)
    assert exp(v) == q
    assert ball_volume(T, 0.1) == pytest.approx(math.pi * 0.01)
    with pytest.raises(UsageError):
        ManifoldPoint(T, np.array([0.1, 0.2, 0.3]))
