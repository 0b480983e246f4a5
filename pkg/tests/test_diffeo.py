import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ergolab.diffeo import (
    DiffeoWord,
    SphereRotation,
    SphereTrigPerturb,
    ToralLinear,
    ToralTrigPerturb,
    apply,
    derivative_bounds,
    jacobian,
    log_det_jacobian,
    propagate,
)
from ergolab.errors import UsageError
from ergolab.manifold import ManifoldPoint, Sphere, Torus

C = 1 / (2 * math.pi)
unit = st.floats(0, 1, allow_nan=False, exclude_max=True)


def perturbed_cat(eps=0.01):
    return ToralTrigPerturb(ToralLinear(np.array([[2, 1], [1, 1]])), eps, [((1, 0), 0.0, (C, 0.0))])


def rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return SphereRotation(np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]]))


def test_cat_map_values(cat):
    w = DiffeoWord(((0, False),))
    p = ManifoldPoint(Torus(2), np.array([0.25, 0.25]))
    assert np.allclose(apply(w, [cat], p).coords, [0.75, 0.5])
    assert np.allclose(jacobian(DiffeoWord(((0, False),) * 2), [cat], p), [[5, 3], [3, 2]])


def test_linear_validation():
    with pytest.raises(UsageError):
        ToralLinear(np.array([[2, 0], [0, 1]]))
    with pytest.raises(UsageError):
        ToralLinear(np.array([[1.5, 0], [0, 1]]))


def test_perturbation_amplitude_guard():
    with pytest.raises(UsageError):
        ToralTrigPerturb(ToralLinear(np.eye(2, dtype=int)), 0.2, [((3, 0), 0.0, (1.0, 0.0))])


@given(st.tuples(unit, unit))
def test_perturbed_inverse_roundtrip(x):
    g = perturbed_cat()
    x = np.array([x])
    y = g.forward(x)
    assert Torus(2).distance(g.inverse(y), x)[0] < 1e-10


@given(st.tuples(unit, unit))
def test_perturbed_jacobian_matches_finite_differences(x):
    g = perturbed_cat(0.02)
    x = np.array(x)
    _, J = g.forward_jac(x[None])
    h = 1e-6
    T = Torus(2)
    fd = np.stack([T.displacement(g.forward((x - h * e)[None])[0], g.forward((x + h * e)[None])[0]) / (2 * h)
                   for e in np.eye(2)], axis=1)
    assert np.allclose(J[0], fd, atol=1e-6)


def test_sphere_perturbation_inverse_and_jacobian():
    g = SphereTrigPerturb(rotation(0.7), 0.05, "twist")
    S = Sphere(2)
    rng = np.random.default_rng(0)
    x = S.sample_uniform(50, rng)
    y = g.forward(x)
    assert np.max(S.distance(g.inverse(y), x)) < 1e-10
    assert np.allclose(np.linalg.norm(y, axis=1), 1.0)


def test_word_inverse_is_identity(cat):
    w = DiffeoWord(((0, False), (0, False), (0, True)))
    full = w.then(w.inverse())
    p = ManifoldPoint(Torus(2), np.array([0.123, 0.456]))
    assert np.allclose(apply(full, [cat], p).coords, p.coords, atol=1e-12)
    assert np.array_equal(DiffeoWord.from_codes(w.codes()).codes(), w.codes())


def test_log_det_volume_preserving(cat):
    w = DiffeoWord(((0, False),) * 5)
    assert log_det_jacobian(w, [cat], ManifoldPoint(Torus(2), np.array([0.3, 0.1]))) == pytest.approx(0.0, abs=1e-12)


def test_propagate_matches_scalar_apply(shears):
    A, B = shears
    rng = np.random.default_rng(3)
    codes = rng.integers(0, 4, size=(20, 8))
    x0 = np.array([0.2, 0.9])
    prop = propagate([A, B], codes, x0, jacobian=True)
    for i in range(20):
        w = DiffeoWord.from_codes(codes[i])
        p = ManifoldPoint(Torus(2), x0)
        assert Torus(2).distance(prop.points[i], apply(w, [A, B], p).coords) < 1e-12
        assert np.allclose(prop.jacobian[i], jacobian(w, [A, B], p))


def test_derivative_bounds_linear(cat):
    b = derivative_bounds([cat], [0])
    assert b.d1 == pytest.approx(np.linalg.norm(cat.matrix, 2))
    assert b.d2 == b.d1  # d2 >= d1 by construction; no second derivative here
