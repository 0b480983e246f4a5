import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ergolab.diffeo import ToralLinear
from ergolab.errors import DomainError, PreconditionError, UsageError
from ergolab.manifold import Torus
from ergolab.walk import (
    EmpiricalMeasure,
    FiniteChain,
    GeneratorMeasure,
    SampledChain,
    atom_decay_curve,
    empirical_pushforward,
    exact_moment,
    exact_tail,
    ldp_gamma,
    ldp_moment_check,
    max_atom_mass,
    max_ball_mass,
    run_walk,
    sample_word,
)

SYM = [(0, False), (1, False), (0, True), (1, True)]


def test_measure_validation(cat):
    with pytest.raises(UsageError):
        GeneratorMeasure([cat], np.array([0.5]))
    with pytest.raises(UsageError):
        GeneratorMeasure([cat], np.array([1.0, 0.0]), [(0, False), (0, True)])


def test_letter_frequencies(shears):
    mu = GeneratorMeasure.uniform(shears, SYM)
    codes = mu.sample_codes(50, np.arange(2000), 0)
    freq = np.bincount(codes.ravel(), minlength=4) / codes.size
    assert np.allclose(freq, 0.25, atol=5e-3)


def test_walk_is_deterministic_across_threads(shears):
    mu = GeneratorMeasure.uniform(shears, SYM)
    x = np.array([0.3, 0.4])
    a = run_walk(mu, x, 30, 10_000, seed=5, jacobian=True, threads=1)
    b = run_walk(mu, x, 30, 10_000, seed=5, jacobian=True, threads=8)
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.jacobian, b.jacobian)


def test_sample_word_matches_walk(shears):
    mu = GeneratorMeasure.uniform(shears, SYM)
    w = sample_word(mu, 12, seed=3, traj=7)
    codes = mu.sample_codes(12, [7], 3)[0]
    assert np.array_equal(w.codes(), codes)


def test_identity_walk_keeps_dirac():
    I = ToralLinear(np.eye(2, dtype=int))
    mu = GeneratorMeasure([I], np.array([1.0]))
    nu = empirical_pushforward(mu, np.array([0.2, 0.3]), 10, 500, seed=0)
    assert max_ball_mass(nu, 1e-3).mass == pytest.approx(1.0)
    assert np.allclose(atom_decay_curve(mu, np.array([0.2, 0.3]), 5, 100, 0), 1.0)


def test_fixed_point_is_atom_for_sl2z(shears):
    mu = GeneratorMeasure.uniform(shears, SYM)
    curve = atom_decay_curve(mu, np.zeros(2), 10, 200, 0)
    assert np.allclose(curve, 1.0, atol=1e-12)


def test_generic_start_atom_decay(shears):
    mu = GeneratorMeasure.uniform(shears, SYM)
    curve = atom_decay_curve(mu, np.array([2**0.5 - 1, 3**0.5 - 1]), 30, 2000, 0)
    assert curve[0] == 1.0
    assert curve[-1] < 0.01


def test_max_ball_mass_brackets_and_empty():
    T = Torus(2)
    rng = np.random.default_rng(0)
    nu = EmpiricalMeasure(T, rng.random((1000, 2)))
    b = max_ball_mass(nu, 0.05)
    assert b.mass <= b.mass_double
    with pytest.raises(DomainError):
        max_ball_mass(EmpiricalMeasure(T, np.zeros((0, 2))), 0.1)


def test_max_atom_mass_clusters():
    T = Torus(2)
    pts = np.array([[0.1, 0.1], [0.1, 0.1 + 1e-12], [0.5, 0.5]])
    assert max_atom_mass(EmpiricalMeasure(T, pts)) == pytest.approx(2 / 3)


# -- large deviations ------------------------------------------------------


def brute_moment(P, f, gamma, n, x):
    """Sum over all paths, in exact rational arithmetic for the path weights."""
    k = len(f)
    total = 0.0
    for path in itertools.product(range(k), repeat=n):
        prob, prev = Fraction(1), x
        for s in path:
            prob *= Fraction(P[prev][s]).limit_denominator(10**6)
            prev = s
        total += float(prob) * math.exp(gamma * sum(f[s] for s in path))
    return total


def test_exact_moment_matches_path_enumeration():
    P = [[0.9, 0.1], [0.2, 0.8]]
    f = [-1.0, 0.2]
    ch = FiniteChain(np.array(P), np.array(f))
    g = ldp_gamma(0.25, 1.0)
    for n in (1, 4, 8):
        v = exact_moment(ch, g, n)
        for x in range(2):
            assert v[x] == pytest.approx(brute_moment(P, f, g, n, x), rel=1e-12)


@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.integers(1, 9))
def test_exact_tail_matches_enumeration(p, q, n):
    P = np.array([[p, 1 - p], [q, 1 - q]])
    f = np.array([1.0, -0.5])
    ch = FiniteChain(P, f)
    thr = 0.1 * n
    tail = exact_tail(ch, n, thr)
    for x in range(2):
        tot = 0.0
        for path in itertools.product(range(2), repeat=n):
            pr, prev = 1.0, x
            for s in path:
                pr *= P[prev, s]
                prev = s
            if sum(f[s] for s in path) >= thr - 1e-12:
                tot += pr
        assert tail[x] == pytest.approx(tot, abs=1e-12)


@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.sampled_from([0.1, 0.25, 0.5]), st.integers(1, 60))
def test_ldp_bound_holds_under_negative_drift(p, q, eps, n):
    # f chosen so that Pf <= 0 in both states
    P = np.array([[p, 1 - p], [q, 1 - q]])
    a = 1.0
    b = -a * max(p / (1 - p), q / (1 - q))
    f = np.array([a, b]) / max(a, abs(b))
    rep = ldp_moment_check(FiniteChain(P, f), eps, n)
    assert rep.passed
    assert rep.tail_passed


def test_positive_drift_is_refused_with_witness():
    ch = FiniteChain(np.array([[0.5, 0.5], [0.5, 0.5]]), np.array([1.0, 0.5]))
    with pytest.raises(PreconditionError) as exc:
        ldp_moment_check(ch, 0.1, 10)
    assert exc.value.witness == 0


def test_epsilon_range():
    ch = FiniteChain(np.array([[1.0]]), np.array([0.0]))
    with pytest.raises(UsageError):
        ldp_moment_check(ch, 0.6, 10)


def test_sampled_chain_agrees_with_exact():
    P = np.array([[0.5, 0.5], [0.5, 0.5]])
    f = np.array([1.0, -1.0])
    step = lambda s, u: (u[:, 0] >= 0.5).astype(int)
    sc = SampledChain(step, lambda s: f[s], 1.0, np.array(0), 1)
    rep = ldp_moment_check(sc, 0.25, 20, trials=50_000, seed=1)
    exact = ldp_moment_check(FiniteChain(P, f), 0.25, 20)
    assert abs(rep.lhs - exact.lhs) < 4 * rep.stderr + 1e-12


def test_ldp_sweep_matches_single_checks():
    from ergolab.walk import FiniteChain, ldp_moment_check, ldp_moment_sweep

    chain = FiniteChain(np.array([[0.2, 0.5, 0.3], [0.4, 0.4, 0.2], [0.3, 0.3, 0.4]]), np.array([-1.0, 0.2, 0.3]))
    sweep = ldp_moment_sweep(chain, [0.1, 0.5], 12)
    assert len(sweep) == 24
    for r in sweep:
        one = ldp_moment_check(chain, r.epsilon, r.n)
        assert r.lhs == pytest.approx(one.lhs, rel=1e-13)
        assert r.tail_prob == pytest.approx(one.tail_prob, abs=1e-14)
        assert r.passed == one.passed
