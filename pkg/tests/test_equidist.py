import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog

from ergolab import equidist as eq
from ergolab.diffeo import ToralLinear, ToralTrigPerturb
from ergolab.errors import UsageError
from ergolab.manifold import Torus
from ergolab.walk import EmpiricalMeasure, GeneratorMeasure

T2 = Torus(2)
C = 1 / (2 * np.pi)


def random_measure(rng, n):
    w = rng.random(n) + 0.05
    return EmpiricalMeasure(T2, rng.random((n, 2)), w / w.sum())


def dense_w1(nu1, nu2):
    """Independent route: the full LP with every Lipschitz pair, f and |f| bounds split."""
    P = np.vstack([nu1.points, nu2.points])
    delta = np.concatenate([nu1.weights, -nu2.weights])
    n = len(P)
    D = T2.distance(P[:, None], P[None, :])
    # variables: f (n), L (1); |f_i| + L <= 1, f_i - f_j <= L d_ij
    rows, rhs = [], []
    for i in range(n):
        for s in (1, -1):
            r = np.zeros(n + 1)
            r[i], r[n] = s, 1
            rows.append(r)
            rhs.append(1.0)
    for i in range(n):
        for j in range(n):
            if i != j:
                r = np.zeros(n + 1)
                r[i], r[j], r[n] = 1, -1, -D[i, j]
                rows.append(r)
                rhs.append(0.0)
    res = linprog(-np.concatenate([delta, [0]]), A_ub=np.array(rows), b_ub=rhs,
                  bounds=[(None, None)] * n + [(0, 1)], method="highs")
    return -0.5 * res.fun


# -- W1 ------------------------------------------------------------------------


@given(st.floats(0, 0.5), st.floats(0, 0.5))
def test_w1_two_diracs_closed_form(a, b):
    p, q = np.array([[0.1, 0.2]]), np.array([[0.1 + a, 0.2 + b]])
    d = float(T2.distance(p[0], T2.canonical(q)[0]))
    v = eq.wasserstein1(EmpiricalMeasure(T2, p), EmpiricalMeasure(T2, T2.canonical(q))).value
    assert abs(v - d / (2 + d)) <= 1e-7


@given(st.integers(0, 10_000), st.integers(2, 12), st.integers(2, 12))
def test_w1_matches_dense_lp(seed, n1, n2):
    rng = np.random.default_rng(seed)
    nu1, nu2 = random_measure(rng, n1), random_measure(rng, n2)
    assert abs(eq.wasserstein1(nu1, nu2).value - dense_w1(nu1, nu2)) <= 1e-6


@given(st.integers(0, 10_000))
def test_w1_metric_axioms(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_measure(rng, 15) for _ in range(3))
    ab = eq.wasserstein1(a, b).value
    assert abs(ab - eq.wasserstein1(b, a).value) <= 1e-7
    assert ab <= eq.wasserstein1(a, c).value + eq.wasserstein1(c, b).value + 1e-7
    assert 0 <= ab <= 1
    assert eq.wasserstein1(a, a).value <= 1e-9


def test_w1_witness_attains_value():
    rng = np.random.default_rng(3)
    a, b = random_measure(rng, 20), random_measure(rng, 20)
    rep = eq.wasserstein1(a, b)
    f = rep.witness
    assert np.max(np.abs(f)) + rep.L <= 1 + 1e-7
    delta = np.concatenate([a.weights, -b.weights])
    assert abs(0.5 * delta @ f - rep.value) <= 1e-7


def test_w1_reduction_error_bound():
    rng = np.random.default_rng(4)
    a, b = random_measure(rng, 600), random_measure(rng, 600)
    exact = eq.wasserstein1(a, b, max_atoms=10_000)
    red = eq.wasserstein1(a, b, reduce_cells=8)
    assert abs(red.value - exact.value) <= red.sub_err + 1e-7


def test_w1_rejects_non_probability():
    a = EmpiricalMeasure(T2, np.zeros((1, 2)), np.array([0.5]))
    with pytest.raises(UsageError):
        eq.wasserstein1(a, a)


def test_stratified_reduce_conserves_mass():
    rng = np.random.default_rng(5)
    a = random_measure(rng, 500)
    r, err = eq.stratified_reduce(a, 8)
    assert abs(r.total_mass - 1) <= 1e-12
    assert len(r) <= 64
    assert 0 <= err <= 0.5 * np.sqrt(2) / 8


# -- mollification -------------------------------------------------------------


@given(st.integers(0, 10_000), st.floats(0.05, 0.3))
def test_mollify_unit_mass(seed, rho):
    a = random_measure(np.random.default_rng(seed), 200)
    mol = eq.mollify(a, rho, K=64)
    assert abs(mol.mass - 1) <= 1e-12
    assert np.all(mol.values >= 0)


def test_mollify_uniform_is_flat():
    g = (np.arange(128) + 0.5) / 128
    P = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    mol = eq.mollify(EmpiricalMeasure(T2, P), 0.2, K=32)
    assert np.allclose(mol.values, 1.0, atol=0.05)


def test_mollify_rejects_tiny_rho():
    with pytest.raises(UsageError):
        eq.mollify(EmpiricalMeasure(T2, np.zeros((1, 2))), 0.01, K=64)


# -- Fourier transfer operator --------------------------------------------------


def test_linear_operator_is_partial_permutation():
    A = np.array([[2, 1], [1, 1]])
    op = eq.fourier_operator(GeneratorMeasure([ToralLinear(A)], np.ones(1)), 4)
    assert set(np.unique(op.matrix.real)) <= {0.0, 1.0}
    for i, k in enumerate(op.freqs):
        j = np.nonzero(op.matrix[i])[0]
        if len(j):
            assert np.array_equal(op.freqs[j[0]], k @ A)


def test_operator_matches_quadrature_pushforward():
    g = ToralTrigPerturb(ToralLinear(np.array([[2, 1], [1, 1]])), 0.01, [((1, 0), 0.0, (C, 0.0))])
    K = 3
    op = eq.fourier_operator(GeneratorMeasure([g], np.ones(1)), K, quad=64)
    # density 1 + cos(2 pi x1)/2: moments 1 at 0, 1/4 at +-e1
    m = np.zeros(len(op.freqs), dtype=complex)
    for i, k in enumerate(op.freqs):
        m[i] = {(0, 0): 1.0, (1, 0): 0.25, (-1, 0): 0.25}.get(tuple(k), 0.0)
    # second route: midpoint quadrature of the pushforward moments
    ax = (np.arange(256) + 0.5) / 256
    X = np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2)
    rho = 1 + 0.5 * np.cos(2 * np.pi * X[:, 0])
    gX = g.forward(X)
    direct = (np.exp(2j * np.pi * gX @ op.freqs.T) * rho[:, None]).mean(axis=0)
    assert np.allclose((op.matrix @ m)[1:], direct[1:], atol=1e-3)


def test_cat_block_is_nilpotent():
    mu = GeneratorMeasure([ToralLinear(np.array([[2, 1], [1, 1]]))], np.ones(1))
    assert eq.fourier_transfer_spectrum(mu, 4).block_radius == 0.0


def test_identity_radius_one_and_nonunique_stationary():
    mu = GeneratorMeasure([ToralLinear(np.eye(2, dtype=int))], np.ones(1))
    rep = eq.fourier_transfer_spectrum(mu, 3)
    assert abs(rep.block_radius - 1) <= 1e-12
    assert eq.stationary_density(mu, 3).unit_eigs_in_block == 48


def test_stationary_density_of_volume_preserving_walk_is_flat(shears):
    A, B = shears
    mu = GeneratorMeasure.uniform([A, B], [(0, False), (1, False), (0, True), (1, True)])
    st_ = eq.stationary_density(mu, 4)
    x = np.random.default_rng(0).random((50, 2))
    assert np.allclose(st_.density(x), 1.0, atol=1e-12)
    assert st_.unit_eigs_in_block == 0


def test_frequencies_layout():
    ks, zero = eq.frequencies(2, 2)
    assert len(ks) == 25 and np.array_equal(ks[zero], [0, 0])


# -- equidistribution ------------------------------------------------------------


def test_curve_decreases_for_symmetric_shears(shears):
    A, B = shears
    mu = GeneratorMeasure.uniform([A, B], [(0, False), (1, False), (0, True), (1, True)])
    curve = eq.equidistribution_curve(mu, [np.sqrt(2) - 1, np.sqrt(3) - 1], [0, 5, 20], 4000, 1 / 16,
                                      reference="vol", lp_atoms=400)
    assert curve.reference == "vol"
    assert curve.w1[0] > 0.1
    assert curve.w1[-1] < curve.w1[0] / 2
    assert all(e >= 0 for e in curve.mc_err + curve.sub_err)
