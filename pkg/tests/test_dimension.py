import numpy as np
import pytest
from hypothesis import given, strategies as st

from ergolab import dimension as dm
from ergolab import oracles
from ergolab.errors import PreconditionError, UsageError
from ergolab.manifold import Euclidean, Torus
from ergolab.walk import EmpiricalMeasure


def clustered(m, n, seed):
    rng = np.random.default_rng(seed)
    d = m.d
    c = rng.random((4, d))
    P = m.canonical(c[rng.integers(0, 4, n)] + 0.02 * rng.standard_normal((n, d)))
    w = rng.random(n)
    return P, w / w.sum()


# -- covering numbers ---------------------------------------------------------


def test_covering_number_grid():
    g = (np.arange(16) + 0.5) / 16
    P = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    assert dm.covering_number(P, 1 / 16) == 256
    assert dm.covering_number(P, 1 / 4) == 16
    assert dm.covering_number(np.zeros((0, 2)), 0.1) == 0
    with pytest.raises(UsageError):
        dm.covering_number(P, 0)


@given(st.integers(0, 10_000), st.floats(0.01, 0.5))
def test_covering_number_monotone(seed, rho):
    P = np.random.default_rng(seed).random((200, 2))
    assert dm.covering_number(P, rho) <= dm.covering_number(P, rho / 2)
    assert dm.covering_number(P, rho) <= 200


# -- greedy extraction against the brute-force oracle --------------------------


@given(st.integers(0, 10_000), st.floats(0.1, 0.9), st.sampled_from(["torus", "euclid"]))
def test_greedy_matches_oracle(seed, alpha, space):
    m = Torus(2) if space == "torus" else Euclidean(2)
    P, w = clustered(m, 120, seed)
    scales = dm.log_scales(0.02, 0.1, 2)
    rep = dm.robust_decompose(EmpiricalMeasure(m, P, w), alpha, scales)
    kept, cuts = oracles.brute_greedy(m, P, w, scales, [s ** (2 * alpha) for s in scales])
    assert np.max(np.abs(kept - rep.kept)) <= 1e-12
    assert cuts == rep.cuts


@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_robust_invariants(seed, alpha):
    m = Torus(2)
    P, w = clustered(m, 150, seed)
    rep = dm.robust_decompose(EmpiricalMeasure(m, P, w), alpha, [0.03, 0.1])
    # mass conservation, nonnegativity, certificate after extraction
    assert np.allclose(rep.kept + rep.removed, w, atol=1e-15)
    assert np.all(rep.kept >= -1e-15)
    assert rep.certified
    for s, mm in zip(rep.scales, rep.max_ball_mass):
        brute = oracles.brute_ball_masses(m, P, rep.kept, s).max()
        assert abs(brute - mm) <= 1e-12
    assert all(dbl >= mm - 1e-15 for dbl, mm in zip(rep.double_mass, rep.max_ball_mass))


def test_robust_alpha_zero_keeps_everything():
    m = Euclidean(2)
    P, w = clustered(m, 80, 3)
    rep = dm.robust_decompose(EmpiricalMeasure(m, P, w), 0.0, [0.05])
    assert rep.trash == 0.0


def test_robust_trash_monotone_in_alpha():
    m = Torus(2)
    P, w = clustered(m, 300, 5)
    nu = EmpiricalMeasure(m, P, w)
    trash = [dm.robust_decompose(nu, a, [0.02, 0.05]).trash for a in (0.2, 0.5, 0.8)]
    assert trash[0] <= trash[1] <= trash[2]


def test_robust_rejects_bad_alpha():
    nu = EmpiricalMeasure(Torus(2), np.zeros((1, 2)), np.ones(1))
    with pytest.raises(UsageError):
        dm.robust_decompose(nu, 1.5, [0.1])


def test_log_scales_endpoints():
    s = dm.log_scales(2.0**-8, 2.0**-2, 8)
    assert len(s) == 49
    assert np.isclose(s[0], 2.0**-8) and np.isclose(s[-1], 2.0**-2)


# -- boxes ---------------------------------------------------------------------


@given(st.integers(0, 10_000), st.sampled_from([2, 3]), st.sampled_from(["torus", "euclid"]))
def test_box_mass_matches_oracle(seed, d, space):
    rng = np.random.default_rng(seed)
    m = Torus(d) if space == "torus" else Euclidean(d)
    P, w = clustered(m, 300, seed)
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    box = dm.Box(dm.Flag(Q), np.sort(rng.uniform(0.6, 1.0, d)), 0.01, P[0])
    fast = dm.box_mass(EmpiricalMeasure(m, P, w), box)
    slow = oracles.brute_box_mass(m, P, w, box.flag.basis, box.half_widths, box.center)
    assert abs(fast - slow) <= 1e-12


def test_box_too_large_on_torus():
    box = dm.Box(dm.Flag.standard(2), [0.1, 0.2], 0.5, np.zeros(2))
    with pytest.raises(UsageError):
        dm.box_mass(EmpiricalMeasure(Torus(2), np.zeros((1, 2)), np.ones(1)), box)


def test_box_validation_and_leb():
    box = dm.Box(dm.Flag.standard(2), [0.5, 1.0], 0.25, np.zeros(2))
    assert np.allclose(box.half_widths, [1.0, 0.5])
    assert np.isclose(dm.box_leb(box), 2.0)
    with pytest.raises(UsageError):
        dm.ExponentVector([0.8, 0.5])
    with pytest.raises(UsageError):
        dm.Box(dm.Flag.standard(2), [0.5, 1.0], 1.5, np.zeros(2))


def test_flag_orthonormal():
    F = dm.Flag(np.array([[1.0, 1.0], [0.0, 1.0]]))
    assert np.allclose(F.basis.T @ F.basis, np.eye(2))
    assert np.allclose(F.subspace(1)[:, 0], [1, 0])


# -- exponent simplex ----------------------------------------------------------


def test_simplex_membership_conditions():
    r = dm.simplex_membership([0.5, 1.0, 1.0], (1, 3), 1, 0.2, 0.1)
    assert r == {"first_exponent": True, "k0_gap": True, "block_pinching": True, "member": True}
    r = dm.simplex_membership([0.5, 0.7, 1.0], (1, 3), 1, 0.2, 0.1)
    assert not r["block_pinching"] and not r["member"]
    r = dm.simplex_membership([0.05, 0.1, 0.1], (1, 3), 1, 0.2, 0.1)
    assert not r["first_exponent"]
    with pytest.raises(UsageError):
        dm.simplex_membership([0.5, 1.0], (2, 1), 1, 0.1, 0.1)


# -- Grassmannian --------------------------------------------------------------


def test_schubert_distance_lines_in_plane():
    # lines in R^2 against a line V: the constraining variety is {V} itself
    V = np.array([[1.0], [0.0]])
    th = 0.3
    W = np.array([[np.cos(th)], [np.sin(th)]])
    assert np.isclose(dm.schubert_distance(W, V, 1), np.sin(th))
    # against the whole plane the variety is empty
    assert np.isinf(dm.schubert_distance(W, np.eye(2), 1))


def test_schubert_check_uniform_lines():
    rng = np.random.default_rng(0)
    ang = rng.uniform(0, np.pi, 4000)
    sigma = np.stack([np.cos(ang), np.sin(ang)], -1)[:, :, None]
    V = [np.array([[np.cos(a)], [np.sin(a)]]) for a in (0.0, 1.0, 2.0)]
    rows = dm.schubert_nc_check(sigma, None, V, [0.05, 0.1, 0.2], 1.0, const=1.0)
    assert all(r.passed for r in rows)
    # concentrated sample fails
    sigma2 = np.repeat(V[0][None], 100, axis=0)
    rows = dm.schubert_nc_check(sigma2, None, V[:1], [0.1], 1.0)
    assert not rows[0].passed


# -- multislicing --------------------------------------------------------------


def test_multislice_uniform_passes_and_point_mass_fails():
    rng = np.random.default_rng(1)
    m = Torus(2)
    P = rng.random((4000, 2))
    nu = EmpiricalMeasure(m, P, np.full(4000, 1 / 4000))
    thetas = [(dm.Flag.standard(2), [0.75, 1.0])]
    good = dm.multislicing_verify(nu, thetas, 2.0**-6, 0.5, 0.0, 0.05)
    assert good.failing_fraction == 0.0
    atom = EmpiricalMeasure(m, np.full((50, 2), 0.5), np.full(50, 1 / 50))
    bad = dm.multislicing_verify(atom, thetas, 2.0**-6, 0.5, 0.0, 0.05)
    assert bad.failing_fraction == 1.0


def test_multislice_simplex_precondition():
    nu = EmpiricalMeasure(Torus(2), np.random.default_rng(0).random((10, 2)), np.full(10, 0.1))
    with pytest.raises(PreconditionError):
        dm.multislicing_verify(nu, [(dm.Flag.standard(2), [0.1, 0.3])], 0.01, 0.5, 0.0, 0.1,
                               simplex=((1, 2), 1, 0.5, 0.1))


# -- linearization -------------------------------------------------------------


def test_linearization_linear_map_needs_few_translates(cat):
    from ergolab.diffeo import DiffeoWord

    w = DiffeoWord.from_codes([0, 0])
    # x is the image of y under the squared cat map
    rep = dm.linearization_check(w, [cat], [0.81, 0.77], [0.31, 0.42], 0.2, 0.05, samples=500)
    assert rep.points > 0
    assert 1 <= rep.K <= 4
    with pytest.raises(UsageError):
        dm.linearization_check(w, [cat], [0.3, 0.4], [0.3, 0.4], 0.2, 0.5)
