"""
The random walk: letter sampling, empirical pushforwards, ball masses, atom
decay, and the exponential-moment check for Markov chains.

Letters for trajectory ``j`` at step ``i`` are drawn from the counter stream
keyed by ``(seed, stream, j, i)``. Any chunking of the trajectories therefore
produces the same words, which is what makes reports thread-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from . import streams
from .diffeo import DiffeoWord, Propagation, SphereRotation, ToralLinear, propagate
from .errors import DomainError, PreconditionError, UsageError
from .manifold import ManifoldPoint
from .parallel import map_chunks

ATOM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class GeneratorMeasure:
    """Finitely supported law on letters.

    ``letters`` defaults to one forward letter per generator; pass e.g.
    ``[(0, False), (0, True)]`` for the symmetric law on {g, g^{-1}}.
    """

    gens: tuple
    weights: np.ndarray
    letters: tuple = None

    def __post_init__(self):
        gens = tuple(self.gens)
        if not gens:
            raise UsageError("generator measure needs at least one generator")
        m = gens[0].manifold
        if any(g.manifold != m for g in gens):
            raise UsageError("generators act on different manifolds")
        letters = self.letters
        if letters is None:
            letters = tuple((i, False) for i in range(len(gens)))
        letters = tuple((int(i), bool(inv)) for i, inv in letters)
        if any(not 0 <= i < len(gens) for i, _ in letters):
            raise UsageError("letter refers to an unknown generator")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(letters),):
            raise UsageError("one weight per letter required")
        if np.any(w <= 0):
            raise UsageError("weights must be strictly positive on the support")
        if abs(w.sum() - 1.0) > 1e-12:
            raise UsageError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "gens", gens)
        object.__setattr__(self, "letters", letters)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "manifold", m)
        object.__setattr__(self, "codes", DiffeoWord(letters).codes())
        cdf = np.cumsum(w)
        cdf[-1] = 1.0
        object.__setattr__(self, "cdf", cdf)

    @classmethod
    def uniform(cls, gens, letters=None):
        k = len(letters) if letters is not None else len(gens)
        return cls(tuple(gens), np.full(k, 1.0 / k), letters)

    @property
    def volume_preserving(self) -> bool:
        return all(isinstance(g, (ToralLinear, SphereRotation)) for g in self.gens)

    def sample_codes(self, n, traj, seed, stream=streams.LETTERS):
        traj = np.asarray(traj, dtype=np.int64)
        if n == 0:
            return np.zeros((len(traj), 0), dtype=np.int64)
        idx = streams.categorical(
            self.cdf, seed, stream, traj[:, None], np.arange(n, dtype=np.int64)[None, :]
        )
        return self.codes[idx]


def sample_word(mu: GeneratorMeasure, n: int, seed: int, traj: int = 0) -> DiffeoWord:
    if n < 0:
        raise UsageError("word length must be nonnegative")
    return DiffeoWord.from_codes(mu.sample_codes(n, [traj], seed)[0])


def run_walk(
    mu: GeneratorMeasure,
    x0,
    n: int,
    N: int,
    seed: int,
    stream=streams.LETTERS,
    jacobian=False,
    inverse_jacobian=False,
    log_det=False,
    threads=None,
) -> Propagation:
    """Push N trajectories through n steps. ``x0`` is one point or N points."""
    m = mu.manifold
    x0 = m.check_point(x0)
    per_traj = x0.ndim == 2
    if per_traj and len(x0) != N:
        raise UsageError("need one starting point per trajectory")

    def chunk(a, b):
        codes = mu.sample_codes(n, np.arange(a, b), seed, stream)
        start = x0[a:b] if per_traj else x0
        return propagate(mu.gens, codes, start, jacobian, inverse_jacobian, log_det)

    parts = map_chunks(chunk, N, threads)
    cat = lambda name: (
        np.concatenate([getattr(p, name) for p in parts])
        if getattr(parts[0], name) is not None
        else None
    )
    return Propagation(cat("points"), cat("jacobian"), cat("inverse_jacobian"), cat("log_det"))


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    manifold: object
    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pts = np.atleast_2d(self.manifold.check_point(self.points))
        if self.weights is None:
            w = np.full(len(pts), 1.0 / max(len(pts), 1))
        else:
            w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(pts),):
            raise UsageError("one weight per atom required")
        if np.any(w < 0):
            raise UsageError("atom weights must be nonnegative")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def __len__(self):
        return len(self.points)

    @property
    def atoms(self):
        return [(ManifoldPoint(self.manifold, p), float(w)) for p, w in zip(self.points, self.weights)]


def empirical_pushforward(mu, x, n, N, seed, threads=None) -> EmpiricalMeasure:
    if N < 1:
        raise UsageError("need at least one sample")
    if isinstance(x, ManifoldPoint):
        x = x.coords
    prop = run_walk(mu, x, n, N, seed, threads=threads)
    return EmpiricalMeasure(mu.manifold, prop.points)


@dataclass(frozen=True)
class BallMass:
    mass: float
    witness: np.ndarray
    mass_double: float  # same center, radius 2 rho
    rho: float


def max_ball_mass(nu: EmpiricalMeasure, rho: float) -> BallMass:
    """Largest mass of an open rho-ball centered at an atom.

    The true supremum over all centers lies between ``mass`` and
    ``mass_double`` (any rho-ball meeting the support sits inside a 2 rho-ball
    around one of its atoms).
    """
    if rho <= 0:
        raise UsageError("radius must be positive")
    if len(nu) == 0 or nu.total_mass == 0:
        raise DomainError("max_ball_mass of an empty measure")
    idx = nu.manifold.kdtree(nu.points)
    masses = idx.masses(nu.points, rho, nu.weights)
    best = int(np.argmax(masses))
    double = float(np.max(idx.masses(nu.points, 2 * rho, nu.weights)))
    return BallMass(float(masses[best]), nu.points[best].copy(), double, float(rho))


def cluster_labels(manifold, points, tol=ATOM_TOL):
    """Connected components of the graph joining points closer than ``tol``."""
    n = len(points)
    tree = manifold.kdtree(points).tree
    pairs = tree.query_pairs(tol, output_type="ndarray")
    g = sparse.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = csgraph.connected_components(g, directed=False)
    return labels


def max_atom_mass(nu: EmpiricalMeasure, tol=ATOM_TOL) -> float:
    labels = cluster_labels(nu.manifold, nu.points, tol)
    return float(np.max(np.bincount(labels, weights=nu.weights)))


def atom_decay_curve(mu, x, n_max, N, seed, tol=ATOM_TOL):
    """Largest empirical point mass of mu^{*n} * delta_x for n = 0..n_max."""
    if isinstance(x, ManifoldPoint):
        x = x.coords
    m = mu.manifold
    pts = np.broadcast_to(m.check_point(x), (N, m.ambient_dim)).copy()
    codes = mu.sample_codes(n_max, np.arange(N), seed)
    out = [1.0]
    for i in range(n_max):
        pts = propagate(mu.gens, codes[:, i : i + 1], pts).points
        out.append(max_atom_mass(EmpiricalMeasure(m, pts), tol))
    return np.array(out)


# ----------------------------------------------------------------------------
# Large deviations for Markov chains


@dataclass(frozen=True, eq=False)
class FiniteChain:
    """Finite-state chain with transition matrix P and observable f."""

    P: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        f = np.asarray(self.f, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or f.shape != (len(P),):
            raise UsageError("P must be k x k and f of length k")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=1) - 1)) > 1e-12:
            raise UsageError("rows of P must be probability vectors")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "f", f)

    @property
    def sup_f(self):
        return float(np.max(np.abs(self.f)))


@dataclass(frozen=True, eq=False)
class SampledChain:
    """Chain given by a vectorized step ``step(states, u) -> states`` driven
    by uniforms ``u`` of shape (trials, width), and observable ``f(states)``."""

    step: Callable
    f: Callable
    sup_f: float
    x0: np.ndarray
    width: int = 1


@dataclass
class LDPReport:
    gamma: float
    lhs: float
    rhs: float
    passed: bool
    n: int
    trials: int
    seed: int
    epsilon: float
    stderr: float = 0.0
    exact: bool = False
    tail_prob: float = float("nan")
    tail_bound: float = float("nan")
    tail_passed: bool = True
    lhs_by_state: list = field(default_factory=list)

    def to_dict(self):
        return {
            "gamma": self.gamma,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "pass": self.passed,
            "n": self.n,
            "trials": self.trials,
            "seed": self.seed,
            "epsilon": self.epsilon,
            "stderr": self.stderr,
            "exact": self.exact,
            "tail_prob": self.tail_prob,
            "tail_bound": self.tail_bound,
            "tail_pass": self.tail_passed,
        }


def ldp_gamma(epsilon, sup_f):
    return epsilon / (1.0 + sup_f) ** 2


def exact_moment(chain: FiniteChain, gamma, n):
    """Vector over starting states of E_x exp(gamma * sum_{i=1}^n f(X_i))."""
    M = chain.P * np.exp(gamma * chain.f)[None, :]
    v = np.ones(len(chain.f))
    for _ in range(n):
        v = M @ v
    return v


def visit_count_laws(chain: FiniteChain, n_max):
    """Yield (n, law) for n = 0..n_max; law[x][c] is P_x(visit counts of
    states 0..k-2 among X_1..X_n equal c), one array axis per counted state."""
    k = len(chain.f)
    if (n_max + 1) ** (k - 1) * k * k > 2e7:
        raise UsageError("state space too large for the exact tail computation")
    shape = (n_max + 1,) * (k - 1)
    dist = np.zeros((k, k) + shape)
    for x in range(k):
        dist[(x, x) + (0,) * (k - 1)] = 1.0
    flat = (k, k, -1)
    yield 0, dist.sum(axis=1)
    PT = chain.P.T[None]
    for n in range(1, n_max + 1):
        inflow = (PT @ dist.reshape(flat)).reshape(dist.shape)
        new = np.zeros_like(dist)
        for t in range(k - 1):
            dst = [slice(None)] * (k - 1)
            src = [slice(None)] * (k - 1)
            dst[t], src[t] = slice(1, None), slice(0, n_max)
            new[(slice(None), t) + tuple(dst)] = inflow[(slice(None), t) + tuple(src)]
        new[:, k - 1] = inflow[:, k - 1]
        dist = new
        yield n, dist.sum(axis=1)


def _tail_from_law(chain, law, n, threshold):
    k = len(chain.f)
    counts = np.meshgrid(*[np.arange(s) for s in law.shape[1:]], indexing="ij") if k > 1 else []
    rest = n - sum(counts) if counts else np.full((), n)
    total = sum(c * chain.f[i] for i, c in enumerate(counts)) + rest * chain.f[-1]
    hit = (rest >= 0) & (total >= threshold - 1e-12)
    return law[:, hit].sum(axis=1) if k > 1 else np.where(hit, law, 0.0).reshape(k)


def exact_tail(chain: FiniteChain, n, threshold):
    """P_x(sum_{i=1}^n f(X_i) >= threshold) for every start x, by dynamic
    programming over visit counts of states 0..k-2."""
    for _, law in visit_count_laws(chain, n):
        pass
    return _tail_from_law(chain, law, n, threshold)


def _check_drift(chain, states):
    drift = chain.P @ chain.f
    for s in states:
        if drift[s] > 1e-12:
            raise PreconditionError(f"drift E_x f(X_1) = {drift[s]:.6g} > 0 at state {s}", witness=s)


def _exact_report(chain, epsilon, n, lhs_all, tails, idx, seed):
    gamma = ldp_gamma(epsilon, chain.sup_f)
    rhs = math.exp(gamma * epsilon * n)
    tail_bound = math.exp(-gamma * epsilon * n)
    lhs = float(np.max(lhs_all[idx]))
    tail = float(np.max(tails[idx]))
    return LDPReport(
        gamma, lhs, rhs, bool(lhs <= rhs * (1 + 1e-12)), n, 0, seed, epsilon,
        exact=True,
        tail_prob=tail,
        tail_bound=tail_bound,
        tail_passed=bool(tail <= tail_bound * (1 + 1e-12)),
        lhs_by_state=[float(v) for v in lhs_all[idx]],
    )


def ldp_moment_sweep(chain: FiniteChain, epsilons, n_max, x=None) -> list:
    """Exact reports for every epsilon and every n = 1..n_max, sharing one
    pass of the visit-count recursion. Ordered by n, then epsilon."""
    for eps in epsilons:
        if not 0 < eps <= 0.5:
            raise UsageError("epsilon must lie in (0, 1/2]")
    idx = list(range(len(chain.f))) if x is None else [int(x)]
    _check_drift(chain, idx)
    Ms = [chain.P * np.exp(ldp_gamma(eps, chain.sup_f) * chain.f)[None, :] for eps in epsilons]
    v = [np.ones(len(chain.f)) for _ in epsilons]
    out = []
    for n, law in visit_count_laws(chain, n_max):
        if n == 0:
            continue
        for j, eps in enumerate(epsilons):
            v[j] = Ms[j] @ v[j]
            tails = _tail_from_law(chain, law, n, 2 * eps * n)
            out.append(_exact_report(chain, eps, n, v[j], tails, idx, 0))
    return out


def ldp_moment_check(chain, epsilon, n, trials=0, seed=0, x=None) -> LDPReport:
    """Compare E_x exp(gamma S_n) with exp(gamma * epsilon * n).

    Finite chains are evaluated exactly for every starting state (or only
    ``x`` when given). Sampled chains use ``trials`` Monte Carlo paths.
    """
    if not 0 < epsilon <= 0.5:
        raise UsageError("epsilon must lie in (0, 1/2]")
    if n < 0:
        raise UsageError("n must be nonnegative")
    if isinstance(chain, FiniteChain):
        idx = list(range(len(chain.f))) if x is None else [int(x)]
        _check_drift(chain, idx)
        lhs_all = exact_moment(chain, ldp_gamma(epsilon, chain.sup_f), n)
        tails = exact_tail(chain, n, 2 * epsilon * n)
        return _exact_report(chain, epsilon, n, lhs_all, tails, idx, seed)
    gamma = ldp_gamma(epsilon, chain.sup_f)
    rhs = math.exp(gamma * epsilon * n)
    tail_bound = math.exp(-gamma * epsilon * n)
    if trials < 2:
        raise UsageError("sampled chains need at least two trials")
    x0 = np.asarray(chain.x0 if x is None else x)
    states = np.broadcast_to(x0, (trials,) + x0.shape).copy()
    traj = np.arange(trials)[:, None]
    cols = np.arange(chain.width)[None, :]
    S = np.zeros(trials)
    first = None
    for i in range(n):
        u = streams.uniform(seed, streams.LETTERS, traj, i * chain.width + cols)
        states = chain.step(states, u)
        fv = np.asarray(chain.f(states), dtype=float)
        if first is None:
            first = fv
        S += fv
    if first is not None:
        mean = first.mean()
        se = first.std(ddof=1) / math.sqrt(trials)
        if mean - 2 * se > 0:
            raise PreconditionError(f"drift E_x f(X_1) estimated {mean:.4g} > 0", witness=x0.tolist())
    e = np.exp(gamma * S)
    lhs = float(e.mean())
    se = float(e.std(ddof=1) / math.sqrt(trials))
    tail = float(np.mean(S >= 2 * epsilon * n))
    tail_se = math.sqrt(max(tail * (1 - tail), 1.0 / trials) / trials)
    return LDPReport(
        gamma, lhs, rhs, bool(lhs <= rhs + 2 * se), n, trials, seed, epsilon,
        stderr=se,
        tail_prob=tail,
        tail_bound=tail_bound,
        tail_passed=bool(tail <= tail_bound + 2 * tail_se),
    )
