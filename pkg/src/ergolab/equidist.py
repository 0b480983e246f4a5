"""
Equidistribution numerics: mollification, the bounded-Lipschitz Wasserstein
distance, Fourier-truncated transfer operators on the torus, and the curves
and pipeline that tie the three phases together.

The H^s spectral gap is replaced by the spectral radius of the operator
restricted to trigonometric polynomials of degree <= K with the constant mode
removed. That is a surrogate: it sees the mixing rate on smooth observables
but is not a bound on the essential spectrum.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.spatial import cKDTree

from . import streams
from .diffeo import ToralLinear, fibonacci_sphere, propagate
from .errors import NumericError, UsageError
from .manifold import ManifoldPoint, Sphere, Torus
from .walk import EmpiricalMeasure, GeneratorMeasure, max_ball_mass

LP_TOL = 1e-7  # HiGHS feasibility tolerance


# ----------------------------------------------------------------------------
# Mollification


def cell_grid(manifold, K):
    """Cell centres and cell measure: K^d lattice on the torus, K Fibonacci
    points on S^2."""
    if isinstance(manifold, Torus):
        g = (np.arange(K) + 0.5) / K
        pts = np.stack(np.meshgrid(*[g] * manifold.d, indexing="ij"), axis=-1).reshape(-1, manifold.d)
        return pts, 1.0 / K**manifold.d, 1.0 / K
    if isinstance(manifold, Sphere):
        pts = fibonacci_sphere(K, manifold.d)
        return pts, 1.0 / K, math.sqrt(4 * math.pi / K)
    raise UsageError("cell grids exist for the torus and the sphere only")


@dataclass
class MollifiedDensity:
    grid: np.ndarray
    values: np.ndarray
    cell_measure: float
    renormalization: float  # mass before renormalizing to 1
    rho: float

    @property
    def mass(self):
        return float(self.values.sum() * self.cell_measure)


def mollify(nu: EmpiricalMeasure, rho: float, K: int = 128) -> MollifiedDensity:
    """Ball-averaged density of nu at scale rho evaluated at cell centres."""
    m = nu.manifold
    grid, cm, mesh = cell_grid(m, K)
    if rho <= 2 * mesh:
        raise UsageError(f"rho = {rho:g} must exceed two grid cells ({2 * mesh:g})")
    idx = m.kdtree(nu.points)
    vals = idx.masses(grid, rho, nu.weights) / m.ball_volume(rho)
    mass = float(vals.sum() * cm)
    if mass <= 0:
        raise UsageError("mollified density vanishes on the grid")
    return MollifiedDensity(grid, vals / mass, cm, mass, float(rho))


# ----------------------------------------------------------------------------
# Bounded-Lipschitz Wasserstein distance


@dataclass
class W1Report:
    value: float
    witness: np.ndarray = field(repr=False)  # optimal f on the combined support
    u: float
    L: float
    status: str
    rounds: int
    constraints: int
    sub_err: float = 0.0
    atoms: int = 0


def stratified_reduce(nu, cells_per_axis):
    """Replace the atoms of each grid cell by one atom at their barycentre.

    Returns the reduced measure and the bound (1/2) sum w d(atom, rep) on the
    change of the distance below.
    """
    m = nu.manifold
    pts, w = nu.points, nu.weights
    if isinstance(m, Torus):
        K = cells_per_axis
        cell = np.minimum(np.floor(pts * K).astype(np.int64), K - 1)
        key = np.ravel_multi_index(cell.T, (K,) * m.d)
        centre = (cell + 0.5) / K
        local = m.displacement(centre, pts)
        uniq, inv = np.unique(key, return_inverse=True)
        W = np.bincount(inv, weights=w)
        safe = np.where(W > 0, W, 1.0)
        off = np.stack([np.bincount(inv, weights=w * local[:, j]) for j in range(m.d)], axis=1) / safe[:, None]
        cc = (np.stack(np.unravel_index(uniq, (K,) * m.d), axis=1) + 0.5) / K
        reps = m.canonical(cc + off)
        err = 0.5 * float(np.sum(w * m.distance(pts, reps[inv])))
    else:
        if isinstance(m, Sphere):
            centres = fibonacci_sphere(cells_per_axis**2, m.d)
        else:
            lo, hi = pts.min(axis=0), pts.max(axis=0)
            g = [np.linspace(a, b, cells_per_axis) for a, b in zip(lo, hi)]
            centres = np.stack(np.meshgrid(*g, indexing="ij"), axis=-1).reshape(-1, m.d)
        _, owner = cKDTree(centres).query(pts)
        uniq, inv = np.unique(owner, return_inverse=True)
        W = np.bincount(inv, weights=w)
        safe = np.where(W > 0, W, 1.0)
        bary = np.stack([np.bincount(inv, weights=w * pts[:, j]) for j in range(pts.shape[1])], axis=1) / safe[:, None]
        reps = m.canonical(bary) if isinstance(m, Sphere) else bary
        err = 0.5 * float(np.sum(w * m.distance(pts, reps[inv])))
    return EmpiricalMeasure(m, reps, W), err


def _pair_distances(m, pts, a, b):
    return m.distance(pts[a:b, None, :], pts[None, :, :])


def wasserstein1(nu1, nu2, max_atoms=10_000, reduce_cells=None, knn=10, max_rounds=100, per_row=4) -> W1Report:
    """Half the supremum of (nu1 - nu2)(f) over |f|_inf + Lip(f) <= 1.

    Solved exactly as a linear program over the combined support with HiGHS.
    Lipschitz constraints are generated lazily: nearest-neighbour pairs first,
    then every violated pair, until none remains.
    """
    m = nu1.manifold
    if nu2.manifold != m:
        raise UsageError("measures live on different spaces")
    for nu in (nu1, nu2):
        if abs(nu.total_mass - 1.0) > 1e-9:
            raise UsageError("wasserstein1 needs probability measures")
    sub_err = 0.0
    if reduce_cells is not None:
        nu1, e1 = stratified_reduce(nu1, reduce_cells)
        nu2, e2 = stratified_reduce(nu2, reduce_cells)
        sub_err = e1 + e2
    if len(nu1) + len(nu2) > max_atoms:
        raise UsageError(
            f"combined support {len(nu1) + len(nu2)} exceeds {max_atoms} atoms; "
            "pass reduce_cells for the stratified reduction"
        )
    pts = np.vstack([nu1.points, nu2.points])
    delta = np.concatenate([nu1.weights, -nu2.weights])
    n = len(pts)
    # initial pairs: k nearest neighbours
    k = min(knn, n - 1)
    if k >= 1:
        index = m.kdtree(pts)
        _, nb = index.tree.query(pts if not isinstance(m, Torus) else m.canonical(pts), k + 1)
        I = np.repeat(np.arange(n), k)
        J = nb[:, 1:].ravel()
        pairs = np.unique(np.sort(np.stack([I, J], axis=1), axis=1), axis=0)
        pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    else:
        pairs = np.zeros((0, 2), dtype=np.int64)
    rounds = 0
    while True:
        rounds += 1
        res = _solve_lp(m, pts, delta, pairs)
        if res.status != 0:
            raise NumericError(f"LP solver failed: {res.message}")
        f = res.x[:n]
        u, L = res.x[n], res.x[n + 1]
        new = []
        chunk = max(1, 2_000_000 // max(n, 1))
        for a in range(0, n, chunk):
            b = min(a + chunk, n)
            D = _pair_distances(m, pts, a, b)
            excess = np.abs(f[a:b, None] - f[None, :]) - L * D
            # the few worst partners of each row are enough per round
            top = np.argsort(-excess, axis=1)[:, :per_row]
            ii = np.repeat(np.arange(a, b), top.shape[1])
            jj = top.ravel()
            ok = excess[ii - a, jj] > LP_TOL
            if ok.any():
                new.append(np.sort(np.stack([ii[ok], jj[ok]], axis=1), axis=1))
        if not new:
            break
        if rounds >= max_rounds:
            raise NumericError("constraint generation did not converge")
        pairs = np.unique(np.vstack([pairs] + new), axis=0)
    value = 0.5 * float(-res.fun)
    return W1Report(value if value > 0 else 0.0, f, float(u), float(L), "optimal", rounds, len(pairs), sub_err, n)


def _solve_lp(m, pts, delta, pairs):
    n = len(pts)
    nv = n + 2
    iu, iL = n, n + 1
    rows, cols, vals = [], [], []
    r = 0
    ar = np.arange(n)
    # f_i - u <= 0 and -f_i - u <= 0
    rows += [ar, ar, ar + n, ar + n]
    cols += [ar, np.full(n, iu), ar, np.full(n, iu)]
    vals += [np.ones(n), -np.ones(n), -np.ones(n), -np.ones(n)]
    r = 2 * n
    p = len(pairs)
    if p:
        dij = m.distance(pts[pairs[:, 0]], pts[pairs[:, 1]])
        pr = np.arange(p)
        for sgn, off in ((1.0, r), (-1.0, r + p)):
            rows += [pr + off, pr + off, pr + off]
            cols += [pairs[:, 0], pairs[:, 1], np.full(p, iL)]
            vals += [np.full(p, sgn), np.full(p, -sgn), -dij]
        r += 2 * p
    rows.append(np.array([r]))
    cols.append(np.array([iu]))
    vals.append(np.array([1.0]))
    rows.append(np.array([r]))
    cols.append(np.array([iL]))
    vals.append(np.array([1.0]))
    r += 1
    A = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(r, nv)
    )
    b = np.zeros(r)
    b[-1] = 1.0
    c = np.concatenate([-delta, [0.0, 0.0]])
    bounds = [(None, None)] * n + [(0.0, 1.0), (0.0, 1.0)]
    return linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")


# ----------------------------------------------------------------------------
# Fourier transfer operator


def frequencies(d, K):
    """All k in Z^d with |k|_inf <= K in lexicographic order; index of k = 0."""
    rng = range(-K, K + 1)
    ks = np.array(list(itertools.product(rng, repeat=d)), dtype=np.int64)
    zero = int(np.nonzero(np.all(ks == 0, axis=1))[0][0])
    return ks, zero


@dataclass
class FourierOperator:
    K: int
    quad: int
    freqs: np.ndarray
    zero: int
    matrix: np.ndarray = field(repr=False)
    aliasing_warnings: list = field(default_factory=list)

    def block(self):
        keep = np.arange(len(self.freqs)) != self.zero
        return self.matrix[np.ix_(keep, keep)]


def fourier_operator(mu: GeneratorMeasure, K: int, quad: int = 128, alias_tol=1e-10) -> FourierOperator:
    """T[k, l] = sum_g w_g * (l-th Fourier coefficient of x -> e^{2 pi i <k, g x>}).

    Linear letters are filled exactly (T[k, A^T k] = 1); other letters use an
    FFT on a quad^d tensor grid.
    """
    m = mu.manifold
    if not isinstance(m, Torus):
        raise UsageError("Fourier transfer operators are implemented on the torus only")
    d = m.d
    ks, zero = frequencies(d, K)
    pos = {tuple(k): i for i, k in enumerate(ks)}
    T = np.zeros((len(ks), len(ks)), dtype=complex)
    warnings_ = []
    grid = None
    for code, wt in zip(mu.codes, mu.weights):
        g = mu.gens[code // 2]
        inv = bool(code % 2)
        if isinstance(g, ToralLinear):
            M = g.inverse_matrix if inv else g.matrix
            images = np.rint(ks @ M).astype(np.int64)  # rows: A^T k
            for i, l in enumerate(images):
                j = pos.get(tuple(l))
                if j is not None:
                    T[i, j] += wt
            continue
        if grid is None:
            ax = np.arange(quad) / quad
            grid = np.stack(np.meshgrid(*[ax] * d, indexing="ij"), axis=-1).reshape(-1, d)
        gx = propagate(mu.gens, np.full((len(grid), 1), code), grid).points
        phase = np.exp(2j * np.pi * (gx @ ks.T))  # (Q, modes)
        coeff = np.fft.fftn(phase.reshape((quad,) * d + (len(ks),)), axes=tuple(range(d))) / quad**d
        idx = tuple((ks[:, j] % quad) for j in range(d))
        for i in range(len(ks)):
            c = coeff[..., i]
            T[i] += wt * c[idx]
            # energy beyond 2K that would alias if quad were too small
            freq = np.fft.fftfreq(quad, 1.0 / quad).astype(np.int64)
            mesh = np.stack(np.meshgrid(*[freq] * d, indexing="ij"), axis=-1)
            far = np.max(np.abs(mesh), axis=-1) > 2 * K
            tail = float(np.max(np.abs(c[far]))) if far.any() else 0.0
            if tail > alias_tol:
                warnings_.append({"k": ks[i].tolist(), "letter": int(code), "tail": tail})
    T[zero] = 0.0
    T[zero, zero] = 1.0
    return FourierOperator(K, quad, ks, zero, T, warnings_)


@dataclass
class SpectrumReport:
    K: int
    quad: int
    block_radius: float
    leading_eigs: list
    aliasing_warnings: list
    operator: FourierOperator = field(repr=False, default=None)

    def to_dict(self):
        return {
            "K": self.K,
            "quad": self.quad,
            "block_radius": self.block_radius,
            "leading_eigs": [[float(z.real), float(z.imag)] for z in self.leading_eigs],
            "aliasing_warnings": self.aliasing_warnings,
        }


def power_radius(B, iters=1000, tail=100, seed=0):
    """Spectral radius estimate: geometric mean growth over the last ``tail``
    of ``iters`` normalized power iterations; exactly 0 if the iterate dies."""
    if B.shape[0] == 0:
        return 0.0
    rng = streams.generator(seed, streams.GRID, B.shape[0])
    v = rng.standard_normal(B.shape[0]) + 1j * rng.standard_normal(B.shape[0])
    v /= np.linalg.norm(v)
    logs = []
    for _ in range(iters):
        v = B @ v
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return 0.0
        logs.append(math.log(nv))
        v /= nv
    return float(math.exp(np.mean(logs[-tail:])))


def fourier_transfer_spectrum(mu, K, quad=128, iters=1000, n_eigs=6) -> SpectrumReport:
    op = fourier_operator(mu, K, quad)
    B = op.block()
    radius = power_radius(B, iters)
    eigs = np.linalg.eigvals(B) if B.size else np.zeros(0)
    order = np.argsort(-np.abs(eigs), kind="stable")
    lead = [complex(z) for z in eigs[order[:n_eigs]]]
    return SpectrumReport(K, quad, radius, lead, op.aliasing_warnings, op)


@dataclass
class StationaryReport:
    freqs: np.ndarray
    coefficients: np.ndarray  # moments m(k) = int e^{2 pi i <k, x>} d nu
    min_density: float
    grid_K: int
    unit_eigs_in_block: int  # > 0: fixed density not unique at this truncation
    iterations: int

    def density(self, x):
        x = np.atleast_2d(x)
        return np.real(np.exp(-2j * np.pi * (x @ self.freqs.T)) @ self.coefficients)


def stationary_density(mu, K, quad=128, max_iter=10_000, tol=1e-12, grid_K=64) -> StationaryReport:
    """Moments of a stationary density: the fixed vector m = T m with m(0) = 1,
    by power iteration from the constant density."""
    op = fourier_operator(mu, K, quad)
    T = op.matrix
    v = np.zeros(len(op.freqs), dtype=complex)
    v[op.zero] = 1.0
    for it in range(1, max_iter + 1):
        nv = T @ v
        nv /= nv[op.zero]
        if np.max(np.abs(nv - v)) < tol:
            v = nv
            break
        v = nv
    else:
        raise NumericError("stationary density power iteration did not converge")
    eig = np.linalg.eigvals(op.block()) if len(op.freqs) > 1 else np.zeros(0)
    unit = int(np.sum(np.abs(eig - 1.0) < 1e-8))
    rep = StationaryReport(op.freqs, v, 0.0, grid_K, unit, it)
    grid, _, _ = cell_grid(mu.manifold, grid_K)
    rep.min_density = float(np.min(rep.density(grid)))
    return rep


# ----------------------------------------------------------------------------
# Equidistribution


def reference_measure(mu, rho, kind="auto", K=8, quad=128):
    """Vol grid of mesh rho, or the stationary density on that grid."""
    m = mu.manifold
    if kind == "auto":
        from .cocycle import log_det_estimate

        grid = m.sample_uniform(16, streams.generator(0, streams.GRID))
        est = log_det_estimate(mu, 1, grid, samples=64)
        kind = "vol" if est.value < 1e-9 else "stationary"
    cells = int(round(1.0 / rho)) if isinstance(m, Torus) else int(round(4 * math.pi / rho**2))
    pts, cm, _ = cell_grid(m, cells)
    if kind == "vol":
        return EmpiricalMeasure(m, pts, np.full(len(pts), 1.0 / len(pts))), "vol"
    if kind == "stationary":
        st = stationary_density(mu, K, quad)
        dens = np.clip(st.density(pts), 0.0, None)
        return EmpiricalMeasure(m, pts, dens / dens.sum()), "stationary"
    raise UsageError(f"unknown reference {kind!r}")


@dataclass
class EquidistCurve:
    n: list
    w1: list
    mc_err: list
    sub_err: list
    reference: str
    decreasing_steps: float  # fraction of consecutive steps that do not increase
    final: float

    def rows(self):
        return list(zip(self.n, self.w1, self.mc_err, self.sub_err))


def _snapshots(mu, x, n_list, N, seed, threads=None):
    """Walk positions at every n in n_list (same words as run_walk)."""
    m = mu.manifold
    x = x.coords if isinstance(x, ManifoldPoint) else m.check_point(x)
    n_sorted = sorted(set(int(n) for n in n_list))
    out = {}
    pts = np.broadcast_to(x, (N, m.ambient_dim)).copy()
    done = 0
    codes = mu.sample_codes(n_sorted[-1], np.arange(N), seed) if n_sorted else None
    for n in n_sorted:
        if n > done:
            pts = propagate(mu.gens, codes[:, done:n], pts).points
            done = n
        out[n] = pts.copy()
    return out


def equidistribution_curve(mu, x, n_list, N, rho, seed=0, reference="auto", threads=None, lp_atoms=2000) -> EquidistCurve:
    """W1 between mu^{*n} * delta_x (N samples) and the reference, per n.

    Both measures are reduced to cells so that the LP has about ``lp_atoms``
    atoms (sub_err bounds that step); mc_err is half the distance between the two halves of the sample.
    """
    m = mu.manifold
    ref, kind = reference_measure(mu, rho, reference)
    fine = int(round(1.0 / rho)) if isinstance(m, Torus) else int(round(2 * math.pi / rho))
    cells = min(fine, int(round((lp_atoms / 2) ** (1.0 / m.d))))
    snaps = _snapshots(mu, x, n_list, N, seed, threads)
    w1, mc, sub = [], [], []
    for n in sorted(snaps):
        P = snaps[n]
        emp = EmpiricalMeasure(m, P)
        rep = wasserstein1(emp, ref, max_atoms=20_000, reduce_cells=cells)
        h1 = EmpiricalMeasure(m, P[0::2])
        h2 = EmpiricalMeasure(m, P[1::2])
        half = wasserstein1(h1, h2, max_atoms=20_000, reduce_cells=cells)
        w1.append(rep.value)
        sub.append(rep.sub_err)
        mc.append(0.5 * half.value)
    steps = np.diff(w1)
    frac = float(np.mean(steps <= 1e-12)) if len(steps) else 1.0
    return EquidistCurve(sorted(snaps), w1, mc, sub, kind, frac, w1[-1] if w1 else math.nan)


def phase_pipeline(mu, x, config: dict) -> dict:
    """Phase I ball-mass decay, Phase II robustness gain, Phase III W1 decay."""
    from .dimension import dimension_increment_experiment

    m = mu.manifold
    seed = int(config.get("seed", 0))
    N = int(config.get("N", 4000))
    rhos = [float(r) for r in config.get("rho_list", [2**-4, 2**-6, 2**-8])]
    n1 = int(config.get("n_phase1", 20))
    snaps = _snapshots(mu, x, [n1], N, seed)
    nu = EmpiricalMeasure(m, snaps[n1])
    masses = [max_ball_mass(nu, r).mass for r in rhos]
    # largest kappa0 with mass <= 2 rho^kappa0 at every tested rho
    kappa0 = min(math.log(max(ms, 1e-300) / 2) / math.log(r) for ms, r in zip(masses, rhos))
    phase1 = {
        "n": n1,
        "rho": rhos,
        "max_ball_mass": masses,
        "kappa0": kappa0,
        "pass": bool(kappa0 > 0),
    }
    p2cfg = config.get("phase2", {})
    rho2 = float(p2cfg.get("rho", 2**-12))
    alpha = float(p2cfg.get("alpha", 0.05))
    try:
        inc = dimension_increment_experiment(
            mu, nu, alpha, rho2,
            words_per_atom=int(p2cfg.get("words_per_atom", 4)),
            tau_budget=float(p2cfg.get("tau_budget", 0.5)),
            seed=seed,
        )
        phase2 = {
            "alpha": alpha,
            "tau": inc.tau,
            "n_steps": inc.n_steps,
            "alpha_before": inc.alpha_before,
            "alpha_after": inc.alpha_after,
            "alpha_after_stderr": inc.alpha_after_stderr,
            "pass": bool(inc.alpha_after > alpha),
        }
    except Exception as exc:  # precondition refusals are part of the report
        phase2 = {"alpha": alpha, "error": str(exc), "pass": False}
    n_list = [int(n) for n in config.get("n_list", [0, 10, 20, 40])]
    rho3 = float(config.get("rho", 1 / 64))
    curve = equidistribution_curve(mu, x, n_list, N, rho3, seed)
    thr = float(config.get("w1_threshold", 0.05))
    phase3 = {
        "n": curve.n,
        "w1": curve.w1,
        "mc_err": curve.mc_err,
        "sub_err": curve.sub_err,
        "reference": curve.reference,
        "threshold": thr,
        "pass": bool(curve.final <= thr),
    }
    return {"phase_I": phase1, "phase_II": phase2, "phase_III": phase3}
