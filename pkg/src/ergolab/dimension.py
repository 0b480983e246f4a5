"""
Covering numbers, robustness, multislicing boxes and Grassmannian
non-concentration checks.

The central routine is ``greedy_extract``: given a family of symmetric
neighbourhoods (balls at several scales, or one anisotropic box shape) and a
mass cap per shape, it repeatedly picks the atom-centred neighbourhood with
the largest overflow (ties by atom index) and scales the atoms inside it down
until the cap is met. Masses only decrease, so every neighbourhood is cut at
most once. The removed mass is the trash.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from . import streams
from .diffeo import propagate
from .errors import PreconditionError, UsageError
from .manifold import Euclidean, ManifoldPoint, Torus
from .walk import EmpiricalMeasure, GeneratorMeasure, run_walk

KEY_DECIMALS = 12  # overflow keys are compared after rounding, so near-ties resolve by index


@dataclass(frozen=True, eq=False)
class DiscreteSet:
    """Finite (optionally weighted) point set in R^d."""

    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[None, :]
        w = np.ones(len(pts)) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (len(pts),) or np.any(w < 0):
            raise UsageError("weights must be nonnegative, one per point")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def manifold(self):
        return Euclidean(self.points.shape[1])

    @property
    def total_mass(self):
        return float(self.weights.sum())

    def __len__(self):
        return len(self.points)


def covering_number(A, rho: float) -> int:
    """Number of occupied cells of the axis lattice of mesh rho.

    A proxy for the least number of open rho-balls covering A: the two agree
    up to a factor depending only on the dimension.
    """
    if rho <= 0:
        raise UsageError("rho must be positive")
    pts = A.points if hasattr(A, "points") else np.asarray(A, dtype=float)
    if pts.size == 0:
        return 0
    cells = np.floor(np.atleast_2d(pts) / rho).astype(np.int64)
    return int(len(np.unique(cells, axis=0)))


# ----------------------------------------------------------------------------
# Greedy extraction


class Shape:
    """A symmetric neighbourhood family with a mass cap.

    Built from a KD-tree on (possibly rescaled) coordinates: the neighbourhood
    of atom i holds the atoms within ``radius`` of it in the tree's metric.
    The adjacency (CSR, self included) is computed once from ``query_pairs``.
    """

    def __init__(self, tree, radius, cap, p=2.0):
        n = tree.n
        pairs = tree.query_pairs(radius, p=p, output_type="ndarray")
        rows = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n)])
        cols = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n)])
        self.adj = sparse.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(n, n)
        )
        self.adj.sort_indices()
        self.cap = float(cap)

    def masses(self, weights):
        return self.adj @ weights

    def members(self, i):
        a = self.adj
        return a.indices[a.indptr[i] : a.indptr[i + 1]]

    def gather(self, S):
        """Concatenated neighbour lists of the atoms S and their lengths."""
        a = self.adj
        starts = a.indptr[S]
        lens = a.indptr[S + 1] - starts
        total = int(lens.sum())
        offs = np.repeat(starts - np.concatenate([[0], np.cumsum(lens)[:-1]]), lens)
        return a.indices[np.arange(total) + offs], lens


@dataclass
class Extraction:
    weights: np.ndarray  # kept part
    removed: np.ndarray  # trash part, per atom
    cuts: int
    stopped_early: bool = False

    @property
    def trash(self):
        return float(self.removed.sum())


def _key(overflow):
    return round(float(overflow), KEY_DECIMALS)


def greedy_extract(weights, shapes, stop_at=None) -> Extraction:
    """Cut every neighbourhood down to its shape's cap, largest overflow first.

    ``stop_at``: stop as soon as the removed mass exceeds this value.
    """
    w = np.array(weights, dtype=float)
    w0 = w.copy()
    masses = [s.masses(w) for s in shapes]
    heap = []
    for k, (s, m) in enumerate(zip(shapes, masses)):
        over = np.nonzero(np.round(m - s.cap, KEY_DECIMALS) > 0)[0]
        heap.extend((-_key(m[i] - s.cap), int(i), k) for i in over)
    heapq.heapify(heap)
    cuts = 0
    removed_total = 0.0
    while heap:
        negkey, i, k = heapq.heappop(heap)
        s = shapes[k]
        cur = _key(masses[k][i] - s.cap)
        if cur <= 0:
            continue
        if cur < -negkey:
            heapq.heappush(heap, (-cur, i, k))
            continue
        S = s.members(i)
        factor = s.cap / w[S].sum()
        dw = w[S] * (1.0 - factor)
        w[S] -= dw
        removed_total += float(dw.sum())
        cuts += 1
        for kk, sh in enumerate(shapes):
            idx, lens = sh.gather(S)
            np.subtract.at(masses[kk], idx, np.repeat(dw, lens))
        masses[k][i] = s.cap
        if stop_at is not None and removed_total > stop_at:
            return Extraction(w, w0 - w, cuts, True)
    return Extraction(w, w0 - w, cuts)


# ----------------------------------------------------------------------------
# Robustness


def log_scales(lo, hi, per_octave=8):
    """Log-uniform scales covering [lo, hi] with ``per_octave`` per factor 2."""
    if not 0 < lo <= hi:
        raise UsageError("need 0 < lo <= hi")
    k = max(1, int(math.ceil(per_octave * math.log2(hi / lo))))
    return list(np.exp(np.linspace(math.log(lo), math.log(hi), k + 1)))


@dataclass
class RobustReport:
    alpha: float
    trash: float
    removed: np.ndarray = field(repr=False)
    kept: np.ndarray = field(repr=False)
    scales: list
    max_ball_mass: list  # after extraction, atom-centred, per scale
    bounds: list
    passed: list
    double_mass: list  # same centres, radius 2 rho: brackets arbitrary centres
    cuts: int = 0

    @property
    def certified(self):
        return all(self.passed)

    def rows(self):
        return [
            (s, m, b, p) for s, m, b, p in zip(self.scales, self.max_ball_mass, self.bounds, self.passed)
        ]


def _measure_parts(nu):
    if isinstance(nu, (EmpiricalMeasure, DiscreteSet)):
        return nu.manifold, nu.points, nu.weights
    raise UsageError("expected an EmpiricalMeasure or DiscreteSet")


def robust_decompose(nu, alpha, scales, dim=None) -> RobustReport:
    """Split nu into a part whose atom-centred rho-balls carry at most
    rho^{d alpha} for every rho in ``scales``, plus trash."""
    if not 0 <= alpha <= 1:
        raise UsageError("alpha must lie in [0, 1]")
    m, pts, w = _measure_parts(nu)
    d = dim or m.d
    scales = sorted(float(r) for r in scales)
    if not scales or scales[0] <= 0:
        raise UsageError("scales must be positive")
    if len(pts) == 0:
        return RobustReport(alpha, 0.0, np.zeros(0), np.zeros(0), scales, [0.0] * len(scales),
                            [r ** (d * alpha) for r in scales], [True] * len(scales), [0.0] * len(scales))
    index = m.kdtree(pts)
    shapes = [Shape(index.tree, index._radius(r), r ** (d * alpha)) for r in scales]
    ex = greedy_extract(w, shapes)
    maxes, bounds, ok, dbl = [], [], [], []
    for r, s in zip(scales, shapes):
        mm = index.masses(pts, r, ex.weights)
        maxes.append(float(mm.max()))
        bounds.append(s.cap)
        ok.append(bool(mm.max() <= s.cap * (1 + 1e-9) + 1e-15))
        dbl.append(float(index.masses(pts, 2 * r, ex.weights).max()))
    return RobustReport(alpha, ex.trash, ex.removed, ex.weights, scales, maxes, bounds, ok, dbl, ex.cuts)


# ----------------------------------------------------------------------------
# Flags, exponents, boxes


@dataclass(frozen=True, eq=False)
class Flag:
    """Full flag W_1 ⊂ ... ⊂ W_d; ``basis`` columns are the adapted e_1..e_d."""

    basis: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.basis, dtype=float)
        if B.ndim != 2 or B.shape[0] != B.shape[1]:
            raise UsageError("flag basis must be square")
        Q, R = np.linalg.qr(B)
        Q = Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))[None, :]
        object.__setattr__(self, "basis", Q)

    @classmethod
    def standard(cls, d):
        return cls(np.eye(d))

    @property
    def d(self):
        return self.basis.shape[0]

    def subspace(self, i):
        return self.basis[:, :i]

    def to_dict(self):
        return {"basis_rows": self.basis.T.tolist()}


@dataclass(frozen=True, eq=False)
class ExponentVector:
    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or np.any(np.diff(t) < 0) or t[0] < 0 or t[-1] > 1:
            raise UsageError("exponents must satisfy 0 <= t_1 <= ... <= t_d <= 1")
        object.__setattr__(self, "t", t)


def simplex_membership(t, dims, k0, kappa, eta):
    """The three defining conditions of the exponent set T(dims, k0, kappa, eta).

    ``dims`` = (d_1 < ... < d_{m+1} = d); indices below are 1-based as in the
    definition.
    """
    t = np.asarray(getattr(t, "t", t), dtype=float)
    dims = [int(v) for v in dims]
    m = len(dims) - 1
    if m < 1 or dims[-1] != len(t) or any(a >= b for a, b in zip(dims, dims[1:])) or dims[0] <= 0:
        raise UsageError("dims must be increasing positive integers ending at d")
    if not 1 <= k0 <= m:
        raise UsageError("k0 must lie in 1..m")
    T = lambda i: t[i - 1]
    first = bool(T(dims[1]) >= kappa)
    second = bool(T(dims[k0]) - T(dims[k0 - 1]) >= kappa)
    blocks = [0] + dims
    third = True
    for k in range(m + 1):
        seg = t[blocks[k] : blocks[k + 1]]
        if seg.size and seg.max() - seg.min() > eta:
            third = False
    return {"first_exponent": first, "k0_gap": second, "block_pinching": third, "member": first and second and third}


@dataclass(frozen=True, eq=False)
class Box:
    flag: Flag
    t: ExponentVector
    rho: float
    center: np.ndarray

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise UsageError("rho must lie in (0, 1)")
        t = self.t if isinstance(self.t, ExponentVector) else ExponentVector(self.t)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if len(t.t) != self.flag.d or self.center.shape != (self.flag.d,):
            raise UsageError("box dimensions disagree")

    @property
    def half_widths(self):
        d = self.flag.d
        return d * self.rho ** self.t.t

    def to_dict(self):
        return {
            "basis_rows": self.flag.basis.T.tolist(),
            "t": self.t.t.tolist(),
            "rho": self.rho,
            "center": self.center.tolist(),
        }


def box_leb(box: Box) -> float:
    return float(np.prod(2 * box.half_widths))


def _box_coords(points, flag, half):
    return (np.asarray(points, dtype=float) @ flag.basis) / half


def box_mass(nu, box: Box) -> float:
    """Mass of the closed adapted-axis box |<v - c, e_j>| <= d rho^{t_j}."""
    m, pts, w = _measure_parts(nu)
    if isinstance(m, Torus):
        if np.linalg.norm(box.half_widths) >= 0.5:
            raise UsageError("box does not fit inside the injectivity radius of the torus")
        diff = m.displacement(box.center, pts)
    else:
        diff = pts - box.center
    y = _box_coords(diff, box.flag, box.half_widths)
    return float(w[np.all(np.abs(y) <= 1.0, axis=1)].sum())


# ----------------------------------------------------------------------------
# Grassmannian non-concentration


def principal_angles(W, V):
    """Ascending principal angles between span(W) (..., d, a) and span(V) (d, b)."""
    s = np.linalg.svd(np.swapaxes(W, -1, -2) @ V, compute_uv=False)
    return np.arccos(np.clip(s, -1.0, 1.0))


def schubert_distance(W, V, d_prime):
    """Distance (sine metric) from W in Gr(d, d') to the constraining Schubert
    variety of V; infinite when that variety is empty."""
    d, dimV = V.shape
    k = (d_prime * dimV) // d + 1
    if k > min(d_prime, dimV):
        return np.full(np.shape(W)[:-2], np.inf)
    return np.sin(principal_angles(W, V)[..., k - 1])


@dataclass
class SchubertRow:
    V_id: int
    r: float
    mass: float
    bound: float
    passed: bool


def schubert_nc_check(sigma, weights, V_grid, r_list, c, mode="sub", rho=None, eps=0.0, const=1.0):
    """Non-concentration of a weighted sample of Gr(d, d') near Schubert
    varieties ('sub') or near complementary subspaces ('sup').

    sub: mass{W : dist(W, Sigma_{d'}(V)) < r} < const * r^c for every V, r.
    sup: mass{W : angle(V, W) < r} < rho^{-eps} r^c, V in Gr(d, d - d'), r >= rho.
    """
    sigma = np.asarray(sigma, dtype=float)
    G, d, dp = sigma.shape
    if not 1 <= dp <= d - 1:
        raise UsageError("d' must lie in 1..d-1")
    w = np.full(G, 1.0 / G) if weights is None else np.asarray(weights, dtype=float)
    rows = []
    for vid, V in enumerate(V_grid):
        V = np.asarray(V, dtype=float)
        if mode == "sub":
            dist = schubert_distance(sigma, V, dp)
        elif mode == "sup":
            if V.shape[1] != d - dp:
                raise UsageError("sup mode needs V of dimension d - d'")
            dist = principal_angles(sigma, V)[..., 0]
        else:
            raise UsageError("mode must be 'sub' or 'sup'")
        for r in r_list:
            if mode == "sup":
                if rho is None or r < rho:
                    raise UsageError("sup mode needs rho <= r")
                bound = rho ** (-eps) * r**c
            else:
                bound = const * r**c
            mass = float(w[dist < r].sum())
            rows.append(SchubertRow(vid, float(r), mass, float(bound), mass < bound))
    return rows


# ----------------------------------------------------------------------------
# Multislicing


@dataclass
class SliceReport:
    theta_id: int
    trash_fraction: float
    removed: float
    nu_mass: float
    zeta_term: float
    cap_factor: float
    max_box_mass: float
    passed: bool
    stopped_early: bool
    membership: dict


@dataclass
class MultisliceReport:
    slices: list
    failing_fraction: float

    def rows(self):
        return [(s.theta_id, s.trash_fraction, s.passed) for s in self.slices]


def multislicing_verify(
    nu, thetas, rho, alpha, gamma_box, budget, simplex=None, certificate=None, early_stop=True
) -> MultisliceReport:
    """For each (flag, t), the trash needed so that every atom-centred box
    carries at most rho^{gamma_box} * box_leb^alpha.

    Trash is reported as removed / (nu(R^d) + zeta^d), zeta = max(diam supp nu,
    max_j rho^{t_1}); both denominator terms are reported. ``simplex`` =
    (dims, k0, kappa, eta) enforces exponent membership.
    """
    m, pts, w = _measure_parts(nu)
    if certificate is not None and not certificate.certified:
        raise PreconditionError("robustness certificate of nu does not hold")
    d = pts.shape[1]
    total = float(w.sum())
    diam = 0.0
    if len(pts):
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        diam = float(np.linalg.norm(hi - lo))  # bounding-box diagonal, >= diameter
    reports = []
    for tid, (flag, t) in enumerate(thetas):
        t = t if isinstance(t, ExponentVector) else ExponentVector(t)
        member = None
        if simplex is not None:
            member = simplex_membership(t, *simplex)
            if not member["member"]:
                raise PreconditionError(f"exponent {t.t.tolist()} outside the simplex", witness=tid)
        box = Box(flag, t, rho, np.zeros(d))
        half = box.half_widths
        leb = box_leb(box)
        cap = rho**gamma_box * leb**alpha
        zeta = max(diam, rho ** t.t[0])
        denom = total + zeta**d
        y = _box_coords(pts, flag, half)
        shape = Shape(cKDTree(y), 1.0, cap, p=np.inf)
        stop = budget * denom if early_stop and budget < 1 else None
        ex = greedy_extract(w, [shape], stop_at=stop)
        frac = ex.trash / denom if denom > 0 else 0.0
        maxmass = float(shape.masses(ex.weights).max()) if len(w) else 0.0
        reports.append(
            SliceReport(tid, frac, ex.trash, total, zeta**d, cap, maxmass,
                        bool(frac <= budget), ex.stopped_early, member or {})
        )
    fails = sum(not r.passed for r in reports)
    return MultisliceReport(reports, fails / len(reports) if reports else 0.0)


# ----------------------------------------------------------------------------
# Linearization chart


@dataclass
class LinearizationReport:
    K: int
    points: int
    warning: str | None
    centers: np.ndarray = field(repr=False, default=None)


def linearization_check(word, gens, x, y, zeta, r, samples=2000, seed=0, R=None) -> LinearizationReport:
    """Greedy number of translates of D(phi_x g)(g^{-1} x) B_r needed to cover
    phi_x(B_zeta(x) ∩ g(B_r(y))), from ``samples`` points of B_r(y)."""
    m = gens[0].manifold
    if not zeta**2 <= r <= zeta:
        raise UsageError("need zeta^2 <= r <= zeta")
    x = x.coords if isinstance(x, ManifoldPoint) else m.check_point(x)
    y = y.coords if isinstance(y, ManifoldPoint) else m.check_point(y)
    d = m.d
    from .diffeo import derivative_bounds

    b = derivative_bounds(gens, {i for i, _ in word.letters} or {0})
    R = d if R is None else R
    C0 = 2 * b.d2
    warning = None
    if zeta > C0 ** (-R):
        warning = f"zeta = {zeta:g} exceeds C0^-R = {C0 ** (-R):g}; linear approximation not guaranteed"
    rng = streams.generator(seed, streams.SUBSAMPLE)
    u = rng.standard_normal((samples, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    rad = r * rng.random(samples) ** (1.0 / d)
    Fy = m.frame(y)
    pts = m.exp(np.broadcast_to(y, (samples, len(y))), (u * rad[:, None]) @ Fy.T)
    codes = word.codes()[None, :]
    gp = propagate(gens, np.repeat(codes, samples, axis=0), pts).points
    keep = m.distance(x, gp) < zeta
    if not np.any(keep):
        return LinearizationReport(0, 0, warning, np.zeros((0, d)))
    Fx = m.frame(x)
    chart = lambda q: m.log(np.broadcast_to(x, q.shape), q) @ Fx
    P = chart(gp[keep])
    # linear part at g^{-1}(x), in frame coordinates
    ginv = propagate(gens, word.inverse().codes()[None, :], x).points[0]
    L = propagate(gens, codes, ginv, jacobian=True).jacobian[0]
    Linv = np.linalg.inv(L)
    Q = P @ Linv.T  # ellipsoids become r-balls
    natural = chart(propagate(gens, codes, y).points)
    cand = np.vstack([natural @ Linv.T, Q])
    tree = cKDTree(Q)
    covers = tree.query_ball_point(cand, r * (1 + 1e-9))
    uncovered = np.ones(len(Q), dtype=bool)
    chosen = []
    while uncovered.any():
        best, best_gain = -1, 0
        for ci, idx in enumerate(covers):
            gain = int(uncovered[idx].sum()) if len(idx) else 0
            if gain > best_gain:
                best, best_gain = ci, gain
        if best < 0:
            break
        chosen.append(best)
        uncovered[covers[best]] = False
    return LinearizationReport(len(chosen), int(keep.sum()), warning, cand[chosen] @ L.T)


# ----------------------------------------------------------------------------
# Dimension increment


@dataclass
class IncrementReport:
    alpha: float
    tau: float
    n_steps: int
    rho: float
    alpha_before: float
    alpha_after: float
    alpha_after_stderr: float
    tau_target: float
    batches: list
    certificate: RobustReport = field(repr=False, default=None)


def largest_alpha(nu, scale, tau, iters=30, dim=None):
    """Largest alpha in [0, 1] with trash at ``scale`` at most tau (bisection)."""
    lo, hi = 0.0, 1.0
    if robust_decompose(nu, hi, [scale], dim).trash <= tau:
        return 1.0
    if robust_decompose(nu, lo, [scale], dim).trash > tau:
        return 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if robust_decompose(nu, mid, [scale], dim).trash <= tau:
            lo = mid
        else:
            hi = mid
    return lo


def dimension_increment_experiment(
    mu: GeneratorMeasure,
    nu0: EmpiricalMeasure,
    alpha: float,
    rho: float,
    words_per_atom: int = 4,
    n_steps: int | None = None,
    a0: float | None = None,
    tau_budget: float = 0.25,
    batches: int = 4,
    seed: int = 0,
    per_octave: int = 8,
    threads=None,
) -> IncrementReport:
    """Certify robustness of nu0 on [rho, rho^{1/4}], push it by n_rho walk
    steps, and measure the best exponent at scale rho^{1/2}."""
    if not 0 < rho < 1:
        raise UsageError("rho must lie in (0, 1)")
    cert = robust_decompose(nu0, alpha, log_scales(rho, rho**0.25, per_octave))
    if cert.trash > tau_budget:
        raise PreconditionError(
            f"nu0 is not ({alpha}, [rho, rho^1/4], {tau_budget})-robust: trash {cert.trash:.4g}"
        )
    tau = cert.trash
    if n_steps is None:
        from .diffeo import derivative_bounds

        D1 = derivative_bounds(mu.gens, {i for i, _ in mu.letters}).d1
        if a0 is None:
            a0 = 1.0 / (4.0 * math.log(D1)) if D1 > 1 else 1.0
        n_steps = max(1, int(math.ceil(a0 * abs(math.log(rho)))))
        n_steps = min(n_steps, int(abs(math.log(rho))))
    m = mu.manifold
    K = words_per_atom
    start = np.repeat(nu0.points, K, axis=0)
    wts = np.repeat(nu0.weights / K, K)
    pushed = run_walk(mu, start, n_steps, len(start), seed, threads=threads).points
    nu1 = EmpiricalMeasure(m, pushed, wts)
    half = rho**0.5
    before = largest_alpha(nu0, half, tau)
    after = largest_alpha(nu1, half, tau)
    per_batch = []
    for bidx in range(batches):
        sel = (np.arange(len(start)) % K) % batches == bidx if K >= batches else None
        if sel is None:
            break
        wb = wts[sel]
        per_batch.append(largest_alpha(EmpiricalMeasure(m, pushed[sel], wb / wb.sum() * nu0.total_mass), half, tau))
    se = float(np.std(per_batch, ddof=1) / math.sqrt(len(per_batch))) if len(per_batch) > 1 else math.nan
    return IncrementReport(alpha, tau, n_steps, rho, before, after, se, tau, per_batch, cert)
