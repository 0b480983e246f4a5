"""
Derivative cocycle analysis.

Cartan data of words, contracting flags, and Monte Carlo estimators of the
gap, pinching, (co)expansion and volume hypotheses, together with the
verifiers for angle non-concentration, the Margulis drift inequality and
back-and-forth expansion.

Inner sup/inf over unit vectors of a subspace are computed exactly with small
SVDs; only the outer quantifiers over points and subspaces are discretized on
user-supplied grids. Expectations under mu^{*n0} are exact (weighted
enumeration of all words) whenever |supp mu|^n0 <= samples, and Monte Carlo
otherwise.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .diffeo import DiffeoWord, propagate
from .errors import DomainError, NumericError, UsageError
from .manifold import FrameAtPoint, ManifoldPoint
from .walk import GeneratorMeasure, run_walk

TIE_TOL = 1e-12
FLAG_GAP = 1e-8


# ----------------------------------------------------------------------------
# Cartan decomposition


def log_singular_values(J, Jinv=None, log_det=None):
    """Ascending log singular values of a batch of d x d matrices.

    The smallest value is taken from the inverse when available, and in
    d = 2, 3 the remaining one is closed by the log-determinant, which keeps
    long products accurate where the plain SVD loses the small end.
    """
    J = np.asarray(J, dtype=float)
    d = J.shape[-1]
    s = np.linalg.svd(J, compute_uv=False)
    with np.errstate(divide="ignore"):
        lam = np.log(s[..., ::-1]).copy()
    if Jinv is not None:
        si = np.linalg.svd(np.asarray(Jinv, dtype=float), compute_uv=False)
        lam[..., 0] = -np.log(si[..., 0])
        if log_det is not None and d in (2, 3):
            ld = np.asarray(log_det, dtype=float)
            if d == 2:
                lam[..., 0] = ld - lam[..., 1]
            else:
                lam[..., 1] = ld - lam[..., 0] - lam[..., 2]
    return lam


def _canonical_svd(J, lam):
    """Right factor R (rows ascending) and left factor R' (columns ascending)
    with deterministic signs and tie-breaking."""
    d = J.shape[0]
    _, s, Vt = np.linalg.svd(J)
    V = Vt[::-1].T.copy()  # columns: right singular vectors, ascending
    # clusters of (numerically) repeated singular values get the basis obtained
    # by Gram-Schmidt on the projected standard axes
    i = 0
    while i < d:
        j = i + 1
        while j < d and abs(lam[j] - lam[i]) <= TIE_TOL * max(1.0, abs(lam[i])):
            j += 1
        if j - i > 1:
            B = V[:, i:j]
            P = B @ B.T
            cols = []
            for axis in range(d):
                w = P[:, axis].copy()
                for c in cols:
                    w -= (c @ w) * c
                nrm = np.linalg.norm(w)
                if nrm > 1e-8:
                    cols.append(w / nrm)
                if len(cols) == j - i:
                    break
            V[:, i:j] = np.stack(cols, axis=1)
        i = j
    for c in range(d):
        k = np.argmax(np.abs(V[:, c]))
        if V[k, c] < 0:
            V[:, c] = -V[:, c]
    U = J @ V / np.exp(lam)[None, :]
    return V.T, U


@dataclass(frozen=True, eq=False)
class CartanData:
    """Dg(x) = left @ diag(exp(lambdas)) @ right, with lambdas ascending.

    ``right`` rows and ``left`` columns are expressed in the canonical frames
    at the source and target points.
    """

    lambdas: np.ndarray
    right: np.ndarray
    left: np.ndarray
    base: ManifoldPoint
    image: ManifoldPoint
    matrix: np.ndarray

    @property
    def frame_in(self) -> FrameAtPoint:
        F = self.base.manifold.frame(self.base.coords)
        return FrameAtPoint(self.base, F @ self.right.T)

    @property
    def frame_out(self) -> FrameAtPoint:
        F = self.image.manifold.frame(self.image.coords)
        return FrameAtPoint(self.image, F @ self.left)

    def reconstruct(self):
        return self.left @ np.diag(np.exp(self.lambdas)) @ self.right


def cartan(x, w: DiffeoWord, gens) -> CartanData:
    m = gens[0].manifold
    coords = x.coords if isinstance(x, ManifoldPoint) else m.check_point(x)
    prop = propagate(gens, w.codes()[None, :], coords, True, True, True)
    J = prop.jacobian[0]
    if not np.all(np.isfinite(J)):
        raise NumericError("non-finite Jacobian")
    lam = log_singular_values(J, prop.inverse_jacobian[0], prop.log_det[0])
    try:
        R, Rp = _canonical_svd(J, lam)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD failed: {exc}") from exc
    return CartanData(lam, R, Rp, ManifoldPoint(m, coords), ManifoldPoint(m, prop.points[0]), J)


@dataclass(frozen=True)
class FlagSample:
    subspaces: tuple  # orthonormal bases, W_1 ⊂ ... ⊂ W_b
    ill_defined: bool
    gap: float


def filtration(x, w, gens, b) -> FlagSample:
    """Span of the b most contracted right singular directions of Dw(x)."""
    m = gens[0].manifold
    if not 1 <= b <= m.d - 1:
        raise UsageError("b must lie in 1..d-1")
    c = cartan(x, w, gens)
    gap = float(c.lambdas[b] - c.lambdas[b - 1])
    basis = c.right[:b].T
    subs = tuple(basis[:, : i + 1] for i in range(b))
    return FlagSample(subs, gap < FLAG_GAP, gap)


# ----------------------------------------------------------------------------
# Grassmannian grids and the variational functionals


def complement(V):
    """Orthonormal basis of the orthogonal complement; V has shape (..., d, k)."""
    V = np.asarray(V, dtype=float)
    d, k = V.shape[-2], V.shape[-1]
    if k == 0:
        return np.broadcast_to(np.eye(d), V.shape[:-2] + (d, d)).copy()
    Q, _ = np.linalg.qr(V, mode="complete")
    return Q[..., :, k:]


def line_grid(n: int, offset: float = 0.0):
    """n lines of R^2 at angles pi (j + offset) / n, as bases of shape (n, 2, 1)."""
    th = math.pi * (np.arange(n) + offset) / n
    return np.stack([np.cos(th), np.sin(th)], axis=1)[:, :, None]


def grassmann_grid(d: int, k: int, size: int = 256, seed: int = 0):
    """Quasi-uniform sample of Gr(d, k) as orthonormal bases (G, d, k).

    d = 2 uses the uniform angle grid; d = 3 uses Fibonacci points on the
    upper hemisphere (lines directly, planes through their normals). Larger d
    falls back to seeded Gaussian samples.
    """
    if not 0 <= k <= d:
        raise UsageError("subspace dimension out of range")
    if k == 0:
        return np.zeros((1, d, 0))
    if k == d:
        return np.eye(d)[None]
    if d == 2:
        return line_grid(size)
    if d == 3:
        i = np.arange(size) + 0.5
        z = i / size
        phi = math.pi * (1 + 5**0.5) * i
        r = np.sqrt(1 - z * z)
        normals = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)[:, :, None]
        return normals if k == 1 else complement(normals)
    rng = streams.generator(seed, streams.GRID, d, k)
    Q, _ = np.linalg.qr(rng.standard_normal((size, d, k)))
    return Q


def sup_projected(J, V):
    """sup over unit u in V^perp of |P_{(J V)^perp} J u|; J (..., d, d), V (..., d, k)."""
    J = np.asarray(J, dtype=float)
    V = np.asarray(V, dtype=float)
    k = V.shape[-1]
    d = J.shape[-1]
    if k == d:
        return np.zeros(np.broadcast_shapes(J.shape[:-2], V.shape[:-2]))
    U = complement(V)
    if k == 0:
        C = np.broadcast_to(np.eye(d), J.shape)
    else:
        C = complement(J @ V)
    M = np.swapaxes(C, -1, -2) @ J @ U
    if M.shape[-1] == 1 and M.shape[-2] == 1:
        return np.abs(M[..., 0, 0])
    return np.linalg.svd(M, compute_uv=False)[..., 0]


def inf_growth(J, V):
    """inf over unit v in V of |J v|."""
    JV = np.asarray(J, dtype=float) @ np.asarray(V, dtype=float)
    if JV.shape[-1] == 1:
        return np.linalg.norm(JV[..., 0], axis=-1)
    return np.linalg.svd(JV, compute_uv=False)[..., -1]


def variational_values(J, b, grid, size=None):
    """Grid versions of the two variational expressions for e^{lambda^(b)}.

    Returns (inf_V sup_u, sup_V' inf_v') with V of dimension d - b and V' of
    dimension d - b + 1. They bracket e^{lambda^(b)} from above and below.
    ``grid`` holds subspace bases; it is used for every role whose dimension
    matches, other roles get a ``grassmann_grid`` of the same size, and roles
    of dimension 0 or d are evaluated exactly.
    """
    J = np.asarray(J, dtype=float)
    d = J.shape[-1]
    if not 1 <= b <= d:
        raise UsageError("b must lie in 1..d")
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 3 or len(grid) == 0:
        raise UsageError("grid must be a nonempty stack of subspace bases")
    size = size or len(grid)

    def pick(k):
        return grid if grid.shape[-1] == k else grassmann_grid(d, k, size)

    s = np.linalg.svd(J, compute_uv=False)
    if b == d:
        upper = float(s[0])
    else:
        upper = float(np.min(sup_projected(J[None], pick(d - b))))
    if b == 1:
        lower = float(s[-1])
    else:
        lower = float(np.max(inf_growth(J[None], pick(d - b + 1))))
    return upper, lower


def variational_singular_value(x, w, gens, b, grid):
    return variational_values(cartan(x, w, gens).matrix, b, grid)


# ----------------------------------------------------------------------------
# Hypothesis estimators


@dataclass
class HypothesisEstimate:
    quantity: str
    value: float
    stderr: float
    samples: int
    grid: dict
    exact: bool
    table: np.ndarray = field(repr=False, default=None)  # (X, V, 2): value, stderr
    worst: tuple = ()

    def verdict(self, threshold, sense):
        """'holds' / 'fails' / 'inconclusive' for value < threshold ('below')
        or value > threshold ('above') with a 2 stderr margin."""
        v, m = self.value, 2 * self.stderr
        if sense == "below":
            if v + m < threshold:
                return "holds"
            if v - m >= threshold:
                return "fails"
        elif sense == "above":
            if v - m > threshold:
                return "holds"
            if v + m <= threshold:
                return "fails"
        else:
            raise UsageError("sense must be 'below' or 'above'")
        return "inconclusive"

    def verdict_record(self, threshold, sense):
        return {
            "quantity": self.quantity,
            "value": self.value,
            "stderr": self.stderr,
            "threshold": threshold,
            "verdict": self.verdict(threshold, sense),
        }


@dataclass(frozen=True)
class WordSample:
    codes: np.ndarray  # (M, n0)
    weights: np.ndarray  # (M,), sum 1
    exact: bool


def word_sample(mu: GeneratorMeasure, n0: int, samples: int, seed: int) -> WordSample:
    """All words of length n0 with their probabilities when there are at most
    ``samples`` of them, else ``samples`` i.i.d. words."""
    k = len(mu.codes)
    if k**n0 <= samples:
        idx = np.array(list(itertools.product(range(k), repeat=n0)), dtype=np.int64).reshape(-1, n0)
        w = np.prod(mu.weights[idx], axis=1) if n0 else np.ones(1)
        return WordSample(mu.codes[idx], w / w.sum(), True)
    codes = mu.sample_codes(n0, np.arange(samples), seed, streams.LETTERS_AUX)
    return WordSample(codes, np.full(samples, 1.0 / samples), False)


def _weighted_mean_se(vals, w, exact):
    """vals (M, ...) with weights w (M,)."""
    mean = np.tensordot(w, vals, axes=(0, 0))
    if exact:
        return mean, np.zeros_like(mean)
    var = np.tensordot(w, (vals - mean) ** 2, axes=(0, 0))
    M = len(w)
    return mean, np.sqrt(var * M / max(M - 1, 1) / M)


def _check_x_grid(mu, x_grid):
    xs = mu.manifold.check_point(np.atleast_2d(x_grid))
    if len(xs) == 0:
        raise UsageError("empty point grid")
    return xs


def _scan(mu, n0, x_grid, samples, seed, integrand, n_cells, worst, quantity, grid_info, threads=None):
    """Evaluate E integrand(J) for every x and every grid cell, keep the worst."""
    xs = _check_x_grid(mu, x_grid)
    ws = word_sample(mu, n0, samples, seed)
    table = np.empty((len(xs), n_cells, 2))
    for i, x in enumerate(xs):
        J = propagate(mu.gens, ws.codes, x, jacobian=True).jacobian
        vals = integrand(J)  # (M, n_cells)
        mean, se = _weighted_mean_se(vals, ws.weights, ws.exact)
        table[i, :, 0] = mean
        table[i, :, 1] = se
    flat = table[:, :, 0].ravel()
    pos = int(np.argmax(flat) if worst == "max" else np.argmin(flat))
    xi, vi = divmod(pos, n_cells)
    return HypothesisEstimate(
        quantity,
        float(table[xi, vi, 0]),
        float(table[xi, vi, 1]),
        len(ws.weights),
        grid_info | {"x_points": len(xs), "cells": n_cells},
        ws.exact,
        table,
        (xi, vi),
    )


def gap_integrand(J, V):
    """log sup |P_{(JV)^perp} J u| - log inf |J v| for J (M, d, d), V (G, d, k) -> (M, G)."""
    Jb = J[:, None]
    Vb = V[None]
    with np.errstate(divide="ignore"):
        return np.log(sup_projected(Jb, Vb)) - np.log(inf_growth(Jb, Vb))


def gap_estimate(mu, n0, b, x_grid, V_grid, samples=1000, seed=0) -> HypothesisEstimate:
    """Worst case over (x, V) of the gap integral; the (n0, kappa, b)-gap
    holds when the value is below -n0 * kappa."""
    d = mu.manifold.d
    if not 1 <= b <= d - 1:
        raise UsageError("b must lie in 1..d-1")
    V_grid = np.asarray(V_grid, dtype=float)
    if V_grid.ndim != 3 or V_grid.shape[1:] != (d, d - b) or len(V_grid) == 0:
        raise UsageError(f"V grid must hold bases of shape ({d}, {d - b})")
    return _scan(
        mu, n0, x_grid, samples, seed,
        lambda J: gap_integrand(J, V_grid),
        len(V_grid), "max", "gap",
        {"n0": n0, "b": b, "V_points": len(V_grid)},
    )


def nested_pairs(d, b0, b1, size=16, seed=0):
    """Pairs V1 ⊂ V0 with dim V0 = d - b0, dim V1 = d - b1 (bases, G entries each)."""
    if not 0 <= b0 < b1 <= d:
        raise UsageError("need 0 <= b0 < b1 <= d")
    V1s = grassmann_grid(d, d - b1, size, seed)
    V0s, V1out = [], []
    for V1 in V1s:
        C = complement(V1)  # dimension b1
        extra = grassmann_grid(b1, b1 - b0, size, seed) if b1 - b0 < b1 else np.eye(b1)[None]
        for E in extra:
            V0s.append(np.concatenate([V1, C @ E], axis=1))
            V1out.append(V1)
    return np.array(V0s), np.array(V1out)


def pinch_integrand(J, V0, V1):
    Jb = J[:, None]
    with np.errstate(divide="ignore"):
        return np.log(sup_projected(Jb, V1[None])) - np.log(inf_growth(Jb, V0[None]))


def pinch_estimate(mu, n0, b0, b1, x_grid, pairs, samples=1000, seed=0) -> HypothesisEstimate:
    """Worst case of the pinching integral over (x, V0 ⊃ V1); the
    (n0, eta, b0, b1)-pinching holds when the value is below n0 * eta."""
    d = mu.manifold.d
    V0, V1 = (np.asarray(p, dtype=float) for p in pairs)
    if not 0 <= b0 < b1 <= d:
        raise UsageError("need 0 <= b0 < b1 <= d")
    if V0.shape[1:] != (d, d - b0) or V1.shape[1:] != (d, d - b1) or len(V0) != len(V1) or not len(V0):
        raise UsageError("pair grid does not match (b0, b1)")
    return _scan(
        mu, n0, x_grid, samples, seed,
        lambda J: pinch_integrand(J, V0, V1),
        len(V0), "max", "pinch",
        {"n0": n0, "b0": b0, "b1": b1, "pairs": len(V0)},
    )


def unit_vectors(d, size=256):
    """Unit vectors up to sign: the line grid of Gr(d, 1) as (G, d)."""
    return grassmann_grid(d, 1, size)[:, :, 0]


def expansion_estimate(mu, n0, x_grid, v_grid, samples=1000, seed=0, co=False):
    """inf over (x, v) of E log |Dg(x) v| (or E log |xi o Dg(x)^{-1}| for
    co=True); (n0, kappa)-expanding when the value exceeds n0 * kappa."""
    vs = np.asarray(v_grid, dtype=float)
    vs = vs / np.linalg.norm(vs, axis=1, keepdims=True)

    def integrand(J):
        A = np.swapaxes(np.linalg.inv(J), -1, -2) if co else J
        return np.log(np.linalg.norm(np.einsum("mij,gj->mgi", A, vs), axis=-1))

    return _scan(
        mu, n0, x_grid, samples, seed, integrand, len(vs), "min",
        "coexpansion" if co else "expansion",
        {"n0": n0, "v_points": len(vs)},
    )


def log_det_estimate(mu, n0, x_grid, samples=1000, seed=0) -> HypothesisEstimate:
    """Worst |E log det Dg(x)| over x_grid; the signed mean at the worst point
    is kept in ``grid['signed']``."""
    xs = _check_x_grid(mu, x_grid)
    ws = word_sample(mu, n0, samples, seed)
    table = np.empty((len(xs), 1, 2))
    for i, x in enumerate(xs):
        ld = propagate(mu.gens, ws.codes, x, log_det=True).log_det
        mean, se = _weighted_mean_se(ld, ws.weights, ws.exact)
        table[i, 0] = mean, se
    i = int(np.argmax(np.abs(table[:, 0, 0])))
    return HypothesisEstimate(
        "log_det",
        float(abs(table[i, 0, 0])),
        float(table[i, 0, 1]),
        len(ws.weights),
        {"n0": n0, "x_points": len(xs), "signed": float(table[i, 0, 0])},
        ws.exact,
        table,
        (i, 0),
    )


@dataclass
class RateFit:
    """log y = intercept + slope * t by least squares."""

    slope: float
    intercept: float
    slope_stderr: float
    r2: float
    points: int
    available: bool = True


def fit_line(t, y, weights=None) -> RateFit:
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(t)
    if n < 2:
        return RateFit(math.nan, math.nan, math.nan, math.nan, n, False)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    tm = np.sum(w * t) / w.sum()
    ym = np.sum(w * y) / w.sum()
    stt = np.sum(w * (t - tm) ** 2)
    if stt == 0:
        return RateFit(math.nan, math.nan, math.nan, math.nan, n, False)
    slope = np.sum(w * (t - tm) * (y - ym)) / stt
    icpt = ym - slope * tm
    resid = y - icpt - slope * t
    syy = np.sum(w * (y - ym) ** 2)
    r2 = 1.0 - np.sum(w * resid**2) / syy if syy > 0 else 1.0
    if weights is None:
        s2 = np.sum(resid**2) / (n - 2) if n > 2 else 0.0
        se = math.sqrt(s2 / stt)
    else:
        # weights are inverse variances
        se = math.sqrt(1.0 / stt)
    return RateFit(float(slope), float(icpt), float(se), float(r2), n)


@dataclass
class DeviationReport:
    n_list: list
    freq: np.ndarray
    stderr: np.ndarray
    fit: RateFit  # slope = -c in log P vs n


def det_deviation(mu, eta, n_list, x, N, seed=0, threads=None) -> DeviationReport:
    """Empirical P(det Dg(x) outside (e^{-n eta}, e^{n eta})) and its
    exponential decay rate."""
    m = mu.manifold
    x = x.coords if isinstance(x, ManifoldPoint) else m.check_point(x)
    freq, se = [], []
    for n in n_list:
        ld = run_walk(mu, x, n, N, seed, log_det=True, threads=threads).log_det
        p = float(np.mean(np.abs(ld) >= n * eta))
        freq.append(p)
        se.append(math.sqrt(max(p * (1 - p), 1.0 / N) / N))
    freq = np.array(freq)
    keep = freq > 0
    fit = fit_line(np.asarray(n_list)[keep], np.log(freq[keep])) if keep.sum() >= 2 else RateFit(
        math.nan, math.nan, math.nan, math.nan, int(keep.sum()), False
    )
    return DeviationReport(list(n_list), freq, np.array(se), fit)


def gap_frequency(mu, n, b, kappa, x, N, seed=0, threads=None):
    """Fraction of words of length n with lambda^(b) + n kappa < lambda^(b+1)."""
    m = mu.manifold
    x = x.coords if isinstance(x, ManifoldPoint) else m.check_point(x)
    p = run_walk(mu, x, n, N, seed, jacobian=True, inverse_jacobian=True, log_det=True, threads=threads)
    lam = log_singular_values(p.jacobian, p.inverse_jacobian, p.log_det)
    return float(np.mean(lam[:, b - 1] + n * kappa < lam[:, b]))


# ----------------------------------------------------------------------------
# Non-concentration, Margulis drift, back-and-forth expansion


def min_principal_angle(A, B):
    """Smallest principal angle between span(A) and span(B); A (..., d, a), B (d, b)."""
    s = np.linalg.svd(np.swapaxes(A, -1, -2) @ B, compute_uv=False)
    return np.arccos(np.clip(s[..., 0], -1.0, 1.0))


def contracting_directions(J, b):
    """Orthonormal bases (M, d, b) of W_b for a batch of Jacobians."""
    _, _, Vt = np.linalg.svd(J)
    d = J.shape[-1]
    if d == 2 and b == 1:
        # the complement of the dominant direction is exact even when the
        # small singular value is lost to rounding
        top = Vt[:, 0, :]
        return np.stack([-top[:, 1], top[:, 0]], axis=1)[:, :, None]
    return np.swapaxes(Vt[:, ::-1][:, :b], -1, -2)


@dataclass
class NonConcentrationReport:
    rho: np.ndarray
    freq: np.ndarray
    stderr: np.ndarray
    hits: np.ndarray
    c: float
    c_stderr: float
    r2: float
    fit_points: int
    available: bool

    def rows(self):
        return [(float(r), float(f), float(s)) for r, f, s in zip(self.rho, self.freq, self.stderr)]


def fit_power_law(rho, hits, N, min_hits=20) -> RateFit:
    """Slope of log freq against log rho over bins with at least ``min_hits``.

    The reported stderr is the larger of the OLS residual estimate and the
    binomial (weighted) estimate.
    """
    rho = np.asarray(rho, dtype=float)
    hits = np.asarray(hits)
    keep = hits >= min_hits
    if keep.sum() < 2:
        return RateFit(math.nan, math.nan, math.nan, math.nan, int(keep.sum()), False)
    t = np.log(rho[keep])
    p = hits[keep] / N
    y = np.log(p)
    ols = fit_line(t, y)
    var = (1 - p) / (N * p)  # delta-method variance of log p
    wls = fit_line(t, y, 1.0 / var)
    se = max(ols.slope_stderr, wls.slope_stderr)
    return RateFit(ols.slope, ols.intercept, se, ols.r2, ols.points)


def angle_nonconcentration(mu, n, x, V, b, rho_list, N, seed=0, threads=None, min_hits=20):
    """Empirical P(angle(W_b(x, g), V) < rho) for g ~ mu^{*n} and the fitted
    exponent c in freq ~ rho^c."""
    m = mu.manifold
    d = m.d
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    V = np.linalg.qr(V)[0]
    if V.shape != (d, d - b):
        raise UsageError("V must have codimension b")
    rho = np.asarray(sorted(rho_list), dtype=float)
    if np.any(rho <= 0):
        raise UsageError("radii must be positive")
    if np.any(rho < math.exp(-n)):
        raise UsageError("every radius must be at least e^{-n}")
    x = x.coords if isinstance(x, ManifoldPoint) else m.check_point(x)
    J = run_walk(mu, x, n, N, seed, jacobian=True, threads=threads).jacobian
    ang = min_principal_angle(contracting_directions(J, b), V)
    hits = np.array([np.count_nonzero(ang < r) for r in rho])
    freq = hits / N
    se = np.sqrt(freq * (1 - freq) / N)
    fit = fit_power_law(rho, hits, N, min_hits)
    return NonConcentrationReport(
        rho, freq, se, hits, fit.slope, fit.slope_stderr, fit.r2, fit.points, fit.available
    )


@dataclass
class MargulisReport:
    s: float
    n_list: list
    ratio: np.ndarray  # mean over pairs of S^n Delta_s / Delta_s
    ratio_stderr: np.ndarray
    rate: float  # slope of log ratio in n
    rate_stderr: float
    C: float


def margulis_contraction(
    mu, s, pair_samples, n_list, seed=0, inner=16, dist_range=(1e-10, 1e-8), threads=None
) -> MargulisReport:
    """Drift of Delta_s(x, y) = d(x, y)^{-s} under the two-point walk.

    ``pair_samples`` close pairs (x, y) are drawn with log-uniform separation
    in ``dist_range``; each pair is pushed by ``inner`` common words for every
    n in ``n_list``. The rate is the weighted least-squares slope of
    log E[S^n Delta_s / Delta_s] against n, and C is the least constant with
    S^n Delta_s <= C e^{n rate} Delta_s + C on every sample.
    """
    if s < 0:
        raise UsageError("s must be nonnegative")
    m = mu.manifold
    rng = streams.generator(seed, streams.PAIRS)
    xs = m.sample_uniform(pair_samples, rng)
    dist = np.exp(rng.uniform(math.log(dist_range[0]), math.log(dist_range[1]), pair_samples))
    dirs = rng.standard_normal((pair_samples, m.d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    F = m.frame(xs)
    ys = m.exp(xs, np.einsum("nij,nj->ni", F, dirs) * dist[:, None])
    d0 = m.distance(xs, ys)
    if np.any(d0 == 0):
        raise DomainError("coincident pair")
    X = np.repeat(xs, inner, axis=0)
    Y = np.repeat(ys, inner, axis=0)
    D0 = np.repeat(d0, inner)
    total = pair_samples * inner
    n_list = sorted(int(n) for n in n_list)
    ratio, ratio_se, per_pair = [], [], []
    for n in n_list:
        px = run_walk(mu, X, n, total, seed, threads=threads).points
        py = run_walk(mu, Y, n, total, seed, threads=threads).points
        dn = m.distance(px, py)
        if np.any(dn == 0):
            raise DomainError("pair collapsed to a point under the walk")
        r = (dn / D0) ** (-s)
        pr = r.reshape(pair_samples, inner).mean(axis=1)  # S^n Delta / Delta per pair
        per_pair.append(pr)
        ratio.append(pr.mean())
        ratio_se.append(pr.std(ddof=1) / math.sqrt(pair_samples) if pair_samples > 1 else 0.0)
    ratio = np.array(ratio)
    ratio_se = np.array(ratio_se)
    t = np.array(n_list, dtype=float)
    y = np.log(ratio)
    if np.all(ratio_se == 0):
        fit = fit_line(t, y)
        rate, rate_se = fit.slope, 0.0 if np.all(y == y[0]) else fit.slope_stderr
    else:
        w = 1.0 / np.maximum((ratio_se / ratio) ** 2, 1e-300)
        fit = fit_line(t, y, w)
        ols = fit_line(t, y)
        rate, rate_se = fit.slope, max(fit.slope_stderr, ols.slope_stderr)
    C = 0.0
    for n, pr in zip(n_list, per_pair):
        C = max(C, float(np.max(pr / (math.exp(n * rate) + 1.0 / d0 ** (-s)))))
    return MargulisReport(float(s), n_list, ratio, ratio_se, float(rate), float(rate_se), C)


@dataclass
class Frequency:
    value: float
    stderr: float
    N: int


def backforth_expansion(mu, n, x, v, N, seed=0, threads=None) -> Frequency:
    """Empirical P(|D(g^{-1} h)(x) v| <= 2) for independent g, h ~ mu^{*n}."""
    m = mu.manifold
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1) > 1e-12:
        raise UsageError("v must be a unit vector")
    x = x.coords if isinstance(x, ManifoldPoint) else m.check_point(x)
    traj = np.arange(N)
    h = mu.sample_codes(n, traj, seed, streams.LETTERS)
    g = mu.sample_codes(n, traj, seed, streams.LETTERS_AUX)
    ginv = (g ^ 1)[:, ::-1]  # invert every letter and reverse
    codes = np.concatenate([h, ginv], axis=1)
    from .parallel import map_chunks

    def chunk(a, b):
        J = propagate(mu.gens, codes[a:b], x, jacobian=True).jacobian
        return np.linalg.norm(J @ v, axis=-1)

    norms = np.concatenate(map_chunks(chunk, N, threads))
    p = float(np.mean(norms <= 2.0))
    return Frequency(p, math.sqrt(p * (1 - p) / N), N)
