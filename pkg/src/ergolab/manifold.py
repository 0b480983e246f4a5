"""
Geometry of the flat torus T^d = R^d / Z^d and the round sphere S^d.

Both manifolds carry the normalized volume (total mass 1) and the standard
metric. Points are stored as float arrays of ambient coordinates: length ``d``
in ``[0, 1)`` for the torus, length ``d + 1`` with unit norm for the sphere.
All heavy routines are vectorized over a leading batch axis; the small
``ManifoldPoint`` / ``TangentVector`` wrappers exist for the scalar API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special
from scipy.spatial import cKDTree

from .errors import DomainError, UsageError

_CUT_TOL = 1e-12


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


class Manifold:
    """Common interface. Subclasses are frozen dataclasses with a field ``d``."""

    d: int
    ambient_dim: int
    diameter: float
    injectivity_radius: float

    def canonical(self, x):
        raise NotImplementedError

    def distance(self, p, q):
        raise NotImplementedError

    def exp(self, p, v):
        raise NotImplementedError

    def log(self, p, q):
        raise NotImplementedError

    def frame(self, p):
        raise NotImplementedError

    def ball_volume(self, r: float) -> float:
        raise NotImplementedError

    def sample_uniform(self, n: int, rng: np.random.Generator):
        raise NotImplementedError

    def kdtree(self, points) -> "BallIndex":
        return BallIndex(self, np.asarray(points, dtype=float))

    def check_point(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.ambient_dim:
            raise UsageError(
                f"{self} expects {self.ambient_dim} coordinates, got {x.shape[-1]}"
            )
        return x


@dataclass(frozen=True)
class Torus(Manifold):
    d: int

    def __post_init__(self):
        if self.d < 2:
            raise UsageError("manifold dimension must be at least 2")

    @property
    def ambient_dim(self):
        return self.d

    @property
    def diameter(self):
        return math.sqrt(self.d) / 2

    @property
    def injectivity_radius(self):
        return 0.5

    def canonical(self, x):
        x = np.asarray(x, dtype=float)
        y = x - np.floor(x)
        # x - floor(x) can round up to exactly 1.0 for tiny negative x
        y[y >= 1.0] = 0.0
        return y

    def displacement(self, p, q):
        """Shortest lift of q - p, each component in [-1/2, 1/2]."""
        diff = np.asarray(q, dtype=float) - np.asarray(p, dtype=float)
        return diff - np.round(diff)

    def distance(self, p, q):
        return np.linalg.norm(self.displacement(p, q), axis=-1)

    def exp(self, p, v):
        return self.canonical(np.asarray(p, dtype=float) + np.asarray(v, dtype=float))

    def log(self, p, q):
        diff = self.displacement(p, q)
        if np.any(np.abs(np.abs(diff) - 0.5) < _CUT_TOL):
            raise DomainError("log: point lies on the cut locus of the base point")
        return diff

    def frame(self, p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(np.eye(self.d), p.shape[:-1] + (self.d, self.d)).copy()

    def ball_volume(self, r):
        if r <= 0:
            return 0.0
        if r >= self.diameter:
            return 1.0
        return _cube_ball_volume(self.d, float(r))

    def sample_uniform(self, n, rng):
        return rng.random((n, self.d))


@dataclass(frozen=True)
class Sphere(Manifold):
    d: int

    def __post_init__(self):
        if self.d < 2:
            raise UsageError("manifold dimension must be at least 2")

    @property
    def ambient_dim(self):
        return self.d + 1

    @property
    def diameter(self):
        return math.pi

    @property
    def injectivity_radius(self):
        return math.pi

    def canonical(self, x):
        x = np.asarray(x, dtype=float)
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    def distance(self, p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        c = np.sum(p * q, axis=-1)
        s = np.linalg.norm(q - c[..., None] * p, axis=-1)
        return np.arctan2(s, c)

    def exp(self, p, v):
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        t = np.linalg.norm(v, axis=-1, keepdims=True)
        safe = np.where(t > 0, t, 1.0)
        out = np.cos(t) * p + np.sin(t) * v / safe
        return self.canonical(out)

    def log(self, p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        c = np.sum(p * q, axis=-1, keepdims=True)
        if np.any(c <= -1.0 + _CUT_TOL):
            raise DomainError("log: antipodal point is on the cut locus")
        u = q - c * p
        s = np.linalg.norm(u, axis=-1, keepdims=True)
        theta = np.arctan2(s, c)
        safe = np.where(s > 0, s, 1.0)
        return np.where(s > 0, theta * u / safe, 0.0)

    def frame(self, p):
        """Deterministic Gram-Schmidt completion of p's orthogonal complement.

        The coordinate axis most aligned with p is dropped (lowest index on
        ties) and the remaining axes are orthonormalized in increasing order.
        Returns shape (..., d + 1, d); columns span T_p S^d.
        """
        p = np.asarray(p, dtype=float)
        flat = p.reshape(-1, self.d + 1)
        out = np.empty((flat.shape[0], self.d + 1, self.d))
        pivot = np.argmax(np.abs(flat), axis=1)
        eye = np.eye(self.d + 1)
        for j in range(self.d + 1):
            rows = np.nonzero(pivot == j)[0]
            if rows.size == 0:
                continue
            base = flat[rows]
            cols = []
            for axis in range(self.d + 1):
                if axis == j:
                    continue
                w = np.broadcast_to(eye[axis], base.shape).copy()
                w -= np.sum(w * base, axis=1, keepdims=True) * base
                for c in cols:
                    w -= np.sum(w * c, axis=1, keepdims=True) * c
                w /= np.linalg.norm(w, axis=1, keepdims=True)
                cols.append(w)
            out[rows] = np.stack(cols, axis=-1)
        return out.reshape(p.shape[:-1] + (self.d + 1, self.d))

    def ball_volume(self, r):
        if r <= 0:
            return 0.0
        if r >= math.pi:
            return 1.0
        half = 0.5 * special.betainc(self.d / 2, 0.5, math.sin(r) ** 2)
        return float(half if r <= math.pi / 2 else 1.0 - half)

    def sample_uniform(self, n, rng):
        return self.canonical(rng.standard_normal((n, self.d + 1)))


@dataclass(frozen=True)
class Euclidean(Manifold):
    """Flat R^d. Used for charts, point clouds and boxes; not a closed manifold."""

    d: int

    @property
    def ambient_dim(self):
        return self.d

    @property
    def diameter(self):
        return math.inf

    @property
    def injectivity_radius(self):
        return math.inf

    def canonical(self, x):
        return np.asarray(x, dtype=float)

    def distance(self, p, q):
        return np.linalg.norm(np.asarray(q, float) - np.asarray(p, float), axis=-1)

    def exp(self, p, v):
        return np.asarray(p, float) + np.asarray(v, float)

    def log(self, p, q):
        return np.asarray(q, float) - np.asarray(p, float)

    def frame(self, p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(np.eye(self.d), p.shape[:-1] + (self.d, self.d)).copy()

    def ball_volume(self, r):
        return unit_ball_volume(self.d) * max(r, 0.0) ** self.d

    def sample_uniform(self, n, rng):
        return rng.random((n, self.d))


def _cube_ball_volume(d: int, r: float) -> float:
    """Volume of B_r(0) intersected with the cube [-1/2, 1/2]^d."""
    if r <= 0:
        return 0.0
    if r <= 0.5:
        return unit_ball_volume(d) * r**d
    if d == 1:
        return min(2 * r, 1.0)
    if d == 2:
        if r * r >= 0.5:
            return 1.0
        segment = r * r * math.acos(0.5 / r) - 0.5 * math.sqrt(r * r - 0.25)
        return math.pi * r * r - 4 * segment
    lim = min(r, 0.5)
    val, _ = integrate.quad(
        lambda x: _cube_ball_volume(d - 1, math.sqrt(max(r * r - x * x, 0.0))),
        -lim,
        lim,
        epsabs=1e-13,
        epsrel=1e-11,
        limit=200,
    )
    return val


class BallIndex:
    """Radius queries on a point cloud under a manifold's metric.

    Torus: periodic KD-tree. Sphere: KD-tree on ambient coordinates with the
    geodesic radius converted to a chordal one. Balls are open.
    """

    def __init__(self, manifold: Manifold, points: np.ndarray):
        self.manifold = manifold
        self.points = points
        if isinstance(manifold, Torus):
            self.tree = cKDTree(manifold.canonical(points), boxsize=1.0)
        else:
            self.tree = cKDTree(points)

    def _radius(self, r):
        if isinstance(self.manifold, Sphere):
            r = 2.0 * math.sin(min(r, math.pi) / 2.0)
        # KD-tree balls are closed; shrink by one ulp for open balls
        return float(np.nextafter(r, 0.0))

    def _queries(self, centers):
        if isinstance(self.manifold, Torus):
            return self.manifold.canonical(centers)
        return np.asarray(centers, dtype=float)

    def query_ball(self, centers, r):
        return self.tree.query_ball_point(self._queries(centers), self._radius(r))

    def counts(self, centers, r):
        return np.asarray(
            self.tree.query_ball_point(
                self._queries(centers), self._radius(r), return_length=True
            )
        )

    def masses(self, centers, r, weights, chunk=2048):
        """Sum of ``weights`` of indexed points inside each open ball."""
        centers = np.atleast_2d(centers)
        out = np.empty(len(centers))
        for start in range(0, len(centers), chunk):
            block = self.query_ball(centers[start : start + chunk], r)
            lengths = np.fromiter((len(b) for b in block), dtype=np.int64, count=len(block))
            if lengths.sum() == 0:
                out[start : start + len(block)] = 0.0
                continue
            idx = np.concatenate([np.asarray(b, dtype=np.int64) for b in block])
            owner = np.repeat(np.arange(len(block)), lengths)
            out[start : start + len(block)] = np.bincount(
                owner, weights=weights[idx], minlength=len(block)
            )
        return out

    def sparse_adjacency(self, r):
        """CSR matrix A with A[i, j] = 1 iff point j lies in the open r-ball at point i."""
        from scipy import sparse

        pairs = self.tree.query_pairs(self._radius(r), output_type="ndarray")
        n = len(self.points)
        rows = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n)])
        cols = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n)])
        data = np.ones(len(rows))
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))


# ----------------------------------------------------------------------------
# Scalar value API


@dataclass(frozen=True)
class ManifoldPoint:
    manifold: Manifold
    coords: np.ndarray = field(compare=False)

    def __post_init__(self):
        x = self.manifold.check_point(self.coords)
        x = self.manifold.canonical(x)
        if x.ndim != 1:
            raise UsageError("ManifoldPoint holds a single point")
        object.__setattr__(self, "coords", x)

    def __eq__(self, other):
        return (
            isinstance(other, ManifoldPoint)
            and self.manifold == other.manifold
            and np.array_equal(self.coords, other.coords)
        )

    def __hash__(self):
        return hash((self.manifold, self.coords.tobytes()))


@dataclass(frozen=True)
class TangentVector:
    base: ManifoldPoint
    components: np.ndarray = field(compare=False)

    def __post_init__(self):
        v = np.asarray(self.components, dtype=float)
        m = self.base.manifold
        if v.shape != (m.ambient_dim,):
            raise UsageError("tangent vector has the wrong number of components")
        if isinstance(m, Sphere):
            # project out the normal component left by rounding
            v = v - np.dot(v, self.base.coords) * self.base.coords
        object.__setattr__(self, "components", v)

    @property
    def norm(self):
        return float(np.linalg.norm(self.components))


@dataclass(frozen=True)
class FrameAtPoint:
    base: ManifoldPoint
    columns: np.ndarray = field(compare=False)

    @classmethod
    def canonical(cls, base: ManifoldPoint) -> "FrameAtPoint":
        return cls(base, base.manifold.frame(base.coords))


def _same(p: ManifoldPoint, q: ManifoldPoint):
    if p.manifold != q.manifold:
        raise UsageError(f"points live on different manifolds: {p.manifold} vs {q.manifold}")
    return p.manifold


def distance(p: ManifoldPoint, q: ManifoldPoint) -> float:
    m = _same(p, q)
    return float(m.distance(p.coords, q.coords))


def exp(v: TangentVector) -> ManifoldPoint:
    m = v.base.manifold
    return ManifoldPoint(m, m.exp(v.base.coords, v.components))


def log(p: ManifoldPoint, q: ManifoldPoint) -> TangentVector:
    m = _same(p, q)
    return TangentVector(p, m.log(p.coords, q.coords))


def ball_volume(kind: Manifold, r: float) -> float:
    return kind.ball_volume(r)
