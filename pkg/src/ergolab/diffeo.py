"""
Generator diffeomorphisms with exact Jacobians, composition words, and
derivative bounds.

Four generator families are supported:

* ``ToralLinear``        x -> A x mod 1, A integer with |det A| = 1
* ``ToralTrigPerturb``   x -> A x + eps * sum_m sin(2 pi <k_m, x> + phi_m) u_m mod 1
* ``SphereRotation``     x -> Q x, Q orthogonal
* ``SphereTrigPerturb``  x -> Q Phi(x), Phi one normalized RK4 step of size eps
                         along a polynomial vector field from a fixed library

Jacobians are expressed in the canonical frames of ``manifold.frame`` at the
source and target points. All generator methods are vectorized over a batch
of points with shape ``(N, ambient_dim)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NumericError, UsageError
from .manifold import ManifoldPoint, Sphere, Torus

NEWTON_TOL = 1e-12
NEWTON_MAXITER = 50


class Generator:
    manifold = None

    def forward(self, x):
        raise NotImplementedError

    def forward_jac(self, x):
        """Return (g(x), Dg(x)) with Dg in canonical frames, shape (N, d, d)."""
        raise NotImplementedError

    def inverse(self, x):
        raise NotImplementedError

    def inverse_jac(self, x):
        """Return (g^{-1}(x), D(g^{-1})(x))."""
        y = self.inverse(x)
        _, J = self.forward_jac(y)
        return y, np.linalg.inv(J)

    def bounds(self):
        """(d1, d2): sup of max(|Dg|, |Dg^{-1}|) and of the C^2 norms."""
        raise NotImplementedError

    @property
    def is_linear(self):
        return False


def _as_int_matrix(matrix):
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise UsageError("generator matrix must be square")
    if not np.all(A == np.round(A)):
        raise UsageError("toral automorphism needs integer entries")
    det = round(np.linalg.det(A))
    if abs(det) != 1:
        raise UsageError(f"toral automorphism needs |det| = 1, got {det}")
    return A


@dataclass(frozen=True, eq=False)
class ToralLinear(Generator):
    matrix: np.ndarray

    def __post_init__(self):
        A = _as_int_matrix(self.matrix)
        object.__setattr__(self, "matrix", A)
        object.__setattr__(self, "inverse_matrix", np.round(np.linalg.inv(A)))
        object.__setattr__(self, "manifold", Torus(A.shape[0]))

    @property
    def is_linear(self):
        return True

    def forward(self, x):
        return self.manifold.canonical(np.asarray(x, float) @ self.matrix.T)

    def forward_jac(self, x):
        x = np.atleast_2d(x)
        return self.forward(x), np.broadcast_to(self.matrix, (len(x),) + self.matrix.shape)

    def inverse(self, x):
        return self.manifold.canonical(np.asarray(x, float) @ self.inverse_matrix.T)

    def inverse_jac(self, x):
        x = np.atleast_2d(x)
        M = self.inverse_matrix
        return self.inverse(x), np.broadcast_to(M, (len(x),) + M.shape)

    def bounds(self):
        d1 = max(np.linalg.norm(self.matrix, 2), np.linalg.norm(self.inverse_matrix, 2))
        return float(d1), float(d1)


@dataclass(frozen=True)
class TrigMode:
    frequency: tuple
    phase: float
    direction: tuple


@dataclass(frozen=True, eq=False)
class ToralTrigPerturb(Generator):
    base: ToralLinear
    amplitude: float
    modes: tuple = field(default=())

    def __post_init__(self):
        modes = tuple(
            m if isinstance(m, TrigMode) else TrigMode(tuple(m[0]), float(m[1]), tuple(m[2]))
            for m in self.modes
        )
        object.__setattr__(self, "modes", modes)
        d = self.base.manifold.d
        self_k = np.array([m.frequency for m in modes], dtype=float).reshape(-1, d)
        self_u = np.array([m.direction for m in modes], dtype=float).reshape(-1, d)
        if not np.all(self_k == np.round(self_k)):
            raise UsageError("mode frequencies must be integer vectors")
        object.__setattr__(self, "_k", self_k)
        object.__setattr__(self, "_u", self_u)
        object.__setattr__(self, "_phi", np.array([m.phase for m in modes], dtype=float))
        object.__setattr__(self, "manifold", self.base.manifold)
        eps = abs(self.amplitude)
        if modes:
            kmax = np.max(np.linalg.norm(self_k, axis=1))
            umax = np.max(np.linalg.norm(self_u, axis=1))
            if eps * kmax * 2 * math.pi * len(modes) * umax >= 0.5:
                raise UsageError("perturbation amplitude too large: derivative term must stay below 1/2")
            lip = self.lipschitz
            if np.linalg.norm(self.base.inverse_matrix, 2) * lip >= 1.0:
                raise UsageError("perturbation amplitude too large for invertibility of A + Dh")

    @property
    def lipschitz(self):
        """Bound on the operator norm of the derivative of the perturbation term."""
        return float(
            abs(self.amplitude)
            * 2
            * math.pi
            * np.sum(np.linalg.norm(self._k, axis=1) * np.linalg.norm(self._u, axis=1))
        )

    def _h(self, x):
        arg = 2 * math.pi * (x @ self._k.T) + self._phi
        return self.amplitude * (np.sin(arg) @ self._u)

    def _Dh(self, x):
        arg = 2 * math.pi * (x @ self._k.T) + self._phi
        c = 2 * math.pi * self.amplitude * np.cos(arg)
        return np.einsum("nm,mi,mj->nij", c, self._u, self._k)

    def forward(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        return self.manifold.canonical(x @ self.base.matrix.T + self._h(x))

    def forward_jac(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        return self.forward(x), self.base.matrix + self._Dh(x)

    def inverse(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        tor = self.manifold
        y = self.base.inverse(x)
        for _ in range(NEWTON_MAXITER):
            r = tor.displacement(x, y @ self.base.matrix.T + self._h(y))
            if np.max(np.abs(r), initial=0.0) < NEWTON_TOL:
                return y
            J = self.base.matrix + self._Dh(y)
            y = tor.canonical(y - np.linalg.solve(J, r[..., None])[..., 0])
        r = tor.displacement(x, y @ self.base.matrix.T + self._h(y))
        if np.max(np.abs(r), initial=0.0) < NEWTON_TOL:
            return y
        raise NumericError("Newton inversion of perturbed toral map did not converge")

    def bounds(self):
        A = self.base.matrix
        Ainv = self.base.inverse_matrix
        lip = self.lipschitz
        nA, nAi = np.linalg.norm(A, 2), np.linalg.norm(Ainv, 2)
        dg = nA + lip
        dginv = nAi / (1.0 - nAi * lip)
        second = float(
            abs(self.amplitude)
            * (2 * math.pi) ** 2
            * np.sum(np.linalg.norm(self._k, axis=1) ** 2 * np.linalg.norm(self._u, axis=1))
        )
        d1 = max(dg, dginv)
        d2 = max(d1, second, dginv**3 * second)
        return float(d1), float(d2)


@dataclass(frozen=True, eq=False)
class SphereRotation(Generator):
    matrix: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.matrix, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise UsageError("rotation matrix must be square")
        if not np.allclose(Q.T @ Q, np.eye(len(Q)), atol=1e-12, rtol=0):
            raise UsageError("rotation matrix must be orthogonal to 1e-12")
        object.__setattr__(self, "matrix", Q)
        object.__setattr__(self, "manifold", Sphere(len(Q) - 1))

    @property
    def is_linear(self):
        return True

    def forward(self, x):
        return self.manifold.canonical(np.asarray(x, float) @ self.matrix.T)

    def _frame_jac(self, x, y, M):
        S = self.manifold
        return np.einsum("nai,ab,nbj->nij", S.frame(y), M, S.frame(x))

    def forward_jac(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        y = self.forward(x)
        return y, self._frame_jac(x, y, self.matrix)

    def inverse(self, x):
        return self.manifold.canonical(np.asarray(x, float) @ self.matrix)

    def inverse_jac(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        y = self.inverse(x)
        return y, self._frame_jac(x, y, self.matrix.T)

    def bounds(self):
        return 1.0, 1.0


# Polynomial tangent fields on S^d, extended to R^{d+1}. Each entry returns
# (X(y), DX(y)) for a batch y of shape (N, d+1).


def _field_conformal(axis):
    def f(y):
        D = y.shape[1]
        a = np.zeros(D)
        a[axis] = 1.0
        ay = y[:, axis]
        X = a - ay[:, None] * y
        DX = -np.einsum("ni,j->nij", y, a) - ay[:, None, None] * np.eye(D)
        return X, DX

    return f, 2.0


def _field_quadratic(y):
    D = y.shape[1]
    c = np.zeros(D)
    c[0], c[1] = 1.0, -1.0
    Cy = y * c
    q = np.sum(y * Cy, axis=1)
    X = Cy - q[:, None] * y
    DX = np.diag(c) - 2 * np.einsum("ni,nj->nij", y, Cy) - q[:, None, None] * np.eye(D)
    return X, DX


def _field_twist(y):
    D = y.shape[1]
    S = np.zeros((D, D))
    S[1, 0], S[0, 1] = 1.0, -1.0
    Sy = y @ S.T
    z = y[:, -1]
    X = z[:, None] * Sy
    e = np.zeros(D)
    e[-1] = 1.0
    DX = np.einsum("ni,j->nij", Sy, e) + z[:, None, None] * S
    return X, DX


def vector_field(name: str):
    """Look up a library field by id: ``conformal:<axis>``, ``quadratic``, ``twist``."""
    if name.startswith("conformal:"):
        return _field_conformal(int(name.split(":", 1)[1]))
    if name == "quadratic":
        return _field_quadratic, 4.0
    if name == "twist":
        return _field_twist, 2.0
    raise UsageError(f"unknown vector field {name!r}")


@dataclass(frozen=True, eq=False)
class SphereTrigPerturb(Generator):
    base: SphereRotation
    amplitude: float
    vectorfield: str = "conformal:0"

    def __post_init__(self):
        fn, lip = vector_field(self.vectorfield)
        object.__setattr__(self, "_field", fn)
        object.__setattr__(self, "manifold", self.base.manifold)
        if abs(self.amplitude) * lip >= 0.5:
            raise UsageError("perturbation amplitude too large: eps * Lip(X) must stay below 1/2")

    def _flow(self, x, with_jac):
        h = self.amplitude
        k1, K1 = self._field(x)
        y2 = x + 0.5 * h * k1
        k2, D2 = self._field(y2)
        y3 = x + 0.5 * h * k2
        k3, D3 = self._field(y3)
        y4 = x + h * k3
        k4, D4 = self._field(y4)
        y = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        r = np.linalg.norm(y, axis=1, keepdims=True)
        z = y / r
        if not with_jac:
            return z, None
        eye = np.eye(x.shape[1])
        K2 = D2 @ (eye + 0.5 * h * K1)
        K3 = D3 @ (eye + 0.5 * h * K2)
        K4 = D4 @ (eye + h * K3)
        Jrk = eye + h / 6 * (K1 + 2 * K2 + 2 * K3 + K4)
        Pn = (eye - np.einsum("ni,nj->nij", z, z)) / r[:, :, None]
        return z, Pn @ Jrk

    def _phi_frame_jac(self, x):
        S = self.manifold
        z, Jamb = self._flow(x, True)
        return z, np.einsum("nai,nab,nbj->nij", S.frame(z), Jamb, S.frame(x))

    def forward(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        z, _ = self._flow(x, False)
        return self.base.forward(z)

    def forward_jac(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        z, Jphi = self._phi_frame_jac(x)
        y, Jrot = self.base.forward_jac(z)
        return y, Jrot @ Jphi

    def inverse(self, x):
        S = self.manifold
        target = self.base.inverse(np.atleast_2d(np.asarray(x, float)))
        y = target.copy()
        for _ in range(NEWTON_MAXITER):
            z, J = self._phi_frame_jac(y)
            r = S.log(z, target)
            if np.max(np.linalg.norm(r, axis=1), initial=0.0) < NEWTON_TOL:
                return y
            rf = np.einsum("nai,na->ni", S.frame(z), r)
            step = np.linalg.solve(J, rf[..., None])[..., 0]
            y = S.exp(y, np.einsum("nai,ni->na", S.frame(y), step))
        raise NumericError("Newton inversion of perturbed sphere map did not converge")

    def bounds(self, samples=2000):
        # sampled on a Fibonacci grid, inflated by 1% for the unsampled remainder
        pts = fibonacci_sphere(samples, self.manifold.d)
        _, J = self.forward_jac(pts)
        s = np.linalg.svd(J, compute_uv=False)
        d1 = max(np.max(s[:, 0]), np.max(1.0 / s[:, -1]))
        h = 1e-5
        d = self.manifold.d
        frames = self.manifold.frame(pts)
        second = 0.0
        for i in range(d):
            v = frames[:, :, i]
            _, Jp = self.forward_jac(self.manifold.exp(pts, h * v))
            _, Jm = self.forward_jac(self.manifold.exp(pts, -h * v))
            second = max(second, float(np.max(np.linalg.norm(Jp - Jm, axis=(1, 2)) / (2 * h))))
        d1 = 1.01 * float(d1)
        return d1, max(d1, 1.01 * second * d1**3)


def fibonacci_sphere(n: int, d: int = 2):
    """Quasi-uniform points on S^d (spiral lattice for d = 2, deterministic
    Halton-style normals otherwise)."""
    if d == 2:
        i = np.arange(n) + 0.5
        z = 1 - 2 * i / n
        phi = math.pi * (1 + 5**0.5) * i
        r = np.sqrt(1 - z * z)
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    rng = np.random.default_rng(12345)
    x = rng.standard_normal((n, d + 1))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# ----------------------------------------------------------------------------
# Words


@dataclass(frozen=True)
class DiffeoWord:
    """Letters (generator index, inverted) applied first-to-last.

    ``DiffeoWord(((0, False), (1, True)))`` is the map g_1^{-1} o g_0.
    """

    letters: tuple = ()

    def __post_init__(self):
        object.__setattr__(
            self, "letters", tuple((int(i), bool(inv)) for i, inv in self.letters)
        )

    def __len__(self):
        return len(self.letters)

    def then(self, other: "DiffeoWord") -> "DiffeoWord":
        """The word applying ``self`` first and ``other`` afterwards."""
        return DiffeoWord(self.letters + other.letters)

    def inverse(self) -> "DiffeoWord":
        return DiffeoWord(tuple((i, not inv) for i, inv in reversed(self.letters)))

    def codes(self):
        return np.array([2 * i + int(inv) for i, inv in self.letters], dtype=np.int64)

    @classmethod
    def from_codes(cls, codes):
        return cls(tuple((int(c) // 2, bool(c % 2)) for c in codes))


def _check_gens(gens: Sequence[Generator]):
    if not gens:
        raise UsageError("empty generator list")
    m = gens[0].manifold
    for g in gens:
        if g.manifold != m:
            raise UsageError("generators act on different manifolds")
    return m


@dataclass
class Propagation:
    points: np.ndarray
    jacobian: np.ndarray | None = None
    inverse_jacobian: np.ndarray | None = None
    log_det: np.ndarray | None = None


def propagate(gens, codes, x0, jacobian=False, inverse_jacobian=False, log_det=False):
    """Apply a batch of words to a batch of points.

    ``codes`` has shape (N, n) with entries ``2 * index + inverted``;
    ``x0`` has shape (N, D) or (D,). Letters are grouped per step so each
    generator is evaluated once per step on all trajectories using it.
    """
    m = _check_gens(gens)
    codes = np.asarray(codes, dtype=np.int64)
    if codes.ndim == 1:
        codes = codes[None, :]
    N, n = codes.shape
    if codes.size and (codes.min() < 0 or codes.max() >= 2 * len(gens)):
        raise UsageError("word refers to a generator index out of range")
    x = np.array(np.broadcast_to(m.check_point(x0), (N, m.ambient_dim)), dtype=float)
    d = m.d
    want_J = jacobian or log_det
    J = np.broadcast_to(np.eye(d), (N, d, d)).copy() if jacobian else None
    Ji = np.broadcast_to(np.eye(d), (N, d, d)).copy() if inverse_jacobian else None
    ld = np.zeros(N) if log_det else None
    for step in range(n):
        col = codes[:, step]
        for code in np.unique(col):
            rows = np.nonzero(col == code)[0]
            g = gens[code // 2]
            inv = bool(code % 2)
            xs = x[rows]
            if want_J or inverse_jacobian:
                y, Js = (g.inverse_jac(xs) if inv else g.forward_jac(xs))
                if g.is_linear and isinstance(g, ToralLinear):
                    Jsi = (g.matrix if inv else g.inverse_matrix)[None]
                else:
                    Jsi = None
                if jacobian:
                    J[rows] = Js @ J[rows]
                if inverse_jacobian:
                    if Jsi is None:
                        Jsi = np.linalg.inv(Js)
                    Ji[rows] = Ji[rows] @ Jsi
                if log_det and not (isinstance(g, (ToralLinear, SphereRotation))):
                    ld[rows] += np.log(np.abs(np.linalg.det(Js)))
            else:
                y = g.inverse(xs) if inv else g.forward(xs)
            x[rows] = y
    return Propagation(x, J, Ji, ld)


def _point_array(p, gens):
    m = _check_gens(gens)
    if isinstance(p, ManifoldPoint):
        if p.manifold != m:
            raise UsageError("point and generators live on different manifolds")
        return p.coords, m
    return m.check_point(p), m


def apply(word: DiffeoWord, gens, p):
    x, m = _point_array(p, gens)
    out = propagate(gens, word.codes()[None, :], x).points[0]
    return ManifoldPoint(m, out) if isinstance(p, ManifoldPoint) else out


def jacobian(word: DiffeoWord, gens, p):
    x, _ = _point_array(p, gens)
    return propagate(gens, word.codes()[None, :], x, jacobian=True).jacobian[0]


def log_det_jacobian(word: DiffeoWord, gens, p) -> float:
    x, _ = _point_array(p, gens)
    return float(propagate(gens, word.codes()[None, :], x, log_det=True).log_det[0])


@dataclass(frozen=True)
class DerivativeBounds:
    d1: float
    d2: float


def derivative_bounds(gens, support) -> DerivativeBounds:
    """Bounds over the generators named in ``support`` (indices or letters)."""
    idx = sorted({s[0] if isinstance(s, tuple) else int(s) for s in support})
    if not idx:
        raise UsageError("empty support")
    pairs = [gens[i].bounds() for i in idx]
    d1 = max(1.0, max(p[0] for p in pairs))
    d2 = max(d1, max(p[1] for p in pairs))
    return DerivativeBounds(float(d1), float(d2))
