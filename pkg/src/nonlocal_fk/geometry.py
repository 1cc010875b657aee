"""Bounded convex domains: balls, boxes and bounded polytopes.

Polytopes are ``{x : n_i . x <= o_i}`` with unit normals.  Their signed
distance is the max-of-halfspaces surrogate: the sign is exact and it is
1-Lipschitz, which is all the exit bisection needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numba import njit
from scipy.optimize import linprog
from scipy.spatial import HalfspaceIntersection

KIND_BALL, KIND_BOX, KIND_POLYTOPE, KIND_WHOLE = 0, 1, 2, 3


@njit(cache=True, nogil=True)
def sdf(kind, p1, p2, normals, x):
    """Signed distance for the packed representation produced by ``Domain.packed``."""
    d = x.shape[0]
    if kind == KIND_BALL:
        s = 0.0
        for i in range(d):
            s += (x[i] - p1[i]) ** 2
        return math.sqrt(s) - p2[0]
    if kind == KIND_BOX:
        outside = 0.0
        inside = -np.inf
        for i in range(d):
            q = abs(x[i] - 0.5 * (p1[i] + p2[i])) - 0.5 * (p2[i] - p1[i])
            if q > 0.0:
                outside += q * q
            if q > inside:
                inside = q
        return math.sqrt(outside) + min(inside, 0.0)
    if kind == KIND_POLYTOPE:
        best = -np.inf
        for k in range(normals.shape[0]):
            s = -p1[k]
            for i in range(d):
                s += normals[k, i] * x[i]
            if s > best:
                best = s
        return best
    return -np.inf


@njit(cache=True, nogil=True)
def bisect_exit(kind, p1, p2, normals, p, q, tol, out):
    """Bisect segment ``[p, q]`` (p inside, q outside) to a point within ``tol``
    of the boundary.  Writes the outside endpoint to ``out``; returns the
    fraction of the segment travelled."""
    d = p.shape[0]
    length = 0.0
    for i in range(d):
        length += (q[i] - p[i]) ** 2
    length = math.sqrt(length)
    lo = 0.0
    hi = 1.0
    max_iter = 2
    if length > tol:
        max_iter += int(math.ceil(math.log2(length / tol)))
    for i in range(d):
        out[i] = q[i]
    for _ in range(max_iter):
        if abs(sdf(kind, p1, p2, normals, out)) <= tol:
            break
        mid = 0.5 * (lo + hi)
        for i in range(d):
            out[i] = p[i] + mid * (q[i] - p[i])
        if sdf(kind, p1, p2, normals, out) < 0.0:
            lo = mid
        else:
            hi = mid
        # out always holds the outside end of the bracket
        for i in range(d):
            out[i] = p[i] + hi * (q[i] - p[i])
    return hi


@njit(cache=True, nogil=True)
def _sdf_many(kind, p1, p2, normals, pts):
    out = np.empty(pts.shape[0])
    for k in range(pts.shape[0]):
        out[k] = sdf(kind, p1, p2, normals, pts[k])
    return out


class Domain:
    """Common interface; concrete shapes provide ``packed`` and ``bounds``."""

    dim: int

    @property
    def packed(self):
        raise NotImplementedError

    def signed_distance(self, x) -> float | np.ndarray:
        """Negative inside, positive outside.  Accepts one point or an (n, d) array."""
        x = np.asarray(x, dtype=float)
        kind, p1, p2, nrm = self.packed
        if x.ndim == 1:
            return float(sdf(kind, p1, p2, nrm, x))
        return _sdf_many(kind, p1, p2, nrm, np.ascontiguousarray(x))

    def contains(self, x) -> bool | np.ndarray:
        """Membership of the open interior."""
        return self.signed_distance(x) < 0

    def boundary_hit(self, p, q, tol: float) -> np.ndarray:
        if tol <= 0:
            raise ValueError("tol must be positive")
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if not self.contains(p) or self.contains(q):
            raise ValueError("boundary_hit needs p inside and q outside")
        out = np.empty(self.dim)
        kind, p1, p2, nrm = self.packed
        bisect_exit(kind, p1, p2, nrm, p, q, tol, out)
        return out

    def lattice_axes(self, h: float, pad: float = 0.0) -> list[np.ndarray]:
        """Coordinates ``lo + k h`` (integer k, possibly negative) covering the
        bounding box enlarged by ``pad``."""
        lo, hi = self.bounds
        axes = []
        for i in range(self.dim):
            k0 = math.floor(-pad / h)
            k1 = math.ceil((hi[i] - lo[i] + pad) / h)
            axes.append(lo[i] + h * np.arange(k0, k1 + 1))
        return axes

    def grid_points(self, h: float) -> np.ndarray:
        """Lattice points anchored at the bounding-box lower corner that lie
        strictly inside, in lexicographic order.  May be empty."""
        if not 0 < h < self.diameter:
            raise ValueError(f"need 0 < h < diameter ({self.diameter}), got {h}")
        axes = self.lattice_axes(h)
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        return pts[self.contains(pts)]

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    @property
    def diameter(self) -> float:
        raise NotImplementedError

    @property
    def center(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def inradius(self) -> float:
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Ball(Domain):
    centre: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.array(self.centre, dtype=float).ravel()
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")
        object.__setattr__(self, "centre", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self):
        return len(self.centre)

    @cached_property
    def packed(self):
        return KIND_BALL, self.centre, np.array([self.radius]), np.zeros((0, self.dim))

    @property
    def bounds(self):
        return self.centre - self.radius, self.centre + self.radius

    @property
    def diameter(self):
        return 2.0 * self.radius

    @property
    def center(self):
        return self.centre

    @property
    def inradius(self):
        return self.radius

    def to_config(self):
        return {"type": "ball", "center": self.centre.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Box(Domain):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float).ravel()
        hi = np.array(self.hi, dtype=float).ravel()
        if lo.shape != hi.shape or not np.all(lo < hi):
            raise ValueError("box needs lo < hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return len(self.lo)

    @cached_property
    def packed(self):
        return KIND_BOX, self.lo, self.hi, np.zeros((0, self.dim))

    @property
    def bounds(self):
        return self.lo, self.hi

    @property
    def diameter(self):
        return float(np.linalg.norm(self.hi - self.lo))

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def inradius(self):
        return float(0.5 * np.min(self.hi - self.lo))

    def to_config(self):
        return {"type": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True, eq=False)
class Polytope(Domain):
    normals: np.ndarray
    offsets: np.ndarray
    _lo: np.ndarray = field(init=False, repr=False)
    _hi: np.ndarray = field(init=False, repr=False)
    _cheb: tuple = field(init=False, repr=False)
    _vertices: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.normals, dtype=float))
        o = np.array(self.offsets, dtype=float).ravel()
        if A.shape[0] != len(o):
            raise ValueError("one offset per normal")
        lengths = np.linalg.norm(A, axis=1)
        if np.any(lengths == 0):
            raise ValueError("zero normal")
        if not np.allclose(lengths, 1.0, rtol=0, atol=1e-12):
            raise ValueError("polytope normals must be unit vectors")
        d = A.shape[1]
        # Chebyshev centre: max r s.t. n_i.x + r <= o_i; r > 0 means nonempty interior
        res = linprog(np.r_[np.zeros(d), -1.0], A_ub=np.c_[A, np.ones(len(o))], b_ub=o,
                      bounds=[(None, None)] * d + [(0, None)], method="highs")
        if res.status == 3:
            raise ValueError("polytope is unbounded")
        if res.status != 0 or res.x[-1] <= 1e-12:
            raise ValueError("polytope has empty interior")
        cheb = (res.x[:d].copy(), float(res.x[-1]))
        lo = np.empty(d)
        hi = np.empty(d)
        for i in range(d):
            for sign, store in ((1.0, lo), (-1.0, hi)):
                c = np.zeros(d)
                c[i] = sign
                r = linprog(c, A_ub=A, b_ub=o, bounds=[(None, None)] * d, method="highs")
                if r.status != 0:
                    raise ValueError("polytope is unbounded")
                store[i] = r.x[i]
        if d == 1:
            verts = np.array([[lo[0]], [hi[0]]])
        else:
            hs = HalfspaceIntersection(np.c_[A, -o], cheb[0])
            verts = hs.intersections
        object.__setattr__(self, "normals", A)
        object.__setattr__(self, "offsets", o)
        object.__setattr__(self, "_lo", lo)
        object.__setattr__(self, "_hi", hi)
        object.__setattr__(self, "_cheb", cheb)
        object.__setattr__(self, "_vertices", verts)

    @property
    def dim(self):
        return self.normals.shape[1]

    @cached_property
    def packed(self):
        return KIND_POLYTOPE, self.offsets, np.zeros(1), np.ascontiguousarray(self.normals)

    @property
    def bounds(self):
        return self._lo, self._hi

    @property
    def vertices(self) -> np.ndarray:
        return self._vertices

    @cached_property
    def diameter(self):
        v = self._vertices
        diff = v[:, None, :] - v[None, :, :]
        return float(np.sqrt((diff ** 2).sum(-1)).max())

    @property
    def center(self):
        return self._cheb[0]

    @property
    def inradius(self):
        return self._cheb[1]

    def to_config(self):
        return {"type": "polytope",
                "halfspaces": [{"normal": n.tolist(), "offset": float(o)} for n, o in zip(self.normals, self.offsets)]}


@dataclass(frozen=True, eq=False)
class WholeSpace(Domain):
    """Never exited; used to simulate the free (unkilled) process."""

    ndim: int

    @property
    def dim(self):
        return self.ndim

    @cached_property
    def packed(self):
        return KIND_WHOLE, np.zeros(1), np.zeros(1), np.zeros((0, self.ndim))

    @property
    def diameter(self):
        return math.inf


def domain_from_config(cfg: dict) -> Domain:
    kind = cfg["type"]
    if kind == "ball":
        return Ball(cfg["center"], cfg["radius"])
    if kind == "box":
        return Box(cfg["lo"], cfg["hi"])
    if kind == "polytope":
        hs = cfg["halfspaces"]
        return Polytope([h["normal"] for h in hs], [h["offset"] for h in hs])
    raise ValueError(f"unknown domain type {kind!r}")


def inward_normal(dom: Domain, z, eps: float = 1e-6) -> np.ndarray:
    """Unit inward normal at (or near) a boundary point, from the signed distance gradient."""
    z = np.asarray(z, dtype=float)
    if isinstance(dom, Ball):
        v = dom.centre - z
        return v / np.linalg.norm(v)
    g = np.empty(dom.dim)
    for i in range(dom.dim):
        e = np.zeros(dom.dim)
        e[i] = eps
        g[i] = (dom.signed_distance(z + e) - dom.signed_distance(z - e)) / (2 * eps)
    return -g / np.linalg.norm(g)
