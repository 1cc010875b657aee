"""Weak-form residual of the complement value problem against bump test functions.

For a candidate ``u`` (grid samples inside D, ``g`` outside) and a test
function ``phi`` supported in D,

    R(phi) = sigma int grad u . grad phi
             + (kappa / 2) iint (u(x) - u(y)) (phi(x) - phi(y)) |x - y|^{-d-alpha} dx dy
             - int (b . grad u) phi - int c u phi - int f phi,

with ``kappa = a^alpha A(d, -alpha)``; a weak solution has ``R(phi) = 0``.
Everything is a lattice sum on ``lo + k h`` (the grid lattice), which makes
``R`` an affine function of the grid values: the weights ``dR / dU_k`` give
the linearly propagated Monte Carlo error.

The double integral only sees pairs with ``x`` or ``y`` in ``S = supp phi``:

* pairs ``x, y`` in S, counted once per ordered pair (symmetric),
* ``x`` in S, ``y`` off S within ``R`` of ``x``: ``2 (u(x) - u(y)) phi(x)``,
* ``|y - x| > R`` (R at least diam D, so ``y`` lies outside D): the tail
  ``2 phi(x) [u(x) omega R^{-alpha} / alpha - int_{|z|>R} g(x + z) |z|^{-d-alpha} dz]``.

The last integral is computed exactly for constant ``g`` and otherwise by
Gauss-Legendre in ``s = r^{-alpha}``, which maps the infinite ray to
``(0, R^{-alpha})`` with a bounded integrand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .estimator import GridFunction
from .expr import EvaluationError, ExprAST, compile_fields, is_constant, parse_expression
from .model import ProblemSpec, frac_constant
from .quadrature import gauss_legendre, sphere_area, sphere_rule


@dataclass(frozen=True)
class TestFunction:
    """Tensor bump ``prod_i exp(-1 / (1 - s_i^2))``, ``s_i = (x_i - c_i) / w``, on the cube ``|s_i| < 1``."""

    __test__ = False  # not a pytest class

    center: np.ndarray
    width: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).ravel())
        if not self.width > 0:
            raise ValueError("bump width must be positive")

    @property
    def dim(self) -> int:
        return len(self.center)

    def corners(self) -> np.ndarray:
        d = self.dim
        signs = np.array(np.meshgrid(*([[-1.0, 1.0]] * d), indexing="ij")).reshape(d, -1).T
        return self.center + self.width * signs

    def check_inside(self, domain) -> None:
        """The support cube must lie strictly inside (convex D: its corners suffice)."""
        if not np.all(domain.signed_distance(self.corners()) < 0):
            raise ValueError(f"bump at {self.center.tolist()} with width {self.width} is not inside the domain")

    def value_and_grad(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        s = (x - self.center) / self.width
        inside = np.all(np.abs(s) < 1.0, axis=1)
        phi = np.zeros(len(x))
        grad = np.zeros_like(x)
        si = s[inside]
        q = 1.0 - si * si
        phi_in = np.exp(-np.sum(1.0 / q, axis=1))
        phi[inside] = phi_in
        grad[inside] = phi_in[:, None] * (-2.0 * si / (q * q)) / self.width
        return phi, grad

    def __call__(self, x) -> np.ndarray:
        return self.value_and_grad(x)[0]


def default_bumps(domain) -> list[TestFunction]:
    """Centre bump plus four bumps offset half the inradius toward the boundary,
    width a third of the inradius (shrunk if a support cube would poke out)."""
    c = np.asarray(domain.center, dtype=float)
    r = domain.inradius
    d = domain.dim
    if d == 1:
        offs = [np.array([s * r]) for s in (0.5, -0.5, 0.25, -0.25)]
    else:
        offs = []
        for i in range(2):
            for s in (0.5, -0.5):
                e = np.zeros(d)
                e[i] = s * r
                offs.append(e)
    out = []
    for o in [np.zeros(d)] + offs:
        w = r / 3.0
        b = TestFunction(c + o, w)
        while not np.all(domain.signed_distance(b.corners()) < 0):
            w *= 0.9
            b = TestFunction(c + o, w)
        out.append(b)
    return out


@dataclass(frozen=True)
class QuadraturePolicy:
    """Lattice spacing ``h_q`` (None: the grid spacing of ``u``), singular split
    ``delta`` (None: ``4 h_q``) and far cutoff ``R`` (None: the domain diameter)."""

    h_q: float | None = None
    delta: float | None = None
    R: float | None = None
    n_tail_radial: int = 24
    n_tail_angular: int = 32

    def resolve(self, u, domain) -> tuple[float, float, float]:
        h = self.h_q
        if isinstance(u, GridFunction):
            if h is not None and not math.isclose(h, u.h, rel_tol=1e-12):
                raise ValueError("for grid-sampled u the quadrature lattice is the grid (h_q must equal h)")
            h = u.h
        if h is None or h <= 0:
            raise ValueError("h_q must be positive")
        delta = self.delta if self.delta is not None else 4.0 * h
        R = self.R if self.R is not None else domain.diameter
        if delta < 2.0 * h:
            raise ValueError(f"singular split delta={delta} must be at least 2 h_q={2 * h}")
        if not 0 < delta < R:
            raise ValueError("need 0 < delta < R")
        if R < domain.diameter * (1 - 1e-12):
            raise ValueError("R must be at least the domain diameter so the tail only sees g")
        return h, delta, R


@dataclass
class ResidualTerms:
    """Components of ``R(phi)`` and the weights ``dR / dU`` on the grid points."""

    gradient: float
    frac_near: float
    frac_mid: float
    frac_far: float
    drift: float
    potential: float
    source: float
    phi_l1: float
    grad_phi_l1: float
    weights: np.ndarray | None = None  # per grid point, grid order
    stderr: float = 0.0

    @property
    def fractional(self) -> float:
        return self.frac_near + self.frac_mid + self.frac_far

    @property
    def e0(self) -> float:
        return self.gradient + self.fractional + self.drift

    @property
    def residual(self) -> float:
        return self.e0 + self.potential + self.source

    @property
    def normalization(self) -> float:
        return self.phi_l1 + self.grad_phi_l1

    def to_dict(self) -> dict:
        return {"residual": self.residual, "gradient": self.gradient, "frac_near": self.frac_near,
                "frac_mid": self.frac_mid, "frac_far": self.frac_far, "drift": self.drift,
                "potential": self.potential, "source": self.source, "phi_l1": self.phi_l1,
                "grad_phi_l1": self.grad_phi_l1, "stderr": self.stderr}


def _as_candidate(u, spec: ProblemSpec):
    if isinstance(u, GridFunction):
        if u.dim != spec.dim:
            raise ValueError("grid dimension does not match the problem")
        return u
    if isinstance(u, (int, float)):
        return parse_expression(repr(float(u)), spec.dim)
    if isinstance(u, str):
        return parse_expression(u, spec.dim)
    if isinstance(u, ExprAST):
        return u
    raise TypeError("u must be a GridFunction, an expression or a number")


class _Lattice:
    """Padded lattice around the domain with candidate values attached."""

    def __init__(self, u, spec: ProblemSpec, h: float, pad: float):
        dom = spec.domain
        self.h = h
        self.lo = np.asarray(dom.bounds[0], dtype=float)
        k0 = math.floor(-pad / h)
        self.k0 = k0
        hi = np.asarray(dom.bounds[1], dtype=float)
        self.shape = tuple(int(math.ceil((hi[i] - self.lo[i] + pad) / h)) - k0 + 1 for i in range(dom.dim))
        d = dom.dim
        mesh = np.meshgrid(*[self.lo[i] + h * (k0 + np.arange(self.shape[i])) for i in range(d)], indexing="ij")
        self.points = np.stack([m.ravel() for m in mesh], axis=1)
        self.inside = dom.contains(self.points)
        vals = np.empty(len(self.points))
        prog = compile_fields([spec.g] if isinstance(u, GridFunction) else [spec.g, u])
        out = ~self.inside
        gv = prog.eval_many(0, self.points[out])
        if not np.all(np.isfinite(gv)):
            raise EvaluationError("g cannot be evaluated on the exterior lattice")
        vals[out] = gv
        self.grid_pos = np.full(len(self.points), -1, dtype=np.int64)
        if isinstance(u, GridFunction):
            idx = u.lattice_index() - k0
            if np.any(idx < 0) or np.any(idx >= np.array(self.shape)):
                raise ValueError("grid points fall outside the quadrature lattice")
            flat = np.ravel_multi_index(tuple(idx.T), self.shape)
            if not np.allclose(self.points[flat], u.points, rtol=0, atol=1e-9 * h):
                raise ValueError("grid points are not on the lattice lo + k h")
            self.grid_pos[flat] = np.arange(len(flat))
            missing = self.inside & (self.grid_pos < 0)
            if np.any(missing):
                raise ValueError(f"u is undefined at {int(missing.sum())} interior lattice points")
            vals[flat] = u.values
        else:
            uv = prog.eval_many(1, self.points[self.inside])
            if not np.all(np.isfinite(uv)):
                raise EvaluationError("u cannot be evaluated on the interior lattice")
            vals[self.inside] = uv
        self.values = vals

    def flat(self, idx: np.ndarray) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.asarray(idx).T), self.shape)

    def index_of(self, pts: np.ndarray) -> np.ndarray:
        return np.rint((pts - self.lo) / self.h).astype(np.int64) - self.k0


def _offsets(d: int, h: float, R: float) -> tuple[np.ndarray, np.ndarray]:
    m = int(math.floor(R / h + 1e-9))
    ax = np.arange(-m, m + 1)
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    o = np.stack([g.ravel() for g in mesh], axis=1)
    dist = h * np.sqrt(np.sum(o * o, axis=1))
    keep = (dist > 0) & (dist <= R * (1 + 1e-12))
    return o[keep], dist[keep]


def _far_g_integral(spec: ProblemSpec, xs: np.ndarray, R: float, n_rad: int, n_ang: int) -> np.ndarray:
    """``int_{|z|>R} g(x + z) |z|^{-d-alpha} dz`` for each row of ``xs``."""
    d, alpha = spec.dim, spec.alpha
    gc = is_constant(spec.g)
    if gc is not None:
        return np.full(len(xs), gc * sphere_area(d) * R ** (-alpha) / alpha)
    s, ws = gauss_legendre(0.0, R ** (-alpha), n_rad)
    dirs, wd = sphere_rule(d, n_ang)
    r = s ** (-1.0 / alpha)
    offs = (r[:, None, None] * dirs[None, :, :]).reshape(-1, d)
    wts = (ws[:, None] * wd[None, :]).ravel() / alpha
    prog = compile_fields([spec.g])
    out = np.empty(len(xs))
    for i0 in range(0, len(xs), 256):
        chunk = xs[i0:i0 + 256]
        pts = (chunk[:, None, :] + offs[None, :, :]).reshape(-1, d)
        gv = prog.eval_many(0, pts)
        if not np.all(np.isfinite(gv)):
            raise EvaluationError("g cannot be evaluated in the far field")
        out[i0:i0 + 256] = gv.reshape(len(chunk), -1) @ wts
    return out


def residual_terms(u, phi: TestFunction, spec: ProblemSpec, q: QuadraturePolicy | None = None,
                   want_weights: bool = True) -> ResidualTerms:
    """All terms of ``R(phi)``; weights and propagated stderr when ``u`` is a grid."""
    q = q or QuadraturePolicy()
    u = _as_candidate(u, spec)
    dom = spec.domain
    d = spec.dim
    if phi.dim != d:
        raise ValueError("test function dimension does not match the problem")
    phi.check_inside(dom)
    h, delta, R = q.resolve(u, dom)
    lat = _Lattice(u, spec, h, pad=R + 2 * h)
    U = lat.values
    hd = h ** d
    nfull = len(U)

    # support lattice
    k_lo = np.ceil((phi.center - phi.width - lat.lo) / h - 1e-12).astype(np.int64) - lat.k0
    k_hi = np.floor((phi.center + phi.width - lat.lo) / h + 1e-12).astype(np.int64) - lat.k0
    mesh = np.meshgrid(*[np.arange(k_lo[i], k_hi[i] + 1) for i in range(d)], indexing="ij")
    sidx = np.stack([m.ravel() for m in mesh], axis=1)
    sflat = lat.flat(sidx)
    pv, pg = phi.value_and_grad(lat.points[sflat])
    keep = pv > 0
    sidx, sflat, pv, pg = sidx[keep], sflat[keep], pv[keep], pg[keep]
    phi_full = np.zeros(nfull)
    phi_full[sflat] = pv
    in_s = np.zeros(nfull, dtype=bool)
    in_s[sflat] = True

    w = {k: np.zeros(nfull) for k in ("gradient", "near", "mid", "far", "drift", "potential")}

    # first differences: D_i U(x) = cp U[ip] + cm U[im], one-sided next to the boundary
    def diff_stencil(i):
        e = np.zeros(d, dtype=np.int64)
        e[i] = 1
        fp = lat.flat(sidx + e)
        fm = lat.flat(sidx - e)
        ip_in = lat.inside[fp]
        im_in = lat.inside[fm]
        both = ip_in & im_in
        ip = np.where(both | ip_in, fp, sflat)
        im = np.where(both | im_in, fm, sflat)
        scale = np.where(both, 0.5 / h, np.where(ip_in | im_in, 1.0 / h, 0.0))
        return ip, im, scale

    bvals = None
    if spec.has_drift:
        prog = spec.program
        bvals = np.stack([prog.eval_many(i, lat.points[sflat]) for i in range(d)], axis=1)
    for i in range(d):
        ip, im, sc = diff_stencil(i)
        coef = spec.sigma * hd * pg[:, i] * sc
        np.add.at(w["gradient"], ip, coef)
        np.add.at(w["gradient"], im, -coef)
        if bvals is not None:
            coef = -hd * bvals[:, i] * pv * sc
            np.add.at(w["drift"], ip, coef)
            np.add.at(w["drift"], im, -coef)

    cv = spec.eval_many("c", lat.points[sflat])
    fv = spec.eval_many("f", lat.points[sflat])
    np.add.at(w["potential"], sflat, -hd * cv * pv)
    source = float(-hd * np.sum(fv * pv))

    far_const = 0.0
    if spec.a > 0:
        kappa = spec.a ** spec.alpha * frac_constant(d, spec.alpha)
        offs, dist = _offsets(d, h, R)
        ker = dist ** (-d - spec.alpha)
        near = dist < delta
        strides = np.array([int(np.prod(lat.shape[j + 1:])) for j in range(d)], dtype=np.int64)
        oflat = offs @ strides
        pref = 0.5 * kappa * hd * hd
        chunk = max(1, 2_000_000 // max(len(oflat), 1))
        for i0 in range(0, len(sflat), chunk):
            xf = sflat[i0:i0 + chunk]
            yf = xf[:, None] + oflat[None, :]
            m = np.where(in_s[yf], 1.0, 2.0)
            dphi = phi_full[xf][:, None] - phi_full[yf]
            cw = pref * m * dphi * ker[None, :]
            # d/dU_x and d/dU_y of (U_x - U_y) * cw
            for mask, key in ((near, "near"), (~near, "mid")):
                part = cw[:, mask]
                np.add.at(w[key], xf, part.sum(axis=1))
                np.add.at(w[key], yf[:, mask].ravel(), -part.ravel())
        tail = sphere_area(d) * R ** (-spec.alpha) / spec.alpha
        np.add.at(w["far"], sflat, kappa * hd * pv * tail)
        gfar = _far_g_integral(spec, lat.points[sflat], R, q.n_tail_radial, q.n_tail_angular)
        far_const = float(-kappa * hd * np.sum(pv * gfar))

    vals = {k: float(np.dot(v, U)) for k, v in w.items()}
    gn = np.sqrt(np.sum(pg * pg, axis=1))
    terms = ResidualTerms(
        gradient=vals["gradient"], frac_near=vals["near"], frac_mid=vals["mid"],
        frac_far=vals["far"] + far_const, drift=vals["drift"], potential=vals["potential"], source=source,
        phi_l1=float(hd * pv.sum()), grad_phi_l1=float(hd * gn.sum()))
    if isinstance(u, GridFunction) and want_weights:
        total = sum(w.values())
        grid_w = np.zeros(len(u.values))
        on_grid = lat.grid_pos >= 0
        grid_w[lat.grid_pos[on_grid]] = total[on_grid]
        terms.weights = grid_w
        terms.stderr = float(np.sqrt(np.sum((grid_w * u.stderr) ** 2)))
    return terms


def bilinear_E0(u, phi: TestFunction, spec: ProblemSpec, q: QuadraturePolicy | None = None) -> float:
    """Gradient plus fractional form minus the drift term, ``E0(u, phi)``."""
    return residual_terms(u, phi, spec, q, want_weights=False).e0


def residual(u, phi: TestFunction, spec: ProblemSpec, q: QuadraturePolicy | None = None) -> float:
    """``E0(u, phi) - int c u phi - int f phi``; zero for a weak solution."""
    return residual_terms(u, phi, spec, q, want_weights=False).residual


@dataclass
class VerificationReport:
    bumps: list[dict]
    max_normalized: float
    threshold_constant: float
    c_hat: float
    h: float
    dt: float
    passed: bool
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "max_normalized_residual": self.max_normalized,
                "threshold_constant": self.threshold_constant, "c_hat": self.c_hat, "h": self.h, "dt": self.dt,
                "settings": self.settings, "bumps": self.bumps}


def verify_solution(u, spec: ProblemSpec, bump_set=None, q: QuadraturePolicy | None = None,
                    C: float = 0.1, dt: float | None = None) -> VerificationReport:
    """Check ``|R(phi)| / (||phi||_1 + ||grad phi||_1) <= C (s + h + dt)`` for every bump.

    ``s`` is the normalised Monte Carlo standard error of ``R(phi)``
    propagated linearly from the grid stderr (0 for analytic ``u``), ``h`` the
    lattice spacing and ``dt`` the time step of the solve (0 for analytic
    ``u``).  ``c_hat`` is the smallest ``C`` that would have passed.
    """
    q = q or QuadraturePolicy()
    cand = _as_candidate(u, spec)
    bumps = list(bump_set) if bump_set is not None else default_bumps(spec.domain)
    if not bumps:
        raise ValueError("bump_set is empty")
    h, delta, R = q.resolve(cand, spec.domain)
    if dt is None:
        dt = cand.dt if isinstance(cand, GridFunction) and math.isfinite(cand.dt) else 0.0
    rows = []
    c_hat = 0.0
    ok = True
    for b in bumps:
        t = residual_terms(cand, b, spec, q)
        norm = t.normalization
        r = abs(t.residual) / norm
        s = t.stderr / norm
        scale = s + h + dt
        thr = C * scale
        c_hat = max(c_hat, r / scale)
        passed = r <= thr
        ok &= passed
        rows.append({"center": b.center.tolist(), "width": b.width, **t.to_dict(), "normalization": norm,
                     "normalized_residual": r, "normalized_stderr": s, "threshold": thr, "pass": bool(passed)})
    return VerificationReport(rows, max(row["normalized_residual"] for row in rows), C, c_hat, h, dt, bool(ok),
                              {"h_q": h, "delta": delta, "R": R})


class ExtendedCandidate:
    """``u`` inside the domain, ``g`` outside, as a callable on points; rays from
    an interior point cross the (convex) boundary once, which is reported as a
    quadrature breakpoint."""

    def __init__(self, u, spec: ProblemSpec):
        self.spec = spec
        self.prog = compile_fields([_as_candidate(u, spec), spec.g])

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        k = 0 if self.spec.domain.contains(x) else 1
        v = self.prog.eval(k, x)
        if not math.isfinite(v):
            raise EvaluationError(f"candidate cannot be evaluated at {x.tolist()}")
        return v

    def breakpoints(self, x, theta) -> list[float]:
        dom = self.spec.domain
        if not dom.contains(x):
            return []
        out = []
        for sgn in (1.0, -1.0):
            f = lambda r: dom.signed_distance(x + sgn * r * theta)  # noqa: E731
            out.append(optimize.brentq(f, 0.0, 2.0 * dom.diameter, xtol=1e-14))
        return out


def fractional_laplacian_at(u, x, alpha: float, d: int = 1, n_angular: int = 16) -> float:
    """Pointwise ``Delta^{alpha/2} u(x)`` by adaptive radial quadrature of the
    second-difference form ``(A / 2) int (u(x + z) + u(x - z) - 2 u(x)) |z|^{-d-alpha} dz``.

    ``u`` is a callable on points of R^d (it must already include its exterior
    values).  Kinks of ``u`` along a ray can be passed through
    ``u.breakpoints(x, theta)`` when available.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (d,):
        raise ValueError(f"x must have {d} coordinates")
    dirs, wd = sphere_rule(d, n_angular)
    ux = float(u(x))
    total = 0.0
    for theta, wt in zip(dirs, wd):
        def integrand(r, theta=theta):
            return (float(u(x + r * theta)) + float(u(x - r * theta)) - 2.0 * ux) * r ** (-1.0 - alpha)

        brk = sorted(set(getattr(u, "breakpoints", lambda *_: [])(x, theta)))
        edges = [0.0] + [b for b in brk if b > 0] + [np.inf]
        acc = 0.0
        for a_, b_ in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(integrand, a_, b_, limit=200, epsabs=1e-12, epsrel=1e-10)
            acc += val
        total += wt * acc
    # each direction pair was integrated twice over the symmetric rule
    return 0.5 * frac_constant(d, alpha) * total


__all__ = ["TestFunction", "QuadraturePolicy", "ResidualTerms", "VerificationReport", "default_bumps",
           "ExtendedCandidate", "residual_terms", "bilinear_E0", "residual", "verify_solution", "fractional_laplacian_at"]
