"""Problem statement, the fractional-Laplacian constant and coefficient diagnostics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .expr import EvaluationError, ExprAST, Num, compile_fields, is_constant, parse_expression
from .geometry import Domain
from .quadrature import gauss_legendre, sphere_rule

log = logging.getLogger(__name__)


def frac_constant(d: int, alpha: float) -> float:
    """Normalising constant ``A(d, -alpha)`` of the fractional Laplacian.

    ``Delta^{alpha/2} u(x) = A(d,-alpha) p.v. int (u(y) - u(x)) / |x-y|^{d+alpha} dy``
    with ``A = alpha 2^{alpha-1} pi^{-d/2} Gamma((d+alpha)/2) / Gamma(1-alpha/2)``.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")
    return (alpha * 2.0 ** (alpha - 1.0) * math.pi ** (-d / 2.0)
            * math.gamma((d + alpha) / 2.0) / math.gamma(1.0 - alpha / 2.0))


def _as_ast(v, dim: int) -> ExprAST:
    if isinstance(v, ExprAST):
        return v
    if isinstance(v, (int, float)):
        return parse_expression(repr(float(v)), dim)
    return parse_expression(str(v), dim)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """``(sigma Delta + a^alpha Delta^{alpha/2} + b.grad + c) u + f = 0`` in D, ``u = g`` on D^c.

    Coefficients may be given as expression strings or ASTs.  ``sigma`` is 1
    for the full operator and 0 to switch the Laplacian off (validation
    mode).  The drift is clamped to zero off the domain.
    """

    domain: Domain
    alpha: float = 1.0
    a: float = 1.0
    sigma: int = 1
    b: tuple = None
    c: ExprAST = "0"
    f: ExprAST = "0"
    g: ExprAST = "0"
    g_bound: float | None = None
    kato_warn_threshold: float = 1.0
    kato_p: float | None = None
    texts: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        d = self.domain.dim
        if not 0.0 < self.alpha < 2.0:
            raise ValueError(f"alpha must lie in (0, 2), got {self.alpha}")
        if self.a < 0:
            raise ValueError("a must be nonnegative")
        if self.sigma not in (0, 1):
            raise ValueError("sigma must be 0 or 1")
        if self.a == 0 and self.sigma == 0:
            raise ValueError("a = 0 and sigma = 0 leaves no driving noise")
        if self.kato_warn_threshold <= 0:
            raise ValueError("kato_warn_threshold must be positive")
        b = self.b if self.b is not None else ["0"] * d
        if isinstance(b, (str, ExprAST)):
            b = [b]
        if len(b) != d:
            raise ValueError(f"drift needs {d} components, got {len(b)}")
        texts = {"b": [str(v) for v in b], "c": str(self.c), "f": str(self.f), "g": str(self.g)}
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("b", tuple(_as_ast(v, d) for v in b))
        for k in ("c", "f", "g"):
            set_(k, _as_ast(getattr(self, k), d))
        set_("texts", texts)
        if self.g_bound is None:
            gc = is_constant(self.g)
            if gc is None:
                raise ValueError("a bound for g (g_bound) is required when g is not constant")
            set_("g_bound", abs(gc))
        if not (self.g_bound >= 0 and math.isfinite(self.g_bound)):
            raise ValueError("g_bound must be finite and nonnegative")
        set_("alpha", float(self.alpha))
        set_("a", float(self.a))

    @property
    def dim(self) -> int:
        return self.domain.dim

    @cached_property
    def program(self):
        """Bytecode for ``[b_1..b_d, c, f, g]``."""
        return compile_fields(list(self.b) + [self.c, self.f, self.g])

    @property
    def field_index(self) -> dict:
        d = self.dim
        return {"c": d, "f": d + 1, "g": d + 2}

    @cached_property
    def has_drift(self) -> bool:
        return any(is_constant(v) != 0.0 for v in self.b)

    def drift_at(self, x) -> np.ndarray:
        """``b(x)``, zero for ``x`` outside the domain."""
        x = np.asarray(x, dtype=float)
        if not self.domain.contains(x):
            return np.zeros(self.dim)
        return np.array([self.program.eval(i, x) for i in range(self.dim)])

    def eval_many(self, name: str, points) -> np.ndarray:
        """Vectorised evaluation of ``c``, ``f`` or ``g``; raises on evaluation errors."""
        vals = self.program.eval_many(self.field_index[name], points)
        if not np.all(np.isfinite(vals)):
            raise EvaluationError(f"{name} cannot be evaluated at some points")
        return vals

    def with_fields(self, **kw) -> "ProblemSpec":
        """Copy with some coefficients replaced."""
        base = dict(domain=self.domain, alpha=self.alpha, a=self.a, sigma=self.sigma, b=self.b,
                    c=self.c, f=self.f, g=self.g, g_bound=self.g_bound,
                    kato_warn_threshold=self.kato_warn_threshold, kato_p=self.kato_p)
        if "g" in kw and "g_bound" not in kw:
            base["g_bound"] = None
        base.update(kw)
        return ProblemSpec(**base)

    def to_config(self) -> dict:
        return {
            "dim": self.dim, "alpha": self.alpha, "a": self.a, "sigma": self.sigma,
            "domain": self.domain.to_config(),
            "b": [str(v) for v in self.b], "c": str(self.c), "f": str(self.f), "g": str(self.g),
            "g_bound": self.g_bound, "kato_warn_threshold": self.kato_warn_threshold,
            "kato_p": self.kato_p,
        }


# -- Kato class diagnostic ----------------------------------------------------


@dataclass(frozen=True)
class KatoProfile:
    radii: np.ndarray
    values: np.ndarray
    sample_points: np.ndarray


def _kato_kernel(s: np.ndarray, d: int) -> np.ndarray:
    # radial weight s^{d-1} k_d(s); log kernel clipped at 0 beyond s = 1 so
    # the profile stays monotone in r
    if d >= 3:
        return s
    if d == 2:
        return s * np.maximum(-np.log(s), 0.0)
    return np.ones_like(s)


def kato_profile(field_ast: ExprAST, domain: Domain, radii, lattice_h: float,
                 n_radial: int = 8, n_angular: int = 16) -> KatoProfile:
    """``sup_x int_{|y-x|<=r} k_d(x-y) |phi(y)| 1_D(y) dy`` for each radius.

    The radial integral is split at every requested radius, so the values are
    cumulative sums of nonnegative pieces and hence monotone in ``r``.
    """
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0) or np.any(np.diff(radii) >= 0):
        raise ValueError("radii must be positive and strictly decreasing")
    if lattice_h <= 0:
        raise ValueError("lattice_h must be positive")
    d = domain.dim
    axes = domain.lattice_axes(lattice_h, pad=float(radii[0]))
    mesh = np.meshgrid(*axes, indexing="ij")
    xs = np.stack([m.ravel() for m in mesh], axis=1)
    if len(xs) == 0:
        raise ValueError("empty lattice")
    prog = compile_fields([field_ast])
    dirs, wdir = sphere_rule(d, n_angular)
    edges = np.r_[0.0, radii[::-1]]
    pieces = np.zeros((len(edges) - 1, len(xs)))
    for k, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        s, ws = gauss_legendre(lo, hi, n_radial)
        wrad = ws * _kato_kernel(s, d)
        offs = (s[:, None, None] * dirs[None, :, :]).reshape(-1, d)
        wts = (wrad[:, None] * wdir[None, :]).ravel()
        for start in range(0, len(xs), 512):
            chunk = xs[start:start + 512]
            flat = (chunk[:, None, :] + offs[None, :, :]).reshape(-1, d)
            vals = prog.eval_many(0, flat)
            if not np.all(np.isfinite(vals)):
                raise EvaluationError("field cannot be evaluated on the Kato lattice")
            vals = (np.abs(vals) * domain.contains(flat)).reshape(len(chunk), len(offs))
            pieces[k, start:start + len(chunk)] = vals @ wts
    # cumulative over shells from the inside out, so monotone in r
    acc = np.cumsum(pieces, axis=0).max(axis=1)
    return KatoProfile(radii=radii, values=np.array(acc[::-1]), sample_points=xs)


# -- validation ---------------------------------------------------------------


def lp_norm_positive_part(field_ast: ExprAST, domain: Domain, p: float, h: float) -> float:
    """Midpoint-lattice estimate of ``||phi^+||_{L^p(D)}``."""
    pts = domain.grid_points(h)
    vals = compile_fields([field_ast]).eval_many(0, pts)
    if not np.all(np.isfinite(vals)):
        raise EvaluationError("field cannot be evaluated on the lattice")
    q = max(p, 1.0)
    return float((np.sum(np.maximum(vals, 0.0) ** q) * h ** domain.dim) ** (1.0 / q))


def validate_spec(spec: ProblemSpec, probe_n: int = 40) -> list[str]:
    """Advisory checks; never raises for coefficient issues.

    * the positive part of ``c`` measured in ``L^{p v 1}(D)`` against
      ``kato_warn_threshold`` (the smallness constant is not computable, so
      this is a user heuristic)
    * the declared bound of ``g`` on an exterior probe lattice
    * nonzero drift outside the domain, which is clamped to zero
    """
    warns: list[str] = []
    dom = spec.domain
    d = dom.dim
    h = dom.diameter / probe_n
    p = spec.kato_p if spec.kato_p is not None else float(d)
    try:
        norm = lp_norm_positive_part(spec.c, dom, p, h)
        if norm > spec.kato_warn_threshold:
            warns.append(f"c: estimated ||c+||_L{max(p, 1.0):g}(D) = {norm:.6g} exceeds "
                         f"kato_warn_threshold {spec.kato_warn_threshold:g}; the probabilistic "
                         "representation may fail to be finite")
    except EvaluationError as exc:
        warns.append(f"c: {exc}")

    axes = dom.lattice_axes(h, pad=0.5 * dom.diameter)
    mesh = np.meshgrid(*axes, indexing="ij")
    probe = np.stack([m.ravel() for m in mesh], axis=1)
    outside = probe[~dom.contains(probe)]
    prog = spec.program
    gv = prog.eval_many(spec.field_index["g"], outside)
    if not np.all(np.isfinite(gv)):
        warns.append("g: evaluation error on the exterior probe lattice")
    elif np.max(np.abs(gv), initial=0.0) > spec.g_bound * (1 + 1e-12) + 1e-300:
        warns.append(f"g: |g| reaches {np.max(np.abs(gv)):.6g} on the probe lattice, above the "
                     f"declared bound {spec.g_bound:g}")
    for i in range(d):
        bv = prog.eval_many(i, outside)
        if np.any(bv != 0.0):
            warns.append(f"b{i + 1}: nonzero outside the domain; clamped to 0 on the complement")
            break
    for w in warns:
        log.warning(w)
    return warns


__all__ = ["ProblemSpec", "frac_constant", "KatoProfile", "kato_profile", "validate_spec",
           "lp_norm_positive_part", "Num"]
