"""Euler simulation of the jump diffusion up to its exit from the domain.

One step from ``(t, x)`` does, in order:

1. left-point accumulation: ``source += e(t) f(x) dt`` then ``log e += c(x) dt``
2. drift ``x += b(x) dt`` (``b`` is zero off the coefficient domain)
3. diffusion ``x += sigma * N(0, 2 dt)``; if the point left the domain, the
   segment from the start of the step is bisected to the boundary and the exit
   time is interpolated inside the step (continuous exit)
4. jump ``x += a Y_dt``; landing outside is a jump exit at ``t + dt`` and the
   landing point is kept exactly, since the exterior data lives on all of D^c.

Path ``i`` of a batch always reads stream ``stream_start + i`` from block 0,
so results do not depend on how a batch is split across workers.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .expr import OP_CONST, vm_eval
from .geometry import Domain, bisect_exit, sdf
from .model import ProblemSpec
from .sampler import RngStream, normal_pair, positive_stable

RUNNING, CONTINUOUS, JUMP, CENSORED, POISONED = -1, 0, 1, 2, 3
KIND_NAMES = {CONTINUOUS: "continuous", JUMP: "jump", CENSORED: "censored", POISONED: "poisoned"}
EVENT_STEP = 4

CHUNK = 2048


@dataclass(frozen=True)
class PathConfig:
    dt: float = 1e-3
    t_max: float = 20.0
    hit_tol: float | None = None  # default 1e-10 * diameter
    record_trace: bool = False

    def __post_init__(self):
        if not 0 < self.dt < self.t_max:
            raise ValueError("need 0 < dt < t_max")
        if self.hit_tol is not None and self.hit_tol <= 0:
            raise ValueError("hit_tol must be positive")

    def tol_for(self, domain: Domain) -> float:
        if self.hit_tol is not None:
            return self.hit_tol
        return 1e-10 * domain.diameter

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))


@dataclass
class ExitRecord:
    tau: float
    exit_point: np.ndarray
    exit_kind: str
    log_weight: float
    source_integral: float
    steps: int
    sup_displacement: float
    trace: np.ndarray | None = None


@dataclass
class PathState:
    t: float
    x: np.ndarray
    log_weight: float = 0.0
    source_integral: float = 0.0


@njit(cache=True, nogil=True)
def _write_trace(trace, row, t, x, logw, src, event):
    if row < trace.shape[0]:
        d = x.shape[0]
        trace[row, 0] = t
        for i in range(d):
            trace[row, 1 + i] = x[i]
        trace[row, d + 1] = logw
        trace[row, d + 2] = src
        trace[row, d + 3] = event


@njit(cache=True, nogil=True)
def run_paths(x0, t0, logw0, src0, n, stream0, ctr0, seed, dt, nmax, t_max, hit_tol, sigma, a, alpha,
              has_drift, dom, cdom, code, arg, table, stack_size,
              tau, exitp, kinds, logws, srcs, steps, sups, payoffs, ctrs, trace):
    # One flat loop on purpose: every extra call layer that forwards arrays
    # pays reference-count traffic, which dominated the step cost.
    d = x0.shape[0]
    kind, p1, p2, nrm = dom
    ckind, cp1, cp2, cnrm = cdom
    x = np.empty(d)
    y = np.empty(d)
    z = np.empty(d)
    stack = np.empty(stack_size)
    nf = table.shape[0]
    isconst = np.zeros(nf, dtype=np.bool_)
    cval = np.zeros(nf)
    for k in range(nf):
        if table[k, 1] - table[k, 0] == 1 and code[table[k, 0]] == OP_CONST:
            isconst[k] = True
            cval[k] = arg[table[k, 0]]
    ci = d
    fi = d + 1
    gi = d + 2
    bscale = math.sqrt(2.0 * dt) * sigma
    beta = 0.5 * alpha
    sub_scale = dt ** (1.0 / beta)
    for p in range(n):
        stream = np.uint64(stream0) + np.uint64(p)
        for i in range(d):
            x[i] = x0[i]
        t = t0
        logw = logw0
        src = src0
        ctr = ctr0
        sup2 = 0.0
        status = CENSORED
        texit = t_max
        k = 0
        tracing = p == 0 and trace.shape[0] > 0
        if tracing:
            _write_trace(trace, 0, t, x, logw, src, EVENT_STEP)
        while k < nmax:
            k += 1
            # 1. left-point weights
            cv = cval[ci] if isconst[ci] else vm_eval(code, arg, table[ci, 0], table[ci, 1], x, stack)
            fv = cval[fi] if isconst[fi] else vm_eval(code, arg, table[fi, 0], table[fi, 1], x, stack)
            if not (cv - cv == 0.0 and fv - fv == 0.0):
                status = POISONED
                texit = t
                break
            src += math.exp(logw) * fv * dt
            logw += cv * dt
            for i in range(d):
                y[i] = x[i]
            moved = False
            # 2. drift, clamped to the coefficient domain
            if has_drift and sdf(ckind, cp1, cp2, cnrm, x) < 0.0:
                for i in range(d):
                    bi = cval[i] if isconst[i] else vm_eval(code, arg, table[i, 0], table[i, 1], x, stack)
                    if not bi - bi == 0.0:
                        status = POISONED
                    y[i] += bi * dt
                if status == POISONED:
                    texit = t
                    break
                moved = True
            # 3. diffusion and continuous exit
            if sigma > 0.0:
                for i in range(0, d, 2):
                    n1, n2 = normal_pair(seed, stream, ctr)
                    ctr += 1
                    y[i] += bscale * n1
                    if i + 1 < d:
                        y[i + 1] += bscale * n2
                moved = True
            if moved and sdf(kind, p1, p2, nrm, y) >= 0.0:
                theta = bisect_exit(kind, p1, p2, nrm, x, y, hit_tol, z)
                status = CONTINUOUS
                texit = t + theta * dt
                break
            # 4. jump; the landing point is the exit point
            if a > 0.0:
                s, ctr = positive_stable(seed, stream, ctr, beta)
                jscale = a * math.sqrt(2.0 * sub_scale * s)
                for i in range(0, d, 2):
                    n1, n2 = normal_pair(seed, stream, ctr)
                    ctr += 1
                    y[i] += jscale * n1
                    if i + 1 < d:
                        y[i + 1] += jscale * n2
                if sdf(kind, p1, p2, nrm, y) >= 0.0:
                    for i in range(d):
                        z[i] = y[i]
                    status = JUMP
                    texit = t + dt
                    break
            disp2 = 0.0
            for i in range(d):
                x[i] = y[i]
                disp2 += (y[i] - x0[i]) ** 2
            if disp2 > sup2:
                sup2 = disp2
            t = t0 + k * dt
            if tracing:
                _write_trace(trace, k, t, x, logw, src, EVENT_STEP)
        if status == CONTINUOUS or status == JUMP:
            disp2 = 0.0
            for i in range(d):
                disp2 += (z[i] - x0[i]) ** 2
            if disp2 > sup2:
                sup2 = disp2
        else:
            for i in range(d):
                z[i] = x[i]
        pay = np.nan
        if status == CENSORED:
            pay = src
        elif status != POISONED:
            gv = cval[gi] if isconst[gi] else vm_eval(code, arg, table[gi, 0], table[gi, 1], z, stack)
            if gv - gv == 0.0:
                pay = math.exp(logw) * gv + src
            else:
                status = POISONED
        if tracing:
            _write_trace(trace, k if status != CENSORED else k + 1, texit, z, logw, src, status)
        tau[p] = texit
        for i in range(d):
            exitp[p, i] = z[i]
        kinds[p] = status
        logws[p] = logw
        srcs[p] = src
        steps[p] = k
        sups[p] = math.sqrt(sup2)
        payoffs[p] = pay
        ctrs[p] = ctr


@dataclass
class PathBatch:
    """Column-wise results for consecutive streams ``stream_start ...``."""

    tau: np.ndarray
    exit_points: np.ndarray
    kinds: np.ndarray
    log_weight: np.ndarray
    source_integral: np.ndarray
    steps: np.ndarray
    sup_displacement: np.ndarray
    payoff: np.ndarray
    counters: np.ndarray

    def __len__(self):
        return len(self.tau)

    def record(self, i: int) -> ExitRecord:
        return ExitRecord(float(self.tau[i]), self.exit_points[i].copy(), KIND_NAMES[int(self.kinds[i])],
                          float(self.log_weight[i]), float(self.source_integral[i]), int(self.steps[i]),
                          float(self.sup_displacement[i]))


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get("NONLOCAL_FK_THREADS", "1"))
    return max(1, int(workers))


def simulate_paths(spec: ProblemSpec, x0, n: int, cfg: PathConfig, seed: int = 0, stream_start: int = 0,
                   workers: int | None = 1, exit_domain: Domain | None = None, counter: int = 0,
                   trace: np.ndarray | None = None) -> PathBatch:
    """Simulate ``n`` independent paths from ``x0``.

    ``exit_domain`` replaces the killing domain (the drift is still clamped to
    ``spec.domain``); used by the free-process and displacement diagnostics.
    """
    x0 = np.ascontiguousarray(x0, dtype=float).ravel()
    d = spec.dim
    if x0.shape != (d,):
        raise ValueError(f"x0 must have {d} coordinates")
    dom = exit_domain if exit_domain is not None else spec.domain
    if not dom.contains(x0):
        raise ValueError("starting point must lie inside the domain")
    prog = spec.program
    out = PathBatch(np.empty(n), np.empty((n, d)), np.empty(n, dtype=np.int64), np.empty(n), np.empty(n),
                    np.empty(n, dtype=np.int64), np.empty(n), np.empty(n), np.empty(n, dtype=np.int64))
    tr = trace if trace is not None else np.zeros((0, d + 4))
    common = (seed, cfg.dt, cfg.n_steps, cfg.t_max, cfg.tol_for(dom), float(spec.sigma), spec.a, spec.alpha,
              spec.has_drift, dom.packed, spec.domain.packed, prog.code, prog.arg, prog.table, prog.stack_size)

    def work(lo: int) -> None:
        hi = min(n, lo + CHUNK)
        run_paths(x0, 0.0, 0.0, 0.0, hi - lo, stream_start + lo, counter, *common,
                  out.tau[lo:hi], out.exit_points[lo:hi], out.kinds[lo:hi], out.log_weight[lo:hi],
                  out.source_integral[lo:hi], out.steps[lo:hi], out.sup_displacement[lo:hi],
                  out.payoff[lo:hi], out.counters[lo:hi], tr if lo == 0 else tr[:0])

    starts = range(0, n, CHUNK)
    nw = resolve_workers(workers)
    if nw == 1 or n <= CHUNK:
        for lo in starts:
            work(lo)
    else:
        with ThreadPoolExecutor(max_workers=nw) as ex:
            list(ex.map(work, starts))
    return out


def simulate_exit(spec: ProblemSpec, x0, cfg: PathConfig, rng: RngStream) -> ExitRecord:
    """One path from ``x0`` on ``rng``'s stream, starting at its current counter."""
    d = spec.dim
    trace = np.zeros((cfg.n_steps + 2, d + 4)) if cfg.record_trace else None
    batch = simulate_paths(spec, x0, 1, cfg, seed=rng.seed, stream_start=rng.stream_id,
                           counter=rng.counter, trace=trace)
    rng.counter = int(batch.counters[0])
    rec = batch.record(0)
    if trace is not None:
        rows = rec.steps + (2 if rec.exit_kind == "censored" else 1)
        rec.trace = trace[:rows]
    return rec


def step(state: PathState, spec: ProblemSpec, cfg: PathConfig, rng: RngStream) -> PathState | ExitRecord:
    """One Euler step; returns the next state or an :class:`ExitRecord` on exit."""
    x = np.ascontiguousarray(state.x, dtype=float)
    if not spec.domain.contains(x):
        raise ValueError("state must lie inside the domain")
    if state.t + cfg.dt > cfg.t_max * (1 + 1e-12):
        raise ValueError("step would pass the censoring horizon")
    d = spec.dim
    prog = spec.program
    t_end = state.t + cfg.dt
    out = PathBatch(np.empty(1), np.empty((1, d)), np.empty(1, dtype=np.int64), np.empty(1), np.empty(1),
                    np.empty(1, dtype=np.int64), np.empty(1), np.empty(1), np.empty(1, dtype=np.int64))
    run_paths(x, float(state.t), float(state.log_weight), float(state.source_integral), 1, rng.stream_id,
              rng.counter, rng.seed, cfg.dt, 1, t_end, cfg.tol_for(spec.domain), float(spec.sigma), spec.a,
              spec.alpha, spec.has_drift, spec.domain.packed, spec.domain.packed, prog.code, prog.arg,
              prog.table, prog.stack_size, out.tau, out.exit_points, out.kinds, out.log_weight,
              out.source_integral, out.steps, out.sup_displacement, out.payoff, out.counters, np.zeros((0, d + 4)))
    rng.counter = int(out.counters[0])
    kind = int(out.kinds[0])
    point = out.exit_points[0].copy()
    if kind == CENSORED:
        # the single step ran to completion without exiting
        return PathState(t_end, point, float(out.log_weight[0]), float(out.source_integral[0]))
    return ExitRecord(float(out.tau[0]), point, KIND_NAMES[kind], float(out.log_weight[0]),
                      float(out.source_integral[0]), 1, float(np.linalg.norm(point - x)))


def feynman_kac_payoff(rec: ExitRecord, spec: ProblemSpec) -> float:
    """``e(tau) g(X_tau) + int_0^tau e(s) f(X_s) ds`` for one exited path."""
    if rec.exit_kind == "censored":
        raise ValueError("censored paths have no exit payoff; the estimator applies the censor policy")
    if rec.exit_kind == "poisoned":
        raise ValueError("poisoned path")
    from .expr import eval_field

    return math.exp(rec.log_weight) * eval_field(spec.g, rec.exit_point) + rec.source_integral


def write_trace_csv(rec: ExitRecord, path) -> None:
    """Trace rows ``t, x1..xd, log_weight, source_integral, event``."""
    if rec.trace is None:
        raise ValueError("record has no trace; simulate with record_trace=True")
    d = rec.trace.shape[1] - 4
    names = {EVENT_STEP: "step", **KIND_NAMES}
    with open(path, "w") as fh:
        fh.write(",".join(["t"] + [f"x{i + 1}" for i in range(d)] + ["log_weight", "source_integral", "event"]) + "\n")
        for row in rec.trace:
            fh.write(",".join(repr(float(v)) for v in row[:-1]) + f",{names[int(row[-1])]}\n")
