"""End-to-end acceptance criteria at their stated sizes and tolerances.

Run alone with ``pytest -m acceptance -s``; each criterion prints one
PASS/FAIL line, repeated in the terminal summary.
"""

import math

import numpy as np
import pytest
from scipy import stats

from nonlocal_fk.estimator import (
    boundary_continuity_probe, calibrate_t_max, default_start_lattice, empirical_density, exit_statistics,
    small_time_displacement, solve_grid, solve_point, strictly_decreasing,
)
from nonlocal_fk.geometry import Ball, Box
from nonlocal_fk.model import ProblemSpec
from nonlocal_fk.pathsim import PathConfig, simulate_paths
from nonlocal_fk.sampler import RngStream, stable_increment
from nonlocal_fk.weakform import ExtendedCandidate, fractional_laplacian_at, verify_solution

pytestmark = pytest.mark.acceptance

DISC = Ball([0.0, 0.0], 1.0)
INTERVAL = Box([-1.0], [1.0])
# threshold constant for criterion 5, fixed from a calibration run (see the decisions ledger)
C_WEAK = 0.1


def test_1_constant_identity(criterion):
    ok, worst = True, []
    for sigma, a, alpha in [(1, 1.0, 1.0), (0, 1.0, 0.5), (1, 0.0, 1.0), (1, 2.0, 1.7)]:
        spec = ProblemSpec(DISC, sigma=sigma, a=a, alpha=alpha, g="1")
        b = simulate_paths(spec, [0.3, -0.4], 20000, PathConfig(dt=1e-3), seed=1)
        est = solve_point(spec, [0.3, -0.4], 20000, PathConfig(dt=1e-3), seed=1)
        ok &= bool(np.all(b.payoff == 1.0)) and est.mean == 1.0 and est.stderr == 0.0
        worst.append(float(np.max(np.abs(b.payoff - 1.0))))
    criterion(1, "constant identity", ok, f"max |payoff - 1| = {max(worst):g}")


def test_2_feynman_kac_identity(criterion):
    dt, n = 1e-3, 10 ** 5
    ok, parts = True, []
    for lam in (0.5, 1.0, 2.0):
        spec = ProblemSpec(DISC, a=1.0, alpha=1.0, c=f"-{lam}", f=f"{lam}", g="1")
        e1 = solve_point(spec, [0.0, 0.0], n, PathConfig(dt=dt), seed=2)
        e2 = solve_point(spec, [0.0, 0.0], n, PathConfig(dt=dt / 2), seed=2)
        within = abs(e1.mean - 1) <= 3 * e1.stderr + 5 * dt
        ratio = (e2.mean - 1) / (e1.mean - 1)
        ok &= within and 0.35 <= ratio <= 0.65
        parts.append(f"lam={lam:g}: dev {e1.mean - 1:.2e} ratio {ratio:.3f}")
    criterion(2, "Feynman-Kac identity", ok, "; ".join(parts))


def test_3_harmonic_oracle(criterion):
    dt = 1e-4
    spec = ProblemSpec(DISC, a=0.0, g="max(-1, min(1, x1))", g_bound=1.0)
    u = solve_point(spec, [0.3, 0.0], 2 * 10 ** 5, PathConfig(dt=dt), seed=3)
    occ = ProblemSpec(DISC, a=0.0, f="1", g="0")
    tau = solve_point(occ, [0.0, 0.0], 2 * 10 ** 4, PathConfig(dt=dt), seed=3)
    ok_u = abs(u.mean - 0.3) <= 3 * u.stderr + 0.01
    ok_t = abs(tau.mean - 0.25) <= 3 * tau.stderr + 0.01
    criterion(3, "harmonic oracle", ok_u and ok_t,
              f"u(0.3,0) = {u.mean:.4f} +- {u.stderr:.4f}; E tau(0) = {tau.mean:.4f} +- {tau.stderr:.4f}")


def test_4_fractional_oracle(criterion):
    spec = ProblemSpec(INTERVAL, sigma=0, a=1.0, alpha=1.0, f="1", g="0")
    lap = fractional_laplacian_at(ExtendedCandidate("sqrt(1 - x1^2)", spec), [0.0], 1.0, 1)
    ok_q = abs(lap + 1.0) <= 0.01
    est = solve_point(spec, [0.0], 10 ** 5, PathConfig(dt=1e-3), seed=4) if ok_q else None
    ok_mc = est is not None and abs(est.mean - 1.0) <= 3 * est.stderr + 0.02
    detail = f"Delta^(1/2) sqrt(1-x^2) at 0 = {lap:.5f}"
    if est is not None:
        detail += f"; u(0) = {est.mean:.4f} +- {est.stderr:.4f}"
    criterion(4, "fractional oracle", ok_q and ok_mc, detail)


def test_5_weak_form_certification(criterion):
    # dt = 5e-3 rather than 1e-3 keeps the grid solve inside the one-hour budget on one core
    dt, h, n = 5e-3, 0.05, 5 * 10 ** 4
    spec = ProblemSpec(DISC, sigma=1, a=1.0, alpha=1.0, b=["0.5", "0"], c="-0.2", f="1", g="0")
    grid, _ = solve_grid(spec, h, n, PathConfig(dt=dt), seed=5)
    rep = verify_solution(grid, spec, C=C_WEAK, dt=dt)
    bad = verify_solution(grid.with_values(grid.values + 0.1), spec, C=C_WEAK, dt=dt)
    criterion(5, "weak-form certification", rep.passed and not bad.passed,
              f"C = {C_WEAK:g}, C_hat = {rep.c_hat:.4f}, corrupted C_hat = {bad.c_hat:.4f}, "
              f"max stderr {grid.stderr.max():.2e}")


def test_6_heat_kernel_sandwich(criterion):
    free = ProblemSpec(Box([-1.0], [1.0]), sigma=1, a=1.0, alpha=1.0)
    rep = empirical_density(free, 0.1, [0.0], n=10 ** 6, dt=1e-3, seed=6)
    ctl = rep.control
    ok = rep.satisfiable and rep.violations == 0 and rep.n_checked > 0 and ctl["passed"]
    criterion(6, "heat-kernel sandwich", ok,
              f"violations {rep.violations}/{rep.n_checked}, control max rel error {ctl['max_rel_error']:.3f} "
              f"on {ctl['heavy_bins']} bins")


def test_7_exit_time_tail(criterion):
    spec = ProblemSpec(DISC, sigma=1, a=1.0, alpha=1.0)
    cfg = PathConfig(dt=1e-3)
    t_max, fit = calibrate_t_max(spec, [0.0, 0.0], 2 * 10 ** 5, cfg, seed=7, t_min=1.0)
    n = 10 ** 6
    st = exit_statistics(spec, [0.0, 0.0], n, PathConfig(dt=1e-3, t_max=t_max), seed=70, t_min=1.0)
    frac = st.n_censored / n
    ok = fit is not None and fit.r_squared > 0.9 and st.survival is not None and st.survival.r_squared > 0.9
    ok = ok and frac < 1e-3
    criterion(7, "exit-time tail", ok,
              f"theta_2 = {st.survival.rate:.3f}, R^2 = {st.survival.r_squared:.4f}, t_max = {t_max:.2f}, "
              f"censored {frac:.1e}")


def test_8_small_time_displacement(criterion):
    spec = ProblemSpec(DISC, sigma=1, a=1.0, alpha=1.0)
    rows = small_time_displacement(spec, default_start_lattice(DISC), 0.2, [0.1, 0.05, 0.01], 2 * 10 ** 4, 1e-3,
                                   seed=8)
    criterion(8, "small-time displacement", strictly_decreasing(rows),
              ", ".join(f"t={r.t:g}: {r.sup_prob:.4f} +- {r.stderr:.4f}" for r in rows))


def test_9_stable_sampler_law(criterion):
    n = 10 ** 6
    errs = []
    for alpha, d in [(1.0, 1), (1.5, 2)]:
        y = stable_increment(RngStream(9, 0), 1.0, alpha, 1.0, d, size=n)
        for r in (0.25, 0.5, 1.0, 2.0, 3.0, 4.0):
            xi = np.zeros(d)
            xi[0] = r
            errs.append(abs(np.cos(y @ xi).mean() - math.exp(-r ** alpha)))
    pvals = []
    for i, alpha in enumerate((0.5, 1.0, 1.7)):
        sub = stable_increment(RngStream(90, 2 * i), 1.0, alpha, 1.0, 1, size=50000)[:, 0]
        cms = RngStream(90, 2 * i + 1).symmetric_stable(alpha, 50000)
        pvals.append(stats.ks_2samp(sub, cms).pvalue)
    ok = max(errs) <= 5e-3 and min(pvals) > 0.01
    criterion(9, "stable sampler law", ok, f"max CF error {max(errs):.2e}, min KS p {min(pvals):.3f}")


def test_10_determinism(criterion, tmp_path):
    spec = ProblemSpec(DISC, sigma=1, a=1.0, alpha=1.0, b=["0.5", "0"], c="-0.2", f="1", g="0")
    blobs = []
    for w in (1, 4, 16):
        grid, _ = solve_grid(spec, 0.2, 2000, PathConfig(dt=1e-3), seed=10, workers=w)
        grid.to_csv(tmp_path / f"g{w}.csv")
        blobs.append((tmp_path / f"g{w}.csv").read_bytes() + grid.values.tobytes() + grid.stderr.tobytes())
    criterion(10, "determinism", len(set(blobs)) == 1, f"{len(blobs)} runs, {len(set(blobs))} distinct outputs")


def test_11_boundary_continuity(criterion):
    spec = ProblemSpec(DISC, a=0.0, g="max(-1, min(1, x1))", g_bound=1.0)
    rep = boundary_continuity_probe(spec, [1.0, 0.0], [0.4, 0.2, 0.1, 0.05], 5 * 10 ** 4, PathConfig(dt=1e-4),
                                    seed=11, oracle=lambda p: p[0], tol=0.01)
    bands = all(abs(r.estimate.mean - r.oracle) <= 3 * r.estimate.stderr + 0.01 for r in rep.rows)
    ok = rep.monotone and rep.converged and bands
    criterion(11, "boundary continuity", ok,
              ", ".join(f"r={r.r:g}: {r.estimate.mean:.4f}" for r in rep.rows))
