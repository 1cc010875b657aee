import math

import mpmath
import numpy as np
import pytest

from nonlocal_fk.expr import parse_expression
from nonlocal_fk.geometry import Ball, Box
from nonlocal_fk.model import ProblemSpec, frac_constant, kato_profile, validate_spec


def mp_frac_constant(d, alpha):
    mpmath.mp.dps = 40
    a = mpmath.mpf(alpha)
    return (a * mpmath.power(2, a - 1) * mpmath.power(mpmath.pi, -mpmath.mpf(d) / 2)
            * mpmath.gamma((d + a) / 2) / mpmath.gamma(1 - a / 2))


def test_frac_constant_closed_forms():
    assert frac_constant(1, 1.0) == pytest.approx(1 / math.pi, rel=1e-15)
    assert frac_constant(2, 1.0) == pytest.approx(1 / (2 * math.pi), rel=1e-15)
    assert frac_constant(1, 1.0) == pytest.approx(0.3183098862, abs=1e-10)
    assert frac_constant(2, 1.0) == pytest.approx(0.1591549431, abs=1e-10)


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("alpha", [0.3, 0.5, 1.0, 1.5, 1.9])
def test_frac_constant_against_high_precision(d, alpha):
    want = float(mp_frac_constant(d, alpha))
    assert abs(frac_constant(d, alpha) - want) <= 1e-12 * abs(want)


@pytest.mark.parametrize("alpha", [0.0, 2.0, -1.0])
def test_frac_constant_rejects_alpha(alpha):
    with pytest.raises(ValueError):
        frac_constant(2, alpha)


def test_spec_invariants():
    dom = Ball([0.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        ProblemSpec(dom, a=0.0, sigma=0)
    with pytest.raises(ValueError):
        ProblemSpec(dom, alpha=2.0)
    with pytest.raises(ValueError):
        ProblemSpec(dom, g="x1")  # non-constant g needs a declared bound
    spec = ProblemSpec(dom, g="3")
    assert spec.g_bound == 3.0


def test_drift_clamped_outside():
    spec = ProblemSpec(Ball([0.0, 0.0], 1.0), b=["1", "0"])
    assert np.array_equal(spec.drift_at([0.2, 0.0]), [1.0, 0.0])
    assert np.array_equal(spec.drift_at([2.0, 0.0]), [0.0, 0.0])


def test_kato_constant_field_3d():
    # sup_x int_{|y-x|<=r} |x-y|^{-1} dy = 2 pi r^2 when the ball fits in D
    dom = Ball([0.0, 0.0, 0.0], 1.0)
    radii = [0.5, 0.25, 0.1]
    prof = kato_profile(parse_expression("1", 3), dom, radii, 0.25)
    assert np.allclose(prof.values, [2 * math.pi * r * r for r in radii], rtol=1e-10)


def test_kato_zero_field():
    prof = kato_profile(parse_expression("0", 2), Ball([0.0, 0.0], 1.0), [0.5, 0.1], 0.2)
    assert np.all(prof.values == 0.0)


@pytest.mark.parametrize("d", [2, 3])
def test_kato_vanishes_as_r_shrinks(d):
    radii = [0.4, 0.1, 0.025, 0.00625]
    prof = kato_profile(parse_expression("1 + x1^2", d), Box([-1.0] * d, [1.0] * d), radii, 0.5)
    v = prof.values
    assert np.all(np.diff(v) < 0)
    assert v[-1] < 0.01 * v[0]


@pytest.mark.parametrize("text", ["sin(5 * x1) * x2", "indicator(norm(x) < 0.3) / 0.1", "x1 - x2^3", "exp(x1)"])
def test_kato_monotone_in_r(text):
    prof = kato_profile(parse_expression(text, 2), Ball([0.0, 0.0], 1.0), [0.8, 0.4, 0.2, 0.1, 0.05], 0.2)
    assert np.all(prof.values >= 0)
    assert np.all(np.diff(prof.values) <= 0)


def test_validate_quiet_for_benign_problem():
    spec = ProblemSpec(Ball([0.0, 0.0], 1.0), c="0", f="1", g="0")
    assert validate_spec(spec) == []


def test_validate_large_potential_warns():
    spec = ProblemSpec(Ball([0.0, 0.0], 1.0), c="10", kato_warn_threshold=1.0)
    w = validate_spec(spec)
    assert len(w) == 1 and w[0].startswith("c:")
    # ||10||_{L^2(unit disc)} = 10 sqrt(pi) up to the lattice area error
    est = float(w[0].split("=")[1].split()[0])
    assert est == pytest.approx(10 * math.sqrt(math.pi), rel=0.05)


def test_validate_flags_global_drift_and_bad_bound():
    spec = ProblemSpec(Ball([0.0, 0.0], 1.0), b=["1", "0"], g="x1", g_bound=1.0)
    w = validate_spec(spec)
    assert any(s.startswith("b1:") for s in w)
    assert any(s.startswith("g:") for s in w)


def test_to_config_round_trip():
    from nonlocal_fk.config import problem_from_config

    spec = ProblemSpec(Box([-1.0, 0.0], [1.0, 2.0]), alpha=1.5, a=0.5, b=["x2", "0"], c="-1", f="x1^2",
                       g="max(-1, min(1, x1))", g_bound=1.0)
    back = problem_from_config(spec.to_config())
    assert back.to_config() == spec.to_config()
