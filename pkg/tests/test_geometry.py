import itertools
import math

import numpy as np
import pytest

from nonlocal_fk.geometry import Ball, Box, Polytope, WholeSpace, domain_from_config

SQ = 1 / math.sqrt(2)


def triangle():
    return Polytope([[0.0, -1.0], [-1.0, 0.0], [SQ, SQ]], [0.0, 0.0, SQ])


SHAPES = [Ball([0.0, 0.0], 1.0), Box([0.0, -1.0], [2.0, 1.0]), triangle(), Ball([0.5], 2.0), Box([0.0] * 3, [1.0] * 3)]


def test_contains_examples():
    assert Ball([0.0, 0.0], 1.0).contains([0.0, 0.0])
    assert not Ball([0.0, 0.0], 1.0).contains([1.0, 0.0])
    assert not Box([0.0, 0.0], [1.0, 1.0]).contains([0.5, 2.0])


def test_signed_distance_examples():
    assert Ball([0.0, 0.0], 1.0).signed_distance([0.0, 0.0]) == -1.0
    assert Ball([0.0, 0.0], 1.0).signed_distance([2.0, 0.0]) == 1.0
    assert Box([0.0, 0.0], [2.0, 2.0]).signed_distance([1.0, 1.0]) == -1.0


@pytest.mark.parametrize("dom", SHAPES, ids=lambda d: type(d).__name__ + str(d.dim))
def test_contains_matches_sign(dom):
    lo, hi = dom.bounds
    pts = np.random.default_rng(1).uniform(lo - 0.5, hi + 0.5, size=(10 ** 4, dom.dim))
    sd = dom.signed_distance(pts)
    inside = dom.contains(pts)
    band = np.abs(sd) > 1e-12
    assert np.array_equal(inside[band], sd[band] < 0)
    # vectorised and scalar paths agree
    assert all(dom.signed_distance(p) == s for p, s in zip(pts[:50], sd[:50]))


def test_boundary_hit_examples():
    tol = 1e-10
    z = Ball([0.0, 0.0], 1.0).boundary_hit([0.0, 0.0], [2.0, 0.0], tol)
    assert np.allclose(z, [1.0, 0.0], atol=tol)
    z = Box([0.0, 0.0], [1.0, 1.0]).boundary_hit([0.5, 0.5], [0.5, 1.5], tol)
    assert np.allclose(z, [0.5, 1.0], atol=tol)


def test_boundary_hit_symmetry():
    dom = Ball([0.0, 0.0], 1.0)
    a = dom.boundary_hit([0.2, 0.1], [1.3, 0.4], 1e-12)
    b = dom.boundary_hit([-0.2, -0.1], [-1.3, -0.4], 1e-12)
    assert np.allclose(a, -b, atol=1e-12)


@pytest.mark.parametrize("dom", SHAPES, ids=lambda d: type(d).__name__ + str(d.dim))
def test_boundary_hit_on_segment_and_level_set(dom):
    rng = np.random.default_rng(2)
    lo, hi = dom.bounds
    tol = 1e-9
    n = 0
    while n < 200:
        p, q = rng.uniform(lo - 0.5, hi + 0.5, size=(2, dom.dim))
        if not dom.contains(p) or dom.contains(q):
            continue
        z = dom.boundary_hit(p, q, tol)
        s = np.dot(z - p, q - p) / np.dot(q - p, q - p)
        assert 0 <= s <= 1
        assert np.linalg.norm(z - (p + s * (q - p))) < 1e-12
        assert abs(dom.signed_distance(z)) <= tol * (1 + 1e-6) * max(1.0, np.linalg.norm(q - p))
        n += 1


def test_boundary_hit_rejects_bad_input():
    dom = Ball([0.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        dom.boundary_hit([2.0, 0.0], [3.0, 0.0], 1e-10)


def test_grid_points_examples():
    g = Ball([0.0], 1.0).grid_points(0.5)
    assert np.allclose(g.ravel(), [-0.5, 0.0, 0.5])
    assert len(Box([0.0, 0.0], [1.0, 1.0]).grid_points(0.25)) == 9


def test_grid_point_count_disc():
    h = 0.1
    pts = Ball([0.0, 0.0], 1.0).grid_points(h)
    # exact count by enumeration
    k = np.arange(-10, 11)
    exact = sum(1 for i, j in itertools.product(k, k) if (i * h) ** 2 + (j * h) ** 2 < 1 - 1e-12)
    assert len(pts) == exact
    assert abs(len(pts) - math.pi / h ** 2) < 0.05 * math.pi / h ** 2


def test_diameters():
    assert Ball([0.0, 0.0], 1.5).diameter == 3.0
    assert Box([0.0, 0.0], [3.0, 4.0]).diameter == 5.0
    tri = triangle()
    rng = np.random.default_rng(3)
    lo, hi = tri.bounds
    pts = rng.uniform(lo, hi, size=(5000, 2))
    pts = pts[tri.contains(pts)]
    far = max(np.linalg.norm(a - b) for a in pts[:200] for b in pts[:200])
    assert tri.diameter >= far
    assert tri.diameter == pytest.approx(math.sqrt(2), rel=1e-9)
    assert WholeSpace(2).diameter == math.inf


@pytest.mark.parametrize("cfg", [
    {"type": "ball", "center": [0, 0], "radius": 0},
    {"type": "box", "lo": [0, 0], "hi": [0, 1]},
    {"type": "polytope", "halfspaces": [{"normal": [1, 0], "offset": 1}, {"normal": [-1, 0], "offset": 1}]},
    {"type": "polytope", "halfspaces": [{"normal": [1, 0], "offset": -1}, {"normal": [-1, 0], "offset": -1},
                                        {"normal": [0, 1], "offset": 1}, {"normal": [0, -1], "offset": 1}]},
])
def test_invalid_domains(cfg):
    with pytest.raises(ValueError):
        domain_from_config(cfg)


def test_polytope_square_matches_box():
    sq = domain_from_config({"type": "polytope", "halfspaces": [
        {"normal": [1, 0], "offset": 1}, {"normal": [-1, 0], "offset": 1},
        {"normal": [0, 1], "offset": 1}, {"normal": [0, -1], "offset": 1}]})
    box = Box([-1.0, -1.0], [1.0, 1.0])
    pts = np.random.default_rng(4).uniform(-2, 2, size=(1000, 2))
    assert np.array_equal(sq.contains(pts), box.contains(pts))
    assert np.array_equal(sq.grid_points(0.25), box.grid_points(0.25))
