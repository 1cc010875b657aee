import math

import numpy as np
import pytest
from scipy import stats

from nonlocal_fk.sampler import (
    RngStream, gaussian_increment, philox4x32, stable_increment, subordinator_increment,
)


def ph(*words):
    return tuple(int(v) for v in philox4x32(*(np.uint64(w) for w in words)))


# Philox4x32-10 known-answer vectors (Random123 distribution)
@pytest.mark.parametrize("ctr, key, want", [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF,) * 2, (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
])
def test_philox_known_answers(ctr, key, want):
    assert ph(*ctr, *key) == want


def test_stream_determinism_and_counter():
    a, b = RngStream(7, 3), RngStream(7, 3)
    x = gaussian_increment(a, 0.1, 3, size=100)
    y = gaussian_increment(b, 0.1, 3, size=100)
    assert np.array_equal(x, y)
    assert a.counter == 200  # ceil(3 / 2) blocks per draw
    c = RngStream(7, 3, counter=100)
    assert np.array_equal(gaussian_increment(c, 0.1, 3, size=50), x[50:])


def test_rng_stream_validation():
    with pytest.raises(ValueError):
        RngStream(-1)
    with pytest.raises(ValueError):
        RngStream(0, 2 ** 64)


def test_streams_uncorrelated():
    n = 1000
    first = np.array([RngStream(11, s).uniforms(2) for s in range(n)])
    second = np.array([RngStream(11, s + n).uniforms(2) for s in range(n)])
    for i in range(2):
        r = np.corrcoef(first[:, i], second[:, i])[0, 1]
        assert abs(r) < 3 / math.sqrt(n)
    r = np.corrcoef(first[:, 0], first[:, 1])[0, 1]
    assert abs(r) < 3 / math.sqrt(n)


def test_uniforms_in_open_interval():
    u = RngStream(0, 0).uniforms(10 ** 5)
    assert u.min() > 0 and u.max() < 1
    assert stats.kstest(u, "uniform").pvalue > 0.01


def test_gaussian_moments():
    n = 10 ** 6
    z = gaussian_increment(RngStream(1, 0), 0.1, 2, size=n)
    var = z.var(axis=0)
    assert np.all(np.abs(var - 0.2) < 0.002)
    se = np.sqrt(0.2 / n)
    assert np.all(np.abs(z.mean(axis=0)) < 3 * se)


def test_gaussian_dt_scaling():
    n = 2 * 10 ** 5
    v1 = gaussian_increment(RngStream(2, 0), 0.05, 1, size=n).var()
    v4 = gaussian_increment(RngStream(2, 1), 0.2, 1, size=n).var()
    # Var of a sample variance of Gaussians is 2 s^4 / n; delta method on the ratio
    band = 3 * 4 * math.sqrt(2 * 2 / n)
    assert abs(v4 / v1 - 4) < band


def test_subordinator_laplace_transform():
    n = 10 ** 6
    s = subordinator_increment(RngStream(3, 0), 1.0, 1.0, size=n)
    assert np.all(s >= 0)
    e = np.exp(-s)
    assert abs(e.mean() - math.exp(-1)) < 3 * e.std() / math.sqrt(n)


def test_subordinator_self_similarity():
    n = 20000
    alpha, dt = 1.3, 0.01
    s_dt = subordinator_increment(RngStream(4, 0), dt, alpha, size=n)
    s_1 = subordinator_increment(RngStream(4, 1), 1.0, alpha, size=n)
    assert stats.ks_2samp(s_dt, dt ** (2 / alpha) * s_1).pvalue > 0.01


def test_stable_zero_intensity():
    y = stable_increment(RngStream(5, 0), 0.1, 1.0, 0.0, 3, size=10)
    assert np.array_equal(y, np.zeros((10, 3)))


def test_stable_characteristic_function_2d():
    n = 10 ** 6
    y = stable_increment(RngStream(6, 0), 1.0, 1.0, 1.0, 2, size=n)
    for r in (0.5, 1.0, 2.0):
        xi = np.array([r, 0.0])
        emp = np.cos(y @ xi).mean()
        assert abs(emp - math.exp(-r)) < 5e-3


def test_stable_isotropy():
    n = 2 * 10 ** 5
    y = stable_increment(RngStream(7, 0), 1.0, 1.5, 1.0, 2, size=n)
    xi = np.array([1.0, 0.0])
    th = 0.7
    rot = np.array([math.cos(th), math.sin(th)])
    a, b = np.cos(y @ xi), np.cos(y @ rot)
    band = 3 * math.sqrt((a.var() + b.var()) / n)
    assert abs(a.mean() - b.mean()) < band


def test_stable_scale_and_intensity():
    # a * Y_dt has the law of Y_1 scaled by a dt^(1/alpha)
    n = 20000
    alpha, dt, a = 0.8, 0.02, 1.7
    y = stable_increment(RngStream(8, 0), dt, alpha, a, 1, size=n)[:, 0]
    y1 = stable_increment(RngStream(8, 1), 1.0, alpha, 1.0, 1, size=n)[:, 0]
    assert stats.ks_2samp(y, a * dt ** (1 / alpha) * y1).pvalue > 0.01


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.7])
def test_subordination_matches_direct_cms(alpha):
    n = 50000
    sub = stable_increment(RngStream(9, 0), 1.0, alpha, 1.0, 1, size=n)[:, 0]
    cms = RngStream(9, 1).symmetric_stable(alpha, n)
    assert stats.ks_2samp(sub, cms).pvalue > 0.01
