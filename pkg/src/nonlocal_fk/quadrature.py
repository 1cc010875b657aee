"""Small quadrature rules shared by the Kato diagnostic and the weak-form verifier."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import roots_legendre


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere S^{d-1} (2 for d = 1)."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def sphere_rule(d: int, n: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Directions and weights integrating over S^{d-1}; weights sum to ``sphere_area(d)``."""
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if d == 2:
        ang = 2 * math.pi * (np.arange(n) + 0.5) / n
        return np.stack([np.cos(ang), np.sin(ang)], axis=1), np.full(n, 2 * math.pi / n)
    if d == 3:
        z, wz = roots_legendre(n)
        m = 2 * n
        phi = 2 * math.pi * (np.arange(m) + 0.5) / m
        zz, pp = np.meshgrid(z, phi, indexing="ij")
        r = np.sqrt(1 - zz ** 2)
        dirs = np.stack([r * np.cos(pp), r * np.sin(pp), zz], axis=-1).reshape(-1, 3)
        w = (wz[:, None] * np.full(m, 2 * math.pi / m)[None, :]).ravel()
        return dirs, w
    # higher dimensions: fixed pseudo-random equal-weight design
    g = np.random.default_rng(12345).standard_normal((max(64, n ** 2), d))
    dirs = g / np.linalg.norm(g, axis=1, keepdims=True)
    return dirs, np.full(len(dirs), sphere_area(d) / len(dirs))


def gauss_legendre(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_legendre(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w
