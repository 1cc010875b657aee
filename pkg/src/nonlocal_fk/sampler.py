"""Counter-based random streams and the increment laws of the driving process.

The driving process is ``sigma * B + a * Y`` where ``B`` is the Brownian motion
with generator ``Delta`` (variance ``2 t`` per coordinate, *not* ``t``) and
``Y`` is the isotropic alpha-stable process with
``E exp(i xi . Y_t) = exp(-t |xi|^alpha)``.  ``Y`` is sampled by subordination:
``Y_t = sqrt(2 S_t) N`` with ``S_t`` a positive (alpha/2)-stable variable drawn
with the Chambers-Mallows-Stuck (Kanter) formula.

Every draw comes from Philox4x32-10 keyed by the 64-bit seed, with the 64-bit
stream id in the upper half of the 128-bit counter and the block index in the
lower half.  A block yields four 32-bit words = two uniforms in (0, 1).  Block
consumption per primitive is fixed:

* ``gaussian``: ``ceil(d / 2)`` blocks (Box-Muller, spare normal discarded)
* ``subordinator``: 1 block
* ``stable``: 1 + ``ceil(d / 2)`` blocks (nothing when ``a == 0``)

The path kernel in :mod:`nonlocal_fk.pathsim` calls the same jitted primitives,
so a Python :class:`RngStream` and the kernel see bit-identical sequences.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S5 = np.uint64(5)
_S6 = np.uint64(6)
_TWO_PI = 2.0 * math.pi


@njit(cache=True, nogil=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32-10 block function on uint64-held 32-bit words."""
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _S32
        lo0 = p0 & _MASK
        hi1 = p1 >> _S32
        lo1 = p1 & _MASK
        c0, c1, c2, c3 = (hi1 ^ c1 ^ k0) & _MASK, lo1, (hi0 ^ c3 ^ k1) & _MASK, lo0
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


@njit(cache=True, nogil=True)
def _to_unit(a, b):
    # 53-bit uniform strictly inside (0, 1)
    return (float(a >> _S5) * 67108864.0 + float(b >> _S6) + 0.5) * (1.0 / 9007199254740992.0)


@njit(cache=True, nogil=True)
def block_uniforms(seed, stream, ctr):
    """Two uniforms in (0, 1) from block ``ctr`` of stream ``stream``."""
    s = np.uint64(seed)
    st = np.uint64(stream)
    c = np.uint64(ctr)
    w0, w1, w2, w3 = philox4x32(c & _MASK, c >> _S32, st & _MASK, st >> _S32, s & _MASK, s >> _S32)
    return _to_unit(w0, w1), _to_unit(w2, w3)


@njit(cache=True, nogil=True)
def normal_pair(seed, stream, ctr):
    """Box-Muller pair from block ``ctr``.  Scalar-only so hot loops can call it cheaply."""
    u1, u2 = block_uniforms(seed, stream, ctr)
    r = math.sqrt(-2.0 * math.log(u1))
    return r * math.cos(_TWO_PI * u2), r * math.sin(_TWO_PI * u2)


@njit(cache=True, nogil=True)
def fill_normals(seed, stream, ctr, out):
    """Fill ``out`` with standard normals; returns the advanced counter."""
    n = out.shape[0]
    for i in range(0, n, 2):
        z1, z2 = normal_pair(seed, stream, ctr)
        ctr += 1
        out[i] = z1
        if i + 1 < n:
            out[i + 1] = z2
    return ctr


@njit(cache=True, nogil=True)
def positive_stable(seed, stream, ctr, beta):
    """Unit positive beta-stable draw, E exp(-lam S) = exp(-lam^beta), 0 < beta < 1."""
    u1, u2 = block_uniforms(seed, stream, ctr)
    v = math.pi * u1
    w = -math.log(u2)
    sv = math.sin(v)
    # Kanter's representation of the one-sided stable law
    part = math.sin(beta * v) / sv ** (1.0 / beta)
    rest = (math.sin((1.0 - beta) * v) / w) ** ((1.0 - beta) / beta)
    return part * rest, ctr + 1


@njit(cache=True, nogil=True)
def gaussian_step(seed, stream, ctr, dt, out):
    """Brownian increment for generator Delta: N(0, 2 dt) per coordinate."""
    ctr = fill_normals(seed, stream, ctr, out)
    scale = math.sqrt(2.0 * dt)
    for i in range(out.shape[0]):
        out[i] *= scale
    return ctr


@njit(cache=True, nogil=True)
def subordinator_step(seed, stream, ctr, dt, alpha):
    beta = 0.5 * alpha
    s, ctr = positive_stable(seed, stream, ctr, beta)
    return dt ** (1.0 / beta) * s, ctr


@njit(cache=True, nogil=True)
def stable_step(seed, stream, ctr, dt, alpha, a, out):
    """a * Y_dt via subordination; zero vector (no draws consumed) when a == 0."""
    if a == 0.0:
        for i in range(out.shape[0]):
            out[i] = 0.0
        return ctr
    s, ctr = subordinator_step(seed, stream, ctr, dt, alpha)
    ctr = fill_normals(seed, stream, ctr, out)
    scale = a * math.sqrt(2.0 * s)
    for i in range(out.shape[0]):
        out[i] *= scale
    return ctr


@njit(cache=True, nogil=True)
def symmetric_stable_cms(seed, stream, ctr, alpha):
    """Direct 1-d symmetric alpha-stable draw (Chambers-Mallows-Stuck), CF exp(-|xi|^alpha)."""
    u1, u2 = block_uniforms(seed, stream, ctr)
    v = math.pi * (u1 - 0.5)
    w = -math.log(u2)
    if alpha == 1.0:
        return math.tan(v), ctr + 1
    x = math.sin(alpha * v) / math.cos(v) ** (1.0 / alpha)
    x *= (math.cos((1.0 - alpha) * v) / w) ** ((1.0 - alpha) / alpha)
    return x, ctr + 1


@njit(cache=True, nogil=True)
def _raw_blocks(seed, stream, ctr0, n):
    out = np.empty((n, 4), dtype=np.uint32)
    s = np.uint64(seed)
    st = np.uint64(stream)
    for i in range(n):
        c = np.uint64(ctr0 + i)
        w = philox4x32(c & _MASK, c >> _S32, st & _MASK, st >> _S32, s & _MASK, s >> _S32)
        for j in range(4):
            out[i, j] = w[j]
    return out


@njit(cache=True, nogil=True)
def _many_gaussian(seed, stream, ctr, dt, d, size):
    out = np.empty((size, d))
    buf = np.empty(d)
    for i in range(size):
        ctr = gaussian_step(seed, stream, ctr, dt, buf)
        out[i] = buf
    return out, ctr


@njit(cache=True, nogil=True)
def _many_subordinator(seed, stream, ctr, dt, alpha, size):
    out = np.empty(size)
    for i in range(size):
        out[i], ctr = subordinator_step(seed, stream, ctr, dt, alpha)
    return out, ctr


@njit(cache=True, nogil=True)
def _many_stable(seed, stream, ctr, dt, alpha, a, d, size):
    out = np.empty((size, d))
    buf = np.empty(d)
    for i in range(size):
        ctr = stable_step(seed, stream, ctr, dt, alpha, a, buf)
        out[i] = buf
    return out, ctr


@njit(cache=True, nogil=True)
def _many_cms(seed, stream, ctr, alpha, size):
    out = np.empty(size)
    for i in range(size):
        out[i], ctr = symmetric_stable_cms(seed, stream, ctr, alpha)
    return out, ctr


_U64 = 1 << 64


class RngStream:
    """A Philox stream identified by ``(seed, stream_id)``.

    The only state is the block counter; advancing it is the only mutation.
    """

    __slots__ = ("seed", "stream_id", "counter")

    def __init__(self, seed: int, stream_id: int = 0, counter: int = 0):
        for name, v in (("seed", seed), ("stream_id", stream_id), ("counter", counter)):
            if not 0 <= int(v) < _U64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {v}")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.counter = int(counter)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"

    def raw_blocks(self, n: int) -> np.ndarray:
        """Next ``n`` Philox output blocks as an ``(n, 4)`` uint32 array."""
        out = _raw_blocks(self.seed, self.stream_id, self.counter, n)
        self.counter += n
        return out

    def uniforms(self, n: int) -> np.ndarray:
        out = np.empty(2 * ((n + 1) // 2))
        for i in range(len(out) // 2):
            out[2 * i], out[2 * i + 1] = block_uniforms(self.seed, self.stream_id, self.counter)
            self.counter += 1
        return out[:n]

    def symmetric_stable(self, alpha: float, size: int) -> np.ndarray:
        """Direct CMS draws of a 1-d symmetric stable variable (unit scale)."""
        _check_alpha(alpha)
        out, self.counter = _many_cms(self.seed, self.stream_id, self.counter, float(alpha), size)
        return out


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")


def gaussian_increment(rng: RngStream, dt: float, d: int, size: int | None = None) -> np.ndarray:
    """Brownian increment(s) over ``dt`` for the generator Delta (variance ``2 dt``)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    out, rng.counter = _many_gaussian(rng.seed, rng.stream_id, rng.counter, float(dt), int(d), 1 if size is None else size)
    return out[0] if size is None else out


def subordinator_increment(rng: RngStream, dt: float, alpha: float, size: int | None = None):
    """Positive (alpha/2)-stable increment with ``E exp(-lam S) = exp(-dt lam^(alpha/2))``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    _check_alpha(alpha)
    out, rng.counter = _many_subordinator(rng.seed, rng.stream_id, rng.counter, float(dt), float(alpha), 1 if size is None else size)
    return float(out[0]) if size is None else out


def stable_increment(rng: RngStream, dt: float, alpha: float, a: float, d: int, size: int | None = None) -> np.ndarray:
    """``a * Y_dt`` for the isotropic alpha-stable ``Y``; exact zeros when ``a == 0``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if a < 0:
        raise ValueError("a must be nonnegative")
    _check_alpha(alpha)
    out, rng.counter = _many_stable(
        rng.seed, rng.stream_id, rng.counter, float(dt), float(alpha), float(a), int(d), 1 if size is None else size
    )
    return out[0] if size is None else out
