"""Harmonic measure of planar Brownian motion exiting the open quadrant.

For a start point x = (u, v) with u, v > 0 the exit law Q_x of Brownian
motion leaving (0,inf)^2 has an explicit density on the boundary set
E = [0,inf)^2 \\ (0,inf)^2, an arctangent CDF along each axis, and closed
p-th moment formulas for p in (0, 2).  For x already in E the law is the
point mass at x.

Exact sampling goes through the conformal map z -> z^2, which carries the
quadrant to the upper half-plane: the exit ordinate there is Cauchy with
location u^2 - v^2 and scale 2uv, and taking the square root back lands on
the correct axis.  A slow Gaussian-increment walk is kept as an
independent oracle.

Boundary points are also handled in a signed encoding used throughout the
statistics code: a horizontal point (w, 0) maps to +w and a vertical
point (0, w) to -w, a measurable bijection E -> R.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "QuadrantPoint",
    "BoundaryPoint",
    "density",
    "vertical_tail",
    "horizontal_tail",
    "boundary_cdf",
    "sample",
    "sample_signed",
    "sample_bm_oracle",
    "sample_bm_oracle_signed",
    "moment_p",
    "centered_moment_const",
    "lozenge",
    "f_value",
]

HORIZONTAL = "horizontal"
VERTICAL = "vertical"

# Below this the Cauchy scale 2uv has collapsed; the limit law is the
# point mass, so such points are treated as boundary.
_BOUNDARY_EPS = 1e-300


@dataclass(frozen=True)
class QuadrantPoint:
    """A point of the closed quadrant [0,inf)^2."""

    u: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise ValueError("coordinates must be finite")
        if self.u < 0.0 or self.v < 0.0:
            raise ValueError("coordinates must be >= 0")

    @property
    def interior(self) -> bool:
        return self.u > _BOUNDARY_EPS and self.v > _BOUNDARY_EPS

    def as_pair(self) -> tuple[float, float]:
        return (self.u, self.v)


@dataclass(frozen=True)
class BoundaryPoint:
    """A point of E: (value, 0) if horizontal, (0, value) if vertical.

    The origin is represented canonically with axis = horizontal.
    """

    axis: str
    value: float

    def __post_init__(self):
        if self.axis not in (HORIZONTAL, VERTICAL):
            raise ValueError(f"unknown axis {self.axis!r}")
        if not math.isfinite(self.value) or self.value < 0.0:
            raise ValueError("boundary value must be finite and >= 0")
        if self.value == 0.0 and self.axis == VERTICAL:
            object.__setattr__(self, "axis", HORIZONTAL)

    @property
    def signed(self) -> float:
        return self.value if self.axis == HORIZONTAL else -self.value

    def as_pair(self) -> tuple[float, float]:
        return (self.value, 0.0) if self.axis == HORIZONTAL else (0.0, self.value)

    @classmethod
    def from_signed(cls, s: float) -> "BoundaryPoint":
        return cls(HORIZONTAL, s) if s >= 0.0 else cls(VERTICAL, -s)


def _coords(x) -> tuple[float, float]:
    if isinstance(x, QuadrantPoint):
        return x.u, x.v
    u, v = x
    return float(u), float(v)


def _require_interior(u: float, v: float):
    if u <= _BOUNDARY_EPS or v <= _BOUNDARY_EPS:
        raise ValueError("point is on the boundary: the exit law is a point mass")


def density(x, b: BoundaryPoint) -> float:
    """Lebesgue density of Q_x on E at the boundary point b.

    For b = (w, 0):  (4/pi) u v w / (4 u^2 v^2 + (w^2 + v^2 - u^2)^2);
    the vertical branch swaps u and v.
    """
    u, v = _coords(x)
    _require_interior(u, v)
    w = b.value
    if b.axis == HORIZONTAL:
        quad = w * w + (v - u) * (v + u)
    else:
        quad = w * w + (u - v) * (u + v)
    return (4.0 / math.pi) * u * v * w / (4.0 * u * u * v * v + quad * quad)


def vertical_tail(x, c: float) -> float:
    """Q_x({0} x [c, inf)) = 1/2 + arctan((v^2 - u^2 - c^2) / (2uv)) / pi."""
    u, v = _coords(x)
    _require_interior(u, v)
    if c < 0.0:
        raise ValueError("c must be >= 0")
    return 0.5 + math.atan(((v - u) * (v + u) - c * c) / (2.0 * u * v)) / math.pi


def horizontal_tail(x, c: float) -> float:
    """Q_x([c, inf) x {0}), the u <-> v mirror of the vertical tail."""
    u, v = _coords(x)
    return vertical_tail((v, u), c)


def boundary_cdf(x, s) -> np.ndarray:
    """CDF of the signed boundary coordinate of Q_x, vectorized over s.

    Negative s covers the vertical axis (value >= -s), nonnegative s adds
    the horizontal mass up to s; the two branches agree at s = 0.
    """
    u, v = _coords(x)
    _require_interior(u, v)
    s = np.asarray(s, dtype=float)
    inv_pi = 1.0 / math.pi
    two_uv = 2.0 * u * v
    vert = 0.5 + np.arctan(((v - u) * (v + u) - s * s) / two_uv) * inv_pi
    horiz = 0.5 - np.arctan(((u - v) * (u + v) - s * s) / two_uv) * inv_pi
    return np.where(s < 0.0, vert, horiz)


def resample_uv(u: np.ndarray, v: np.ndarray, unif: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact draw from Q at each (u, v) pair, one uniform per pair.

    Boundary pairs pass through unchanged (the exit law is a point mass),
    which also keeps their coordinates exactly equal to the input.  The
    Cauchy quantile never sees an exact odd multiple of pi/2, so the tan
    call is finite for every representable uniform.
    """
    interior = (u > _BOUNDARY_EPS) & (v > _BOUNDARY_EPS)
    w = (u - v) * (u + v) + (2.0 * u * v) * np.tan(np.pi * (unif - 0.5))
    new_u = np.where(w >= 0.0, np.sqrt(np.maximum(w, 0.0)), 0.0)
    new_v = np.where(w >= 0.0, 0.0, np.sqrt(np.maximum(-w, 0.0)))
    return np.where(interior, new_u, u), np.where(interior, new_v, v)


def sample(x, rng: np.random.Generator) -> BoundaryPoint:
    """One exact draw from Q_x (the input itself if x is on the boundary)."""
    u, v = _coords(x)
    if u <= _BOUNDARY_EPS or v <= _BOUNDARY_EPS:
        return BoundaryPoint(HORIZONTAL, u) if v <= _BOUNDARY_EPS else BoundaryPoint(VERTICAL, v)
    w = (u - v) * (u + v) + 2.0 * u * v * math.tan(math.pi * (rng.random() - 0.5))
    if w >= 0.0:
        return BoundaryPoint(HORIZONTAL, math.sqrt(w))
    return BoundaryPoint(VERTICAL, math.sqrt(-w))


def sample_signed(x, n: int, rng: np.random.Generator) -> np.ndarray:
    """n exact draws from Q_x in the signed encoding, vectorized."""
    u, v = _coords(x)
    uu = np.full(n, u)
    vv = np.full(n, v)
    new_u, new_v = resample_uv(uu, vv, rng.random(n))
    return new_u - new_v


def sample_bm_oracle(x, rng: np.random.Generator, dt: float | None = None) -> BoundaryPoint:
    """Approximate draw from Q_x by a Gaussian-increment walk (slow oracle).

    The walk steps with variance dt per coordinate until one coordinate is
    <= 0 and projects onto the crossed axis; discretization bias is
    O(sqrt(dt)).  Kept only to validate the exact sampler.
    """
    u, v = _coords(x)
    if u <= _BOUNDARY_EPS or v <= _BOUNDARY_EPS:
        return BoundaryPoint(HORIZONTAL, u) if v <= _BOUNDARY_EPS else BoundaryPoint(VERTICAL, v)
    s = sample_bm_oracle_signed(x, 1, rng, dt=dt)[0]
    return BoundaryPoint.from_signed(float(s))


def sample_bm_oracle_signed(x, n: int, rng: np.random.Generator,
                            dt: float | None = None,
                            max_block_elems: int = 4_000_000) -> np.ndarray:
    """n oracle draws in the signed encoding, batched over walkers.

    Increments are generated in blocks and scanned for the first sign
    change, which reproduces the one-step-at-a-time walk law exactly while
    keeping the Python loop short.  The block length doubles as walkers
    retire, because the exit time has a heavy (log-mean) tail.
    """
    u, v = _coords(x)
    if dt is None:
        dt = 1e-4 * max(u * v, 1.0)
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    out = np.empty(n)
    if u <= _BOUNDARY_EPS or v <= _BOUNDARY_EPS:
        out[:] = u - v
        return out
    pos = np.tile(np.array([u, v]), (n, 1))
    alive = np.arange(n)
    sig = math.sqrt(dt)
    block = 256
    while alive.size:
        m = alive.size
        steps = rng.standard_normal((m, block, 2))
        steps *= sig
        np.cumsum(steps, axis=1, out=steps)
        steps += pos[alive][:, None, :]
        crossed = (steps <= 0.0).any(axis=2)
        hit = crossed.any(axis=1)
        first = np.argmax(crossed, axis=1)
        if hit.any():
            pts = steps[hit, first[hit], :]
            exit_vertical = pts[:, 0] <= pts[:, 1]
            signed = np.where(
                exit_vertical,
                -np.maximum(pts[:, 1], 0.0),
                np.maximum(pts[:, 0], 0.0),
            )
            out[alive[hit]] = signed
        survivors = ~hit
        pos[alive[survivors]] = steps[survivors, -1, :]
        alive = alive[survivors]
        if alive.size and alive.size * block * 4 < max_block_elems:
            block *= 2
    return out


def moment_p(x, i: int, p: float) -> float:
    """Closed form for the p-th moment of coordinate i under Q_x, p in (0,2).

    (u^2+v^2)^{p/2} sin((p/2) theta) / sin(pi p / 2) with theta in [0, pi]
    the two-argument arctangent of (2uv, v^2 - u^2); i = 2 swaps u and v.
    The second moment diverges, so p = 2 is rejected.
    """
    u, v = _coords(x)
    _require_interior(u, v)
    if not (0.0 < p < 2.0):
        raise ValueError("p must lie in (0, 2); the second moment is infinite")
    if i == 2:
        u, v = v, u
    elif i != 1:
        raise ValueError("coordinate index must be 1 or 2")
    theta = math.atan2(2.0 * u * v, (v - u) * (v + u))
    return (u * u + v * v) ** (0.5 * p) * math.sin(0.5 * p * theta) / math.sin(0.5 * math.pi * p)


def centered_moment_const(p: float) -> float:
    """Explicit constant C_p bounding the centered p-th moment of Q_x.

    int |y_i - x_i|^p Q_x(dy) <= C_p (x_1 x_2)^{p/2} for p in (1, 2), with
    C_p = (4p)^{p+1} / ((p-1)(2-p)(2 pi)^{p/2}).
    """
    if not (1.0 < p < 2.0):
        raise ValueError("the bound holds for p in (1, 2)")
    return (4.0 * p) ** (p + 1.0) / ((p - 1.0) * (2.0 - p) * (2.0 * math.pi) ** (0.5 * p))


def lozenge(x, y) -> complex:
    """Bilinear form -(x1+x2)(y1+y2) + i (x1-x2)(y1-y2) on pairs."""
    x1, x2 = float(x[0]), float(x[1])
    y1, y2 = float(y[0]), float(y[1])
    return complex(-(x1 + x2) * (y1 + y2), (x1 - x2) * (y1 - y2))


def f_value(x, y) -> complex:
    """exp of the lozenge form; modulus <= 1 when all coordinates are >= 0."""
    return cmath.exp(lozenge(x, y))
