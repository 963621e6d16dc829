"""Numeric and geometric primitives: intervals, cross-ratios, Poincare
lengths, heights, diamond neighborhoods, homography displacements and the
monotone root finder used everywhere else.

All types are immutable values and all functions are pure.
"""

import math
from dataclasses import dataclass

from . import config
from .errors import ContractViolationError, DomainError, NoSolutionError


@dataclass(frozen=True)
class Interval:
    """Open interval (lo, hi) on the line; degenerate intervals are rejected."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo < self.hi):
            raise DomainError(f"degenerate interval ({self.lo}, {self.hi})")
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise DomainError("interval endpoints must be finite")

    def length(self):
        return self.hi - self.lo

    def mid(self):
        return 0.5 * (self.lo + self.hi)

    def contains(self, x, strict=True):
        if strict:
            return self.lo < x < self.hi
        return self.lo <= x <= self.hi

    def contains_interval(self, other, strict=True):
        if strict:
            return self.lo < other.lo and other.hi < self.hi
        return self.lo <= other.lo and other.hi <= self.hi


@dataclass(frozen=True)
class PlanePoint:
    """A point (x, y) of the plane; y is the imaginary part."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise DomainError("plane point must have finite coordinates")

    def as_complex(self):
        return complex(self.x, self.y)

    @staticmethod
    def from_complex(z):
        return PlanePoint(z.real, z.imag)


@dataclass(frozen=True)
class Diamond:
    """Diamond neighborhood of `base`: points over base with height < size."""

    base: Interval
    size: float

    def __post_init__(self):
        if not (self.size > 0):
            raise DomainError("diamond size must be positive")


def cross_ratio(a, b, c, d):
    """|a-c||b-d| / (|a-d||b-c|), invariant under affine coordinate changes."""
    pts = (a, b, c, d)
    for i in range(4):
        for j in range(i + 1, 4):
            if pts[i] == pts[j]:
                raise DomainError("cross_ratio needs four distinct points")
    return abs(a - c) * abs(b - d) / (abs(a - d) * abs(b - c))


def poincare_length(sub, whole):
    """Log cross-ratio measuring `sub` in the Poincare metric of `whole`.

    Grows without bound as sub fills whole and tends to 0 as sub shrinks.
    """
    if not whole.contains_interval(sub, strict=True):
        raise DomainError("sub must lie strictly inside whole")
    a, b = sub.lo, sub.hi
    c, d = whole.lo, whole.hi
    return math.log((b - c) * (d - a) / ((a - c) * (d - b)))


def height(z, base):
    """Height of a plane point over an interval: |y|/min(x, 1-x) after
    normalizing base to (0, 1)."""
    if isinstance(z, PlanePoint):
        x, y = z.x, z.y
    else:
        x, y = z
    if not base.contains(x, strict=True):
        raise DomainError("height needs z.x strictly inside the base interval")
    u = (x - base.lo) / base.length()
    v = abs(y) / base.length()
    return v / min(u, 1.0 - u)


def diamond_contains(d, z):
    if isinstance(z, PlanePoint):
        x = z.x
    else:
        x = z[0]
    if not d.base.contains(x, strict=True):
        return False
    return height(z, d.base) < d.size


def delta_of_homography(g, fixed, x):
    """Signed displacement of an orientation-preserving homography fixing
    both endpoints of `fixed`, evaluated from its action at x.

    Zero for the identity, positive when g pushes points toward the left
    endpoint, and independent of the choice of x.
    """
    a, b = fixed.lo, fixed.hi
    if not fixed.contains(x, strict=True):
        raise DomainError("sample point must be strictly inside the fixed interval")
    gx = g(x)
    if not fixed.contains(gx, strict=True):
        raise DomainError("homography image left the fixed interval")
    return math.log((x - a) * (b - gx) / ((gx - a) * (b - x)))


@dataclass(frozen=True)
class HomographyFix:
    """The homography fixing both endpoints of `fixed` with displacement
    `delta`; delta == 0 is exactly the identity."""

    fixed: Interval
    delta: float

    def __call__(self, x):
        a, b = self.fixed.lo, self.fixed.hi
        if x == a or x == b:
            return x
        lam = math.exp(-self.delta)
        u = (x - a) / (b - x)
        v = lam * u
        return (a + b * v) / (1.0 + v)

    def delta_at(self, x):
        return delta_of_homography(self, self.fixed, x)


def delta_to_point_map(fixed, x, gx):
    """Displacement of the unique endpoint-fixing homography sending x to gx."""
    a, b = fixed.lo, fixed.hi
    if not (fixed.contains(x) and fixed.contains(gx)):
        raise DomainError("both x and g(x) must lie inside the fixed interval")
    return math.log((x - a) * (b - gx) / ((gx - a) * (b - x)))


def find_preimage(F, interval, target, tol=config.ROOT_TOL, max_iter=200):
    """Solve F(x) = target for monotone continuous F on `interval`.

    Bisection tightened by a secant step; raises NoSolutionError when the
    target is outside [F(lo), F(hi)] and ContractViolationError when the
    sampled values are not monotone.
    """
    lo, hi = interval.lo, interval.hi
    flo, fhi = F(lo), F(hi)
    if flo == target:
        return lo
    if fhi == target:
        return hi
    sign = 1.0 if fhi > flo else -1.0
    if sign * (target - flo) < 0 or sign * (fhi - target) < 0:
        raise NoSolutionError(
            f"target {target} outside range [{min(flo, fhi)}, {max(flo, fhi)}]")
    a, b = lo, hi
    fa, fb = flo, fhi
    x = 0.5 * (a + b)
    for _ in range(max_iter):
        # secant proposal, clipped into the bracket
        if fb != fa:
            xs = a + (target - fa) * (b - a) / (fb - fa)
            if not (a < xs < b):
                xs = 0.5 * (a + b)
        else:
            xs = 0.5 * (a + b)
        x = xs
        fx = F(x)
        if sign * (fx - fa) < -abs(tol) or sign * (fb - fx) < -abs(tol):
            raise ContractViolationError(
                f"non-monotone sampling detected at x={x}")
        if abs(fx - target) <= tol or (b - a) <= tol * max(1.0, abs(x)):
            break
        if sign * (fx - target) < 0:
            a, fa = x, fx
        else:
            b, fb = x, fx
        # plain bisection every other step keeps worst-case convergence
        xm = 0.5 * (a + b)
        fm = F(xm)
        if sign * (fm - target) < 0:
            a, fa = xm, fm
        else:
            b, fb = xm, fm
    else:
        x = 0.5 * (a + b)
    if config.CHECK_ROOTS:
        resid = abs(F(x) - target)
        if resid > 100 * max(tol, 1e-15):
            raise ContractViolationError(
                f"find_preimage residual {resid} exceeds tolerance {tol}")
    return x


def affine_between(src, dst):
    """The increasing affine map taking interval src onto interval dst."""
    slope = dst.length() / src.length()
    return lambda x, s=src, d=dst, m=slope: d.lo + (x - s.lo) * m


def smoothstep(t):
    """Cubic smoothstep clamped to [0, 1]."""
    if t <= 0.0:
        return 0.0
    if t >= 1.0:
        return 1.0
    return t * t * (3.0 - 2.0 * t)
