"""The class-C map model: even maps f = h(x^2) of [-1,1] with non-positive
Schwarzian, their kneading data, the itinerary-matching conjugacy oracle and
the Collet-Eckmann derivative-growth fit.

Shipped families:

* ``quadratic``             h(u) = 1 - a*u
* ``conjugated-quadratic``  phi o f_a o phi^{-1} with phi(x) = (x + c x^3)/(1+c),
                            re-expressed in h(x^2) form through
                            h = phi o h_a o P^{-1}, P(t) = t (1 + c t)^2 / (1+c)^2.

The conjugated family exists so that two distinct maps with equal kneading
sequences are available for conjugacy experiments; two members of a single
family at different parameters are never mutually conjugate.
"""

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import config
from .errors import (DomainError, NotConjugateError, PrecisionError,
                     StructureError)

# symbols for kneading itineraries
L, C, R = -1, 0, 1
_SYMBOL_CHAR = {L: "L", C: "C", R: "R"}


def compose_jet3(outer, inner):
    """Chain rule to third order: jets are (value, d1, d2, d3) tuples,
    `outer` evaluated at inner's value."""
    g, g1, g2, g3 = outer
    f, f1, f2, f3 = inner
    return (
        g,
        g1 * f1,
        g2 * f1 * f1 + g1 * f2,
        g3 * f1 ** 3 + 3.0 * g2 * f1 * f2 + g1 * f3,
    )


class UnimodalMap:
    """Base class: a map f(x) = h(x^2) with h accessible to third order.

    Subclasses implement h_jet(u) -> (h, h', h'', h''') and carry
    family_id / params for serialization.
    """

    family_id = "abstract"
    params = ()
    label = ""

    # --- h level -----------------------------------------------------
    def h_jet(self, u):
        raise NotImplementedError

    def h(self, u):
        return self.h_jet(u)[0]

    # --- f level -----------------------------------------------------
    def f_jet(self, x):
        """(f, f', f'', f''') at x via the chain rule through u = x^2."""
        h, h1, h2, h3 = self.h_jet(x * x)
        return (
            h,
            2.0 * x * h1,
            2.0 * h1 + 4.0 * x * x * h2,
            12.0 * x * h2 + 8.0 * x ** 3 * h3,
        )

    def __call__(self, x):
        return self.h(np.asarray(x) ** 2 if isinstance(x, np.ndarray) else x * x)

    def derivative(self, x):
        return self.f_jet(x)[1]

    def second(self, x):
        return self.f_jet(x)[2]

    def schwarzian(self, x):
        f, f1, f2, f3 = self.f_jet(x)
        if f1 == 0.0:
            raise DomainError("Schwarzian is singular where f' vanishes")
        return f3 / f1 - 1.5 * (f2 / f1) ** 2

    def iterate(self, x, n):
        for _ in range(n):
            x = self(x)
        return x

    def iterate_jet(self, x, n):
        """Jet of f^n at x, third order."""
        jet = (x, 1.0, 0.0, 0.0)
        for _ in range(n):
            jet = compose_jet3(self.f_jet(jet[0]), jet)
        return jet

    def derivative_n(self, x, n):
        d = 1.0
        for _ in range(n):
            d *= self.derivative(x)
            x = self(x)
        return d

    def spec(self):
        return {"family_id": self.family_id,
                "params": list(self.params),
                "label": self.label}

    def __repr__(self):
        ps = ", ".join(repr(p) for p in self.params)
        return f"{type(self).__name__}({ps})"


class QuadraticFamily(UnimodalMap):
    """h(u) = 1 - a*u, the normalized quadratic family f(x) = 1 - a x^2."""

    family_id = "quadratic"

    def __init__(self, a, label=""):
        if not (0 < a <= 2):
            raise DomainError(f"quadratic family needs 0 < a <= 2, got {a}")
        self.a = float(a)
        self.params = (self.a,)
        self.label = label

    def h_jet(self, u):
        if isinstance(u, np.ndarray):
            return (1.0 - self.a * u, np.full_like(u, -self.a),
                    np.zeros_like(u), np.zeros_like(u))
        return (1.0 - self.a * u, -self.a, 0.0, 0.0)

    def __call__(self, x):
        return 1.0 - self.a * x * x


class ConjugatedQuadratic(UnimodalMap):
    """phi o f_a o phi^{-1} for odd cubic phi(x) = (x + c x^3)/(1 + c).

    Written in class-C form h(u) = phi(h_a(P^{-1}(u))) with
    P(t) = t (1 + c t)^2 / (1 + c)^2, so evenness is exact by construction.
    """

    family_id = "conjugated-quadratic"

    def __init__(self, a, c=0.2, label=""):
        if not (0 < a <= 2):
            raise DomainError(f"needs 0 < a <= 2, got {a}")
        if not (0 <= c < 1):
            raise DomainError(f"needs 0 <= c < 1, got {c}")
        self.a = float(a)
        self.c = float(c)
        self.params = (self.a, self.c)
        self.label = label

    # phi and the even square P(t) = phi(sqrt t)^2
    def phi(self, x):
        return (x + self.c * x ** 3) / (1.0 + self.c)

    def phi_jet(self, x):
        cc = self.c
        return ((x + cc * x ** 3) / (1 + cc),
                (1 + 3 * cc * x * x) / (1 + cc),
                6 * cc * x / (1 + cc),
                6 * cc / (1 + cc))

    def phi_inv(self, y):
        c = self.c
        x = float(y)
        for _ in range(80):
            fx = (x + c * x ** 3) / (1 + c) - y
            dx = (1 + 3 * c * x * x) / (1 + c)
            step = fx / dx
            x -= step
            if abs(step) < 1e-16 * max(1.0, abs(x)):
                break
        return x

    def _P_jet(self, t):
        c = self.c
        s = (1 + c) ** 2
        return (t * (1 + c * t) ** 2 / s,
                ((1 + c * t) ** 2 + 2 * c * t * (1 + c * t)) / s,
                (4 * c * (1 + c * t) + 2 * c * c * t) / s,
                6 * c * c / s)

    def _P_inv_jet(self, u):
        # invert P by Newton, then inverse-function derivatives
        c = self.c
        t = u * (1 + c) ** 2  # decent first guess for small u growth
        t = min(max(t, 0.0), 4.0)
        for _ in range(80):
            P, P1, _, _ = self._P_jet(t)
            step = (P - u) / P1
            t -= step
            if abs(step) < 1e-16 * max(1.0, abs(t)):
                break
        _, P1, P2, P3 = self._P_jet(t)
        y1 = 1.0 / P1
        y2 = -P2 * y1 ** 3
        y3 = -(P3 * y1 ** 3 + 3 * P2 * y1 * y2) * y1
        return (t, y1, y2, y3)

    def h_jet(self, u):
        if isinstance(u, np.ndarray):
            vals = [self.h_jet(float(t)) for t in np.ravel(u)]
            arrs = [np.array(col).reshape(np.shape(u)) for col in zip(*vals)]
            return tuple(arrs)
        inner = self._P_inv_jet(u)
        a_jet = (1.0 - self.a * inner[0], -self.a, 0.0, 0.0)
        mid = compose_jet3(a_jet, inner)
        return compose_jet3(self.phi_jet(mid[0]), mid)

    def __call__(self, x):
        if isinstance(x, np.ndarray):
            return (self._fq(x) + self.c * self._fq(x) ** 3) / (1 + self.c)
        return self.phi(1.0 - self.a * self.phi_inv(x) ** 2)

    def _fq(self, x):
        # vectorized phi^{-1} by Newton on arrays
        c = self.c
        y = np.asarray(x, dtype=float)
        t = y.copy()
        for _ in range(60):
            t = t - ((t + c * t ** 3) / (1 + c) - y) * (1 + c) / (1 + 3 * c * t * t)
        return 1.0 - self.a * t * t


FAMILIES = {
    QuadraticFamily.family_id: lambda params, label="": QuadraticFamily(*params, label=label),
    ConjugatedQuadratic.family_id: lambda params, label="": ConjugatedQuadratic(*params, label=label),
}


def make_map(family_id, params, label=""):
    if family_id not in FAMILIES:
        raise StructureError(f"unknown family '{family_id}'")
    return FAMILIES[family_id](params, label=label)


def load_map_spec(text_or_path):
    """Map-spec record {family_id, params, label}; decimals round-trip
    bit-exactly through repr."""
    if isinstance(text_or_path, str) and text_or_path.lstrip().startswith("{"):
        rec = json.loads(text_or_path)
    else:
        with open(text_or_path) as fh:
            rec = json.load(fh)
    return make_map(rec["family_id"], rec["params"], rec.get("label", ""))


def dump_map_spec(f, path=None):
    text = json.dumps(f.spec(), indent=0, sort_keys=True)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


# ----------------------------------------------------------------------
# validation
# ----------------------------------------------------------------------

@dataclass
class ValidationReport:
    ok: bool
    failures: list

    def __bool__(self):
        return self.ok


def validate_class_C(f, grid=512, tol=1e-9):
    """Sampled check of the four defining conditions.

    1. f maps [-1,1] into itself.
    2. Schwarzian non-positive wherever f' != 0.
    3. evenness f(-x) = f(x).
    4. critical value f(0) > 0.

    Violations are report entries, never exceptions.
    """
    failures = []
    xs = np.linspace(-1.0, 1.0, max(int(grid), 2))
    vals = np.array([float(f(float(x))) for x in xs])
    bad = np.abs(vals) > 1.0 + tol
    if bad.any():
        failures.append((1, f"|f({xs[bad][0]})| = {abs(vals[bad][0])} > 1"))
    for x in xs:
        x = float(x)
        d = f.derivative(x)
        if abs(d) < 1e-8:
            continue
        s = f.schwarzian(x)
        if s > tol:
            failures.append((2, f"Sf({x}) = {s} > 0"))
            break
    evens = np.array([float(f(float(x))) - float(f(float(-x))) for x in xs])
    if np.abs(evens).max() > tol:
        failures.append((3, f"f not even, max defect {np.abs(evens).max()}"))
    if not float(f(0.0)) > 0.0:
        failures.append((4, f"critical value f(0) = {float(f(0.0))} not positive"))
    return ValidationReport(not failures, failures)


def fixed_point_q(f, tol=config.ROOT_TOL):
    """The positive fixed point q; (-q, q) is the fundamental inducing domain."""
    g = lambda x: float(f(x)) - x
    lo, hi = 1e-14, 1.0
    glo, ghi = g(lo), g(hi)
    if glo <= 0:
        raise StructureError("critical value must exceed 0 for a positive fixed point")
    if ghi > 0:
        raise StructureError("no positive fixed point in (0, 1]")
    q = brentq(g, lo, hi, xtol=tol)
    return float(q)


# ----------------------------------------------------------------------
# kneading machinery
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class KneadingSequence:
    symbols: tuple

    @property
    def length(self):
        return len(self.symbols)

    def __str__(self):
        return " ".join(_SYMBOL_CHAR[s] for s in self.symbols)

    def __eq__(self, other):
        return isinstance(other, KneadingSequence) and self.symbols == other.symbols

    def common_prefix(self, other):
        n = 0
        for a, b in zip(self.symbols, other.symbols):
            if a != b:
                break
            n += 1
        return n

    def is_periodic_prefix(self):
        """Smallest period p with symbols = (first p symbols) repeated, or None."""
        n = len(self.symbols)
        for p in range(1, n // 2 + 1):
            if all(self.symbols[i] == self.symbols[i % p] for i in range(n)):
                return p
        return None


def itinerary(f, x, n, tol=config.KNEADING_TOL):
    """Symbols of x, f(x), ..., f^{n-1}(x) relative to the critical point."""
    sym = []
    for _ in range(n):
        if abs(x) <= tol:
            sym.append(C)
        elif x > 0:
            sym.append(R)
        else:
            sym.append(L)
        x = float(f(x))
    return tuple(sym)


def kneading_sequence(f, n, tol=config.KNEADING_TOL):
    """Itinerary of the critical value f(0) for n steps."""
    if n < 1:
        raise DomainError("kneading sequence needs n >= 1")
    return KneadingSequence(itinerary(f, float(f(0.0)), n, tol))


def kneading_compare(A, B):
    """Parity-lexicographic order of itineraries for maps with a maximum
    at the critical point: negative when A-points sit left of B-points."""
    flips = 0
    for a, b in zip(A, B):
        if a != b:
            s = 1 if a > b else -1
            return s if flips % 2 == 0 else -s
        if a == R:
            flips += 1
    return 0


def conjugacy_oracle(f, g, x, depth=config.RefinementBudget.oracle_depth,
                     tol=config.KNEADING_TOL):
    """The point of g whose itinerary matches that of x under f.

    Independent realization of the topological conjugacy by bisection in
    the kneading order on monotone laps; monotone increasing in x.
    """
    kf = kneading_sequence(f, depth, tol)
    kg = kneading_sequence(g, depth, tol)
    if kf != kg:
        raise NotConjugateError(
            f"kneading mismatch at position {kf.common_prefix(kg)}",
            depth=kf.common_prefix(kg))
    if not -1.0 <= x <= 1.0:
        raise DomainError("x must lie in [-1, 1]")
    target = itinerary(f, x, depth, tol)
    if C in target[1:] and abs(x) > tol:
        # interior orbit grazing the critical point: ambiguous at this depth
        raise PrecisionError(
            "orbit of x enters the tolerance band of 0; increase depth or move x")
    lo, hi = -1.0, 1.0
    stalled = False
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        cmp_ = kneading_compare(itinerary(g, mid, depth, tol), target)
        if cmp_ < 0:
            lo = mid
        elif cmp_ > 0:
            hi = mid
        else:
            stalled = True
            break
        if hi - lo <= 4e-16 * max(1.0, abs(mid)):
            break
    if stalled and hi - lo > 1e-9:
        raise PrecisionError(
            "itinerary plateau wider than tolerance; increase depth")
    return 0.5 * (lo + hi)


def conjugacy_oracle_grid(f, g, xs, depth=config.RefinementBudget.oracle_depth,
                          tol=config.KNEADING_TOL):
    """Vectorized oracle over an array of points (one bisection per point,
    all advanced in lockstep)."""
    kf = kneading_sequence(f, depth, tol)
    kg = kneading_sequence(g, depth, tol)
    if kf != kg:
        raise NotConjugateError("kneading mismatch", depth=kf.common_prefix(kg))
    xs = np.asarray(xs, dtype=float)
    n = xs.size

    def itins(F, pts):
        sym = np.empty((n, depth), dtype=np.int8)
        cur = pts.copy()
        for j in range(depth):
            sj = np.where(np.abs(cur) <= tol, 0, np.where(cur > 0, 1, -1))
            sym[:, j] = sj
            cur = np.array([float(F(float(t))) for t in cur]) \
                if not _vectorizable(F) else np.asarray(F(cur), dtype=float)
        return sym

    target = itins(f, xs)
    lo = np.full(n, -1.0)
    hi = np.full(n, 1.0)
    for _ in range(75):
        mid = 0.5 * (lo + hi)
        sym = itins(g, mid)
        diff = sym != target
        first = np.where(diff.any(axis=1), diff.argmax(axis=1), depth)
        flips = np.cumsum(target == 1, axis=1)
        cmp_ = np.zeros(n, dtype=int)
        has = first < depth
        idx = first[has]
        rows = np.nonzero(has)[0]
        raw = np.sign(sym[rows, idx] - target[rows, idx])
        parity = np.where(idx > 0, flips[rows, np.maximum(idx - 1, 0)], 0) % 2
        cmp_[rows] = np.where(parity == 0, raw, -raw)
        lo = np.where(cmp_ < 0, mid, lo)
        hi = np.where(cmp_ > 0, mid, hi)
        both = cmp_ == 0
        lo = np.where(both, mid, lo)
        hi = np.where(both, mid, hi)
    return 0.5 * (lo + hi)


def _vectorizable(F):
    try:
        out = F(np.array([0.1, 0.2]))
        return isinstance(out, np.ndarray) and out.shape == (2,)
    except Exception:
        return False


# ----------------------------------------------------------------------
# Collet-Eckmann
# ----------------------------------------------------------------------

@dataclass
class CEFit:
    """Least-squares fit log|Df^n(f(0))| ~ log a_fit + n log b_fit."""

    a_fit: float
    b_fit: float
    n_used: int
    residual: float
    degenerate: bool = False

    @property
    def satisfies_ce(self):
        return not self.degenerate and self.b_fit > 1.0


def collet_eckmann_check(f, N, tol=1e-12):
    """Derivative growth along the orbit of the critical value.

    The growth condition is stated at the critical point, but f'(0) = 0
    makes the literal product vanish; the derivative of f^n is therefore
    evaluated at the critical value f(0), the standard reading.
    """
    if N < 10:
        raise DomainError("collet_eckmann_check needs N >= 10")
    x = float(f(0.0))
    logs = []
    total = 0.0
    degenerate = False
    for n in range(1, N + 1):
        if abs(x) <= tol:
            degenerate = True
            break
        total += math.log(abs(f.derivative(x)))
        logs.append(total)
        x = float(f(x))
    n_used = len(logs)
    if n_used < 3:
        return CEFit(float("nan"), float("nan"), n_used, float("nan"), True)
    ns = np.arange(1, n_used + 1, dtype=float)
    ys = np.array(logs)
    slope, intercept = np.polyfit(ns, ys, 1)
    resid = float(np.sqrt(np.mean((ys - (slope * ns + intercept)) ** 2)))
    return CEFit(math.exp(intercept), math.exp(slope), n_used, resid, degenerate)
