"""Construction and refinement of induced maps.

The first-return map on the fundamental inducing domain (-q, q) is built by
a worklist that pushes monotone pieces forward until they re-enter the
domain; endpoints of branch domains are preimages of +-q located by
monotone root finding and shared between neighbors, so partitions stay
gap-free at machine precision.

Refinements (boundary refinement, critical pull-back of branch partitions,
filling-in at the stopping-rule level, preferred-map adjustment) all return
new InducedMap values; branches they do not touch are reused unchanged.
"""

import math
from dataclasses import dataclass, replace
from collections import deque

from . import config
from .config import RefinementBudget
from .core import Interval, cross_ratio, find_preimage
from .errors import (BudgetError, ContractViolationError, CorrespondenceError,
                     DomainError, NoSolutionError, StructureError)
from .unimodal import fixed_point_q

MONOTONE = "monotone"
FOLDING = "folding"
INDIFFERENT = "indifferent"


@dataclass(frozen=True)
class Branch:
    """One branch of an induced map.

    lo, hi        : open domain
    s             : stopping time (ignored for indifferent branches)
    kind          : monotone | folding | indifferent
    sbar          : settling time; folding only (f^sbar is monotone on the
                    domain, the fold happens on the next application)
    v_lo, v_hi    : one-sided limits of f^s at the endpoints
    critical_value: image of the fold center (folding only)
    fold_center   : the point taken to 0 by f^sbar (folding only)
    """

    lo: float
    hi: float
    s: int
    kind: str
    sbar: int = 0
    v_lo: float = math.nan
    v_hi: float = math.nan
    critical_value: float = math.nan
    fold_center: float = math.nan

    @property
    def domain(self):
        return Interval(self.lo, self.hi)

    def length(self):
        return self.hi - self.lo

    @property
    def image(self):
        if self.kind == MONOTONE:
            lo, hi = sorted((self.v_lo, self.v_hi))
            return Interval(lo, hi)
        if self.kind == FOLDING:
            ends = [self.v_lo, self.v_hi, self.critical_value]
            return Interval(min(ends), max(ends))
        raise StructureError("indifferent branches have no image")

    def contains(self, x):
        return self.lo < x < self.hi

    def __str__(self):
        return (f"Branch[{self.lo:.6g},{self.hi:.6g}] s={self.s} {self.kind}"
                + (f" sbar={self.sbar} c={self.critical_value:.6g}"
                   if self.kind == FOLDING else ""))


@dataclass(frozen=True)
class InducedMap:
    """A branch decomposition of an induced map x -> f^{s(x)}(x)."""

    f: object
    domain: Interval
    branches: tuple

    def __post_init__(self):
        prev = None
        for b in self.branches:
            if prev is not None and b.lo < prev - 1e-15:
                raise StructureError("branches overlap or are unsorted")
            prev = b.hi

    def branch_at(self, x):
        """The branch whose open domain contains x, or None (gap)."""
        for b in self.branches:
            if b.contains(x):
                return b
        return None

    def evaluate(self, x):
        b = self.branch_at(x)
        if b is None or b.kind == INDIFFERENT:
            raise DomainError(f"{x} is not in the domain of the induced map")
        return self.f.iterate(x, b.s)

    def folding_branches(self):
        return [b for b in self.branches if b.kind == FOLDING]

    def monotone_branches(self):
        return [b for b in self.branches if b.kind == MONOTONE]

    def external(self):
        """The two extreme branches."""
        return self.branches[0], self.branches[-1]

    def gap_measure(self):
        total = self.domain.length()
        covered = sum(b.length() for b in self.branches if b.kind != INDIFFERENT)
        return total - covered

    def is_regular(self, tol=1e-3):
        return self.gap_measure() < tol * self.domain.length()

    def replace_branch(self, old, new_branches):
        out = []
        for b in self.branches:
            if b is old:
                out.extend(new_branches)
            else:
                out.append(b)
        return replace(self, branches=tuple(sorted(out, key=lambda b: b.lo)))

    def common_critical_value(self, tol=1e-9):
        folds = self.folding_branches()
        if not folds:
            return None
        c = folds[0].critical_value
        for b in folds[1:]:
            if abs(b.critical_value - c) > tol:
                return None
        return c

    def adjacent_ratio(self):
        """Largest length ratio of adjacent branch domains."""
        worst = 1.0
        for a, b in zip(self.branches, self.branches[1:]):
            r = max(a.length() / b.length(), b.length() / a.length())
            worst = max(worst, r)
        return worst


def _preimage(f, n, interval, target, v_lo, v_hi, tol=config.ROOT_TOL):
    """Solve f^n(x) = target on interval with known endpoint values.

    Deep compositions amplify the 1e-12 root tolerance of earlier splits,
    so a target that falls just outside the freshly evaluated range still
    snaps to the endpoint whose stored value it matches.
    """
    for end, v in ((interval.lo, v_lo), (interval.hi, v_hi)):
        if abs(v - target) <= 1e-13 * max(1.0, abs(target)):
            return end
    F = lambda x: f.iterate(x, n)
    try:
        return find_preimage(F, interval, target, tol=tol)
    except NoSolutionError:
        d_lo, d_hi = abs(v_lo - target), abs(v_hi - target)
        if min(d_lo, d_hi) <= 1e-7:
            return interval.lo if d_lo <= d_hi else interval.hi
        raise


# ----------------------------------------------------------------------
# first return map
# ----------------------------------------------------------------------

def first_return_map(f, max_time=None, min_len=None, budget=None, _plan=None):
    """The first return map on the fundamental inducing domain (-q, q).

    Branches cover the points whose return time is at most max_time and
    whose branch is at least min_len long; there is at most one central
    folding branch, all other branches are monotone.  When the critical
    orbit does not come back within the budget (a = 2 is the classic case)
    the central region is reported as a single indifferent branch.

    _plan replays the split decisions of a previous construction so that a
    topologically conjugate map acquires the combinatorially identical
    partition; a mismatch raises CorrespondenceError.
    """
    budget = budget or RefinementBudget()
    if max_time is None:
        max_time = budget.max_time
    if min_len is None:
        min_len = budget.min_len
    q = fixed_point_q(f)
    dom = Interval(-q, q)
    cv = float(f(0.0))
    if cv <= q:
        raise StructureError("critical value inside (-q, q); no first return structure")

    recording = [] if _plan is None else None
    plan_iter = iter(_plan) if _plan is not None else None

    # worklist items: (xlo, xhi, k, wlo, whi) with f^k monotone on (xlo,xhi),
    # value endpoints wlo = f^k(xlo+), whi = f^k(xhi-), image outside (-q, q)
    work = deque()
    work.append((0.0, q, 1, cv, q))
    right_branches = []
    central = None
    central_hole = None
    n_steps = 0

    while work:
        xlo, xhi, k, wlo, whi = work.popleft()
        if k >= max_time:
            if xlo == 0.0:
                central_hole = xhi
            continue
        n_steps += 1
        if n_steps > 50 * budget.max_branches:
            raise BudgetError("first_return_map worklist exceeded budget")
        k1 = k + 1
        vlo, vhi = float(f(wlo)), float(f(whi))
        # crossings of -q and q inside the new image interval
        lo_v, hi_v = min(vlo, vhi), max(vlo, vhi)
        crossings = [t for t in (-q, q) if lo_v < t < hi_v]
        pattern = tuple(sorted(crossings))
        if plan_iter is not None:
            try:
                expected = next(plan_iter)
            except StopIteration:
                raise CorrespondenceError("replayed construction ran long", index=n_steps)
            if len(expected) != len(pattern):
                raise CorrespondenceError(
                    f"split pattern mismatch at worklist step {n_steps}", index=n_steps)
        else:
            recording.append(pattern)

        cuts = []
        for t in pattern:
            x_t = _preimage(f, k1, Interval(xlo, xhi), t, vlo, vhi)
            cuts.append((x_t, t))
        cuts.sort()
        xs = [xlo] + [cx for cx, _ in cuts] + [xhi]
        vals = {xlo: vlo, xhi: vhi}
        for cx, t in cuts:
            vals[cx] = t
        for a, b in zip(xs, xs[1:]):
            if not (b > a):
                continue
            va, vb = vals[a], vals[b]
            midv = 0.5 * (va + vb)
            if -q < midv < q:
                # returned at time k1
                if a == 0.0:
                    central = Branch(-b, b, k1, FOLDING, sbar=0,
                                     v_lo=vb, v_hi=vb, critical_value=va,
                                     fold_center=0.0)
                else:
                    right_branches.append(Branch(a, b, k1, MONOTONE,
                                                 v_lo=va, v_hi=vb))
            else:
                if a == 0.0 or (b - a) >= min_len:
                    work.append((a, b, k1, va, vb))

    branches = list(right_branches)
    # mirror the right half onto the left half; f^s(-x) = f^s(x)
    for b in right_branches:
        branches.append(Branch(-b.hi, -b.lo, b.s, MONOTONE,
                               v_lo=b.v_hi, v_hi=b.v_lo))
    if central is not None:
        branches.append(central)
    elif central_hole is not None:
        branches.append(Branch(-central_hole, central_hole, 0, INDIFFERENT))
    branches.sort(key=lambda b: b.lo)
    m = InducedMap(f, dom, tuple(branches))
    if _plan is None:
        return m, recording
    return m, None


def first_return_pair(f, fhat, budget=None):
    """First return maps of a conjugate pair with matching combinatorics."""
    budget = budget or RefinementBudget()
    m, plan = first_return_map(f, budget=budget)
    mhat, _ = first_return_map(fhat, budget=budget, _plan=plan)
    if len(m.branches) != len(mhat.branches):
        raise CorrespondenceError(
            f"branch counts differ: {len(m.branches)} vs {len(mhat.branches)}")
    for i, (a, b) in enumerate(zip(m.branches, mhat.branches)):
        if a.kind != b.kind or (a.kind != INDIFFERENT and a.s != b.s):
            raise CorrespondenceError(
                f"branch {i} mismatch: {a.kind}/s={a.s} vs {b.kind}/s={b.s}",
                index=i)
    return m, mhat


# ----------------------------------------------------------------------
# extendability
# ----------------------------------------------------------------------

def _lap_interval(f, v):
    """The monotone lap of f containing value v (critical point at 0)."""
    return Interval(0.0, 1.0) if v >= 0 else Interval(-1.0, 0.0)


def _maximal_monotone_extension(f, interval, s):
    """Largest (c, d) containing `interval` on which f^s stays monotone
    inside [-1, 1], found by sweeping the lap constraints backwards."""
    mids = []
    x = interval.mid()
    for j in range(s):
        mids.append(x)
        x = float(f(x))
    lo, hi = -1.0, 1.0
    ext = Interval(lo, hi)
    for j in range(s - 1, -1, -1):
        lap = _lap_interval(f, mids[j])
        v_lap_lo, v_lap_hi = float(f(lap.lo)), float(f(lap.hi))
        lo_v, hi_v = min(v_lap_lo, v_lap_hi), max(v_lap_lo, v_lap_hi)
        a = max(ext.lo, lo_v)
        b = min(ext.hi, hi_v)
        if not (a < b):
            return None
        # pull (a, b) back through f restricted to the lap
        ends = []
        for t in (a, b):
            if t <= lo_v:
                x_t = lap.lo if v_lap_lo <= v_lap_hi else lap.hi
            elif t >= hi_v:
                x_t = lap.hi if v_lap_hi >= v_lap_lo else lap.lo
            else:
                x_t = find_preimage(lambda u: float(f(u)), lap, t)
            ends.append(x_t)
        ext = Interval(min(ends), max(ends))
    return ext


def extendability_margin(b, m):
    """Cross-ratio margin of the maximal monotone extension of a branch.

    For folding branches the margin is the minimum over the monotone
    factors: the settled part f^sbar on the domain, and the monotone tail
    of the critical part.  The tail's endpoint at the critical value is the
    image of the fold center, interior to the symmetric domain, so only the
    outward side constrains the extension there.  Returns 0 when there is
    no room to extend.
    """
    f = m.f
    if b.kind == MONOTONE:
        return _monotone_margin(f, b.domain, b.s)
    if b.kind == FOLDING:
        margins = []
        if b.sbar >= 1:
            margins.append(_monotone_margin(f, b.domain, b.sbar))
        tail = b.s - b.sbar - 1
        if tail >= 1:
            w_end = f.iterate(b.lo, b.sbar + 1)
            w_c = float(f(0.0))
            lo, hi = sorted((w_end, w_c))
            if hi - lo > 1e-14:
                free = "hi" if w_c > w_end else "lo"
                margins.append(_monotone_margin(f, Interval(lo, hi), tail,
                                                free_side=free))
        return min(margins) if margins else math.inf
    raise DomainError("indifferent branches have no extendability margin")


def _monotone_margin(f, interval, s, free_side=None):
    """Extendability cross-ratio; `free_side` marks an endpoint that is not
    a genuine branch edge (the limit of the cross-ratio as that side's
    extension grows without bound)."""
    if s == 0:
        return math.inf
    ext = _maximal_monotone_extension(f, interval, s)
    if ext is None:
        return 0.0
    a, b = interval.lo, interval.hi
    c, d = ext.lo, ext.hi
    if c > a + 1e-12 or d < b - 1e-12:
        # extension lost the branch; numerical failure counts as no margin
        return 0.0
    ga, gb = f.iterate(a, s), f.iterate(b, s)
    gc, gd = f.iterate(c, s), f.iterate(d, s)
    try:
        if free_side == "hi":
            if gc == ga:
                return 0.0
            return abs(ga - gc) / abs(gb - gc)
        if free_side == "lo":
            if gd == gb:
                return 0.0
            return abs(gb - gd) / abs(ga - gd)
        if gc == ga or gd == gb:
            return 0.0
        return cross_ratio(ga, gb, gc, gd)
    except (DomainError, ZeroDivisionError):
        return 0.0


# ----------------------------------------------------------------------
# refinements
# ----------------------------------------------------------------------

def _pull_branch_through(f, outer, inner_branches, budget, keep_center=True):
    """Partition dom(outer) by outer-preimages of inner branch domains.

    outer is monotone or one monotone side of a fold; returns new branches
    with composed stopping data.  Pieces shorter than budget.min_len are
    dropped (they become gaps).
    """
    out = []
    lo, hi = outer.lo, outer.hi
    vlo, vhi = outer.v_lo, outer.v_hi
    sign = 1.0 if vhi >= vlo else -1.0
    img_lo, img_hi = min(vlo, vhi), max(vlo, vhi)
    for d in inner_branches:
        a = max(d.lo, img_lo)
        b = min(d.hi, img_hi)
        if not (b - a > 1e-15):
            continue
        xa = _preimage(f, outer.s, outer.domain, a if sign > 0 else b, vlo, vhi)
        xb = _preimage(f, outer.s, outer.domain, b if sign > 0 else a, vlo, vhi)
        plo, phi = min(xa, xb), max(xa, xb)
        if phi - plo < budget.min_len:
            continue
        va = f.iterate(a, d.s) if d.kind != INDIFFERENT else math.nan
        vb = f.iterate(b, d.s) if d.kind != INDIFFERENT else math.nan
        w_lo, w_hi = (va, vb) if sign > 0 else (vb, va)
        if d.kind == MONOTONE:
            out.append(Branch(plo, phi, outer.s + d.s, MONOTONE,
                              v_lo=w_lo, v_hi=w_hi))
        elif d.kind == FOLDING:
            center = _preimage(f, outer.s, outer.domain, d.fold_center, vlo, vhi)
            out.append(Branch(plo, phi, outer.s + d.s, FOLDING,
                              sbar=outer.s + d.sbar,
                              v_lo=w_lo, v_hi=w_hi,
                              critical_value=d.critical_value,
                              fold_center=center))
        else:
            out.append(Branch(plo, phi, 0, INDIFFERENT))
    return out


def boundary_refine(m, side, depth=None, to_point=None, budget=None):
    """Compose the extreme branch on `side` with the whole map, repeatedly.

    depth = 0 returns the input unchanged; to_point refines until the given
    point leaves the extreme branch.  All other branches are unchanged.
    """
    budget = budget or RefinementBudget()
    if depth is None and to_point is None:
        raise DomainError("need depth or to_point")
    if depth == 0:
        return m
    original = m
    steps = 0
    while True:
        ext = m.branches[0] if side == "left" else m.branches[-1]
        if ext.kind != MONOTONE:
            raise DomainError(f"extreme branch on the {side} is not monotone")
        if to_point is not None and not ext.contains(to_point):
            break
        if depth is not None and steps >= depth:
            break
        subs = _pull_branch_through(m.f, ext, original.branches, budget)
        if not subs:
            raise BudgetError("boundary refinement produced no branches")
        m = m.replace_branch(ext, subs)
        steps += 1
        if steps > 10 * budget.depth + 1000:
            raise BudgetError("boundary refinement failed to reach the target point")
        if len(m.branches) > budget.max_branches:
            raise BudgetError("boundary refinement exceeded branch budget")
    return m


def refine_to_adjacent_folding_depth(m, b, budget=None, comparability=None):
    """Boundary-refine monotone branch b until the sub-branch adjacent to
    its folding neighbor has length comparable to the neighbor's.

    Idempotent: once the adjacent branch is within the comparability window
    the map is returned unchanged.
    """
    budget = budget or RefinementBudget()
    comp = comparability or config.COMPARABILITY
    idx = m.branches.index(b)
    fold = None
    shared_side = None
    for j, side in ((idx - 1, "left"), (idx + 1, "right")):
        if 0 <= j < len(m.branches) and m.branches[j].kind == FOLDING:
            gap = (b.lo - m.branches[j].hi) if side == "left" else (m.branches[j].lo - b.hi)
            if abs(gap) < 1e-9:
                fold = m.branches[j]
                shared_side = side
                break
    if fold is None:
        raise DomainError("branch has no adjacent folding neighbor")
    if b.length() <= comp * fold.length():
        return m
    # the cascade must accumulate at the endpoint shared with the fold
    shared_value = b.v_lo if shared_side == "left" else b.v_hi
    inner_side = "left" if shared_value < 0 else "right"
    target = comp * fold.length()
    refined = m
    k = 0
    while True:
        k += 1
        inner = boundary_refine(m, inner_side, depth=k, budget=budget)
        subs = _pull_branch_through(m.f, b, inner.branches, budget)
        if not subs:
            raise BudgetError("refinement produced no branches")
        adj = subs[-1] if shared_side == "right" else subs[0]
        if adj.length() <= target:
            if adj.length() * comp < fold.length():
                # overshot the window; report rather than silently accept
                raise ContractViolationError(
                    "adjacent branch left the comparability window")
            return refined.replace_branch(b, subs)
        if k > budget.depth + 50:
            raise BudgetError("comparability depth not reached within budget")


def _compose_with(f, branch, host):
    """Compose a folding branch with a monotone branch containing its image."""
    return replace(branch, s=branch.s + host.s,
                   v_lo=float(f.iterate(branch.v_lo, host.s)),
                   v_hi=float(f.iterate(branch.v_hi, host.s)),
                   critical_value=float(f.iterate(branch.critical_value, host.s)))


def escape_external(m, branch, budget=None):
    """Compose a folding branch with an external branch for as long as the
    fold's image is contained in that external branch.

    The external branch ends at the repelling point +-q, so each
    composition lengthens the image; the loop stops exactly when the image
    is no longer buried inside one external domain.  Returns the new branch
    and the composition count.
    """
    budget = budget or RefinementBudget()
    b = branch
    n = 0
    while True:
        host = None
        img = b.image
        for ext in m.external():
            if ext.kind != MONOTONE:
                continue
            if ext.lo - 1e-12 <= img.lo and img.hi <= ext.hi + 1e-12:
                host = ext
                break
        if host is None:
            return b, n
        b = _compose_with(m.f, b, host)
        n += 1
        if n > budget.escape_budget:
            raise BudgetError("fold image failed to escape the external branch")


def escape_extreme_of(inner, branch, f, budget=None):
    """Pull-back time escape: while a fold's critical value sits in an
    extreme domain of the inner map, compose with that extreme branch.
    Creates no new branches."""
    budget = budget or RefinementBudget()
    b = branch
    n = 0
    while True:
        host = None
        for ext in inner.external():
            if ext.kind == MONOTONE and ext.contains(b.critical_value):
                host = ext
                break
        if host is None:
            return b, n
        img = b.image
        if not (host.lo - 1e-12 <= img.lo and img.hi <= host.hi + 1e-12):
            # composing further would leave the monotone domain; the value
            # already sits in a monotone branch, so marking can proceed
            return b, n
        b = _compose_with(f, b, host)
        n += 1
        if n > budget.escape_budget:
            raise BudgetError("critical value failed to escape the extreme domain")


def adjust_to_preferred(m, budget=None, eps=None):
    """Compose folding branches with external branches until no critical
    value is buried inside an external branch."""
    budget = budget or RefinementBudget()
    out = []
    for b in m.branches:
        if b.kind == FOLDING:
            b, _ = escape_external(m, b, budget)
        out.append(b)
    return replace(m, branches=tuple(out))


def is_preferred(m, eps=None, tol=1e-9):
    """Check the defining conditions of a preferred map; returns (ok, why)."""
    eps = config.EXTEND_EPSILON if eps is None else eps
    left, right = m.external()
    if left.kind != MONOTONE or right.kind != MONOTONE:
        return False, "external branches must be monotone"
    if abs(left.lo - m.domain.lo) > 1e-7 or abs(right.hi - m.domain.hi) > 1e-7:
        return False, "branches accumulate at the domain endpoints"
    folds = m.folding_branches()
    if folds:
        c = m.common_critical_value(tol=1e-7)
        if c is None:
            return False, "folding branches have different critical values"
        for b in folds:
            for ext in (left, right):
                if ext.lo <= b.image.lo and b.image.hi <= ext.hi:
                    return False, "folding image inside an external branch"
    for b in m.branches:
        if b.kind == INDIFFERENT:
            return False, "indifferent branch present"
        if extendability_margin(b, m) <= eps:
            return False, f"branch at [{b.lo:.4g},{b.hi:.4g}] not extendable"
    return True, ""


# ----------------------------------------------------------------------
# stopping-rule level pull-back and filling-in
# ----------------------------------------------------------------------

def critical_pullback_induced(m, psi, inner, budget=None):
    """Refine folding branch psi by composing it with the branches of
    `inner`; the central piece must land on a monotone branch of inner.

    Returns (new map, new central branch).  Raises StructureError when the
    critical value sits in a folding or unresolved domain of inner.
    """
    budget = budget or RefinementBudget()
    f = m.f
    c = psi.critical_value
    host = inner.branch_at(c)
    if host is None:
        raise StructureError("critical value fell into an unresolved gap")
    if host.kind != MONOTONE:
        raise StructureError("critical value fell into a non-monotone domain")
    z = psi.fold_center
    new = []
    # two monotone sides of the fold
    sides = []
    if psi.lo < z:
        sides.append(Branch(psi.lo, z, psi.s, MONOTONE,
                            v_lo=psi.v_lo, v_hi=psi.critical_value))
    if z < psi.hi:
        sides.append(Branch(z, psi.hi, psi.s, MONOTONE,
                            v_lo=psi.critical_value, v_hi=psi.v_hi))
    for side in sides:
        new.extend(_pull_branch_through(f, side, inner.branches, budget))
    # merge the two pieces adjacent to the fold center into one folding branch
    left_center = None
    right_center = None
    for p in list(new):
        if abs(p.hi - z) < 1e-13:
            left_center = p
        if abs(p.lo - z) < 1e-13:
            right_center = p
    c_new = float(f.iterate(c, host.s))
    if left_center is not None and right_center is not None:
        new.remove(left_center)
        new.remove(right_center)
        center = Branch(left_center.lo, right_center.hi, psi.s + host.s,
                        FOLDING, sbar=psi.sbar,
                        v_lo=left_center.v_lo, v_hi=right_center.v_hi,
                        critical_value=c_new, fold_center=z)
        center, _ = escape_extreme_of(inner, center, f, budget)
        new.append(center)
    else:
        center = None
    mm = m.replace_branch(psi, sorted(new, key=lambda b: b.lo))
    if len(mm.branches) > budget.max_branches:
        raise BudgetError("pull-back exceeded branch budget")
    return mm, center


def fill_induced(m_base, budget=None, stages=None):
    """Filling-in at the stopping-rule level: repeatedly refine all folding
    branches of the base map by pulling back the latest refinement."""
    budget = budget or RefinementBudget()
    stages = budget.fill_stages if stages is None else stages
    latest = m_base
    for _ in range(max(stages, 1)):
        cur = m_base
        for psi in m_base.folding_branches():
            cur, _ = critical_pullback_induced(cur, psi, latest, budget)
        latest = cur
    return latest


def step_induced(m, budget=None):
    """One stage of the staged construction at the stopping-rule level:
    critical pull-back on all folding branches followed by filling-in."""
    budget = budget or RefinementBudget()
    if not m.folding_branches():
        return m
    return fill_induced(m, budget)


@dataclass
class BasicDynamicsReport:
    stages: list            # per stage: (critical_value, kind_of_domain, ok)
    passed: bool
    indeterminate: bool = False

    def __bool__(self):
        return self.passed and not self.indeterminate


def basic_dynamics_check(f, stages, budget=None):
    """Run the inducing stages and report, per stage, whether the critical
    value of the folding branches lies in a monotone domain."""
    if stages < 0:
        raise DomainError("stages must be >= 0")
    budget = budget or RefinementBudget()
    records = []
    if stages == 0:
        return BasicDynamicsReport([], True)
    m, _ = first_return_map(f, budget=budget)
    m = adjust_to_preferred(m, budget)
    for k in range(stages):
        c = central_critical_value(m)
        if c is None:
            records.append((math.nan, "none", True))
            break
        host = m.branch_at(c)
        kind = host.kind if host is not None else "gap"
        ok = kind == MONOTONE
        records.append((c, kind, ok))
        if not ok:
            return BasicDynamicsReport(
                records, False, indeterminate=(kind == "gap"))
        if k + 1 < stages:
            try:
                m = step_induced(m, budget)
                m = adjust_to_preferred(m, budget)
            except (BudgetError, StructureError):
                return BasicDynamicsReport(records, False, indeterminate=True)
    return BasicDynamicsReport(records, all(r[2] for r in records))


def central_critical_value(m):
    """Critical value of the fold whose domain contains the critical point,
    or of the innermost fold; None when the map has no folding branch."""
    folds = m.folding_branches()
    if not folds:
        return None
    for b in folds:
        if b.lo < 0.0 < b.hi:
            return b.critical_value
    central = min(folds, key=lambda b: min(abs(b.lo), abs(b.hi)))
    return central.critical_value


def export_branch_table(m, path=None):
    """Delimited text, one row per branch, 17 significant digits."""
    lines = ["lo,hi,s,kind,sbar,image_lo,image_hi,margin"]
    for b in m.branches:
        if b.kind == INDIFFERENT:
            img_lo = img_hi = margin = math.nan
        else:
            img = b.image
            img_lo, img_hi = img.lo, img.hi
            margin = extendability_margin(b, m)
        lines.append(",".join([
            f"{b.lo:.17g}", f"{b.hi:.17g}", str(b.s), b.kind, str(b.sbar),
            f"{img_lo:.17g}", f"{img_hi:.17g}", f"{margin:.17g}"]))
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
