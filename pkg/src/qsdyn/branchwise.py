"""The branchwise-equivalence calculus.

A branchwise equivalence is stored as a sorted sequence of pinned point
pairs (the marked set: every branch endpoint plus whatever pull-backs have
added) together with one evaluator per gap:

* affine pieces interpolate the neighboring pins,
* Moebius pieces realize markings,
* lift pieces solve  psi_hat(y) = inner(psi(x))  with monotone Newton,
  which is the order-preserving lift that critical and monotone pull-backs
  prescribe.

Evaluation at a pinned point returns the stored image bit-exactly; between
pins each evaluator is strictly increasing, so the whole map is an
increasing homeomorphism of [-1, 1] pinned to the identity outside.
"""

import bisect
import math
from dataclasses import dataclass, replace

import numpy as np

from . import config
from .config import RefinementBudget
from .core import Interval
from .errors import (BudgetError, ContractViolationError, CorrespondenceError,
                     DomainError, MarkingError, NotConjugateError,
                     OutOfClassError, StructureError)
from . import induced as ind
from .induced import (Branch, InducedMap, MONOTONE, FOLDING, INDIFFERENT,
                      first_return_pair, adjust_to_preferred, escape_external,
                      escape_extreme_of, is_preferred, central_critical_value,
                      _preimage)
from .unimodal import (kneading_sequence, conjugacy_oracle_grid)


# ----------------------------------------------------------------------
# segment evaluators
# ----------------------------------------------------------------------

class AffineSeg:
    __slots__ = ("x0", "x1", "y0", "y1")

    kind = "affine"

    def __init__(self, x0, x1, y0, y1):
        self.x0, self.x1, self.y0, self.y1 = x0, x1, y0, y1

    def eval(self, x):
        t = (x - self.x0) / (self.x1 - self.x0)
        return self.y0 + t * (self.y1 - self.y0)


class MobiusSeg:
    """Restriction of the increasing Moebius map of (a, b) onto (c, d) with
    multiplier lam in the cross-ratio coordinate t = (x-a)/(b-x)."""

    __slots__ = ("a", "b", "c", "d", "lam")

    kind = "mobius"

    def __init__(self, a, b, c, d, lam):
        self.a, self.b, self.c, self.d, self.lam = a, b, c, d, lam

    @staticmethod
    def through(a, b, c, d, p, pv):
        """The unique increasing Moebius (a,b)->(c,d) with p -> pv."""
        tp = (p - a) / (b - p)
        tq = (pv - c) / (d - pv)
        if tp <= 0 or tq <= 0:
            raise DomainError("marking point must be interior on both sides")
        return MobiusSeg(a, b, c, d, tq / tp)

    def eval(self, x):
        t = self.lam * (x - self.a) / (self.b - x)
        return (self.c + self.d * t) / (1.0 + t)


class LiftSeg:
    """Order-preserving lift through a branch pair: on the covered gap the
    equivalence satisfies  f_tgt^s (E(x)) = inner(f_src^s (x)).

    Endpoint images of the gap are pinned by the owner; the root is found
    by bracketed Newton on the cheap side (f_tgt^s), so nested lifts cost
    one inner evaluation each, independent of nesting depth.
    """

    __slots__ = ("s", "inner", "f_src", "f_tgt", "y0", "y1", "v0", "v1")

    kind = "lift"

    def __init__(self, s, inner, f_src, f_tgt, y0, y1):
        self.s = s
        self.inner = inner
        self.f_src = f_src
        self.f_tgt = f_tgt
        self.y0, self.y1 = y0, y1
        self.v0 = float(f_tgt.iterate(y0, s))
        self.v1 = float(f_tgt.iterate(y1, s))

    def eval(self, x):
        u = float(self.f_src.iterate(x, self.s))
        t = self.inner(u)
        lo_v, hi_v = (self.v0, self.v1) if self.v0 <= self.v1 else (self.v1, self.v0)
        if t <= lo_v:
            return self.y0 if self.v0 <= self.v1 else self.y1
        if t >= hi_v:
            return self.y1 if self.v0 <= self.v1 else self.y0
        a, b = self.y0, self.y1
        va, vb = self.v0, self.v1
        sign = 1.0 if vb >= va else -1.0
        y = a + (t - va) * (b - a) / (vb - va)
        for _ in range(60):
            v, d = _iterate_d1(self.f_tgt, y, self.s)
            err = v - t
            if abs(err) < 1e-13:
                break
            if sign * err > 0:
                b = y
            else:
                a = y
            if d != 0.0:
                step = err / d
                ynew = y - step
            else:
                ynew = 0.5 * (a + b)
            if not (min(a, b) < ynew < max(a, b)):
                ynew = 0.5 * (a + b)
            if ynew == y:
                break
            y = ynew
        return y


def _iterate_d1(f, x, n):
    v, d = x, 1.0
    for _ in range(n):
        d *= f.derivative(v)
        v = float(f(v))
    return v, d


# ----------------------------------------------------------------------
# the equivalence proper
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class MarkingCondition:
    """A ray rooted at `start` (a point of a monotone source domain,
    typically a fold's critical value) pointing `direction`ward so that it
    covers the fold's image."""

    start: float
    direction: str = "left"


class BranchwiseEquivalence:
    """Piecewise homeomorphism of [-1,1] carrying the source branch
    partition onto the target partition; identity outside [-1,1]."""

    def __init__(self, src, tgt, xs, ys, segs, ext_bounds=None):
        self.src = src
        self.tgt = tgt
        self.xs = list(xs)
        self.ys = list(ys)
        self.segs = list(segs)
        if len(self.xs) != len(self.ys) or len(self.segs) != len(self.xs) - 1:
            raise StructureError("knots and segments are inconsistent")
        # interval between the primary external branches: the region on
        # which the staged construction converges to the conjugacy
        self.ext_bounds = ext_bounds

    # -- evaluation ----------------------------------------------------
    def __call__(self, x):
        xs = self.xs
        if x <= xs[0] or x >= xs[-1]:
            return x if abs(x) >= 1.0 else self._edge(x)
        i = bisect.bisect_left(xs, x)
        if i < len(xs) and xs[i] == x:
            return self.ys[i]
        return self.segs[i - 1].eval(x)

    def _edge(self, x):
        # inside [-1,1] but outside the knot range cannot happen: knots
        # always include -1 and 1
        raise StructureError("knot range does not cover [-1, 1]")

    def eval_many(self, xs):
        return np.array([self(float(x)) for x in np.asarray(xs).ravel()])

    @property
    def marked_points(self):
        return list(zip(self.xs, self.ys))

    def knot_index(self, x, tol=0.0):
        i = bisect.bisect_left(self.xs, x)
        for j in (i - 1, i, i + 1):
            if 0 <= j < len(self.xs) and abs(self.xs[j] - x) <= tol:
                return j
        return None

    def max_gap(self, lo=None, hi=None):
        lo = self.ext_bounds[0] if lo is None and self.ext_bounds else (lo or -1.0)
        hi = self.ext_bounds[1] if hi is None and self.ext_bounds else (hi or 1.0)
        worst = 0.0
        for a, b in zip(self.xs, self.xs[1:]):
            if b <= lo or a >= hi:
                continue
            worst = max(worst, min(b, hi) - max(a, lo))
        return worst

    def folding_measure(self):
        return sum(b.length() for b in self.src.folding_branches())

    # -- structural edits (used by the operations below) ----------------
    def _splice(self, lo, hi, new_xs, new_ys, new_segs, src=None, tgt=None):
        """Replace knots and segments strictly inside [lo, hi]; lo and hi
        must already be knots."""
        i = self.xs.index(lo)
        j = self.xs.index(hi)
        xs = self.xs[:i + 1] + list(new_xs) + self.xs[j:]
        ys = self.ys[:i + 1] + list(new_ys) + self.ys[j:]
        segs = self.segs[:i] + list(new_segs) + self.segs[j:]
        return BranchwiseEquivalence(src or self.src, tgt or self.tgt,
                                     xs, ys, segs, ext_bounds=self.ext_bounds)

    def corresponding(self, branch):
        """The target branch matching a source branch (same index)."""
        try:
            i = self.src.branches.index(branch)
        except ValueError:
            raise StructureError("branch does not belong to the source map")
        return self.tgt.branches[i]


# ----------------------------------------------------------------------
# construction of the primary equivalence
# ----------------------------------------------------------------------

def primary_equivalence(src, tgt):
    """Affine on every branch domain and on every gap, pinned to
    corresponding branch endpoints, identity outside [-1, 1]."""
    if len(src.branches) != len(tgt.branches):
        raise CorrespondenceError(
            f"branch counts differ: {len(src.branches)} vs {len(tgt.branches)}")
    for i, (a, b) in enumerate(zip(src.branches, tgt.branches)):
        if a.kind != b.kind or (a.kind != INDIFFERENT and a.s != b.s):
            raise CorrespondenceError(f"branch {i} mismatch", index=i)
    xs = [-1.0]
    ys = [-1.0]
    if src.domain.lo > -1.0:
        xs.append(src.domain.lo)
        ys.append(tgt.domain.lo)
    for a, b in zip(src.branches, tgt.branches):
        for xa, xb in ((a.lo, b.lo), (a.hi, b.hi)):
            if xa > xs[-1] + 1e-15:
                xs.append(xa)
                ys.append(xb)
    if src.domain.hi < 1.0 and src.domain.hi > xs[-1] + 1e-15:
        xs.append(src.domain.hi)
        ys.append(tgt.domain.hi)
    if xs[-1] < 1.0:
        xs.append(1.0)
        ys.append(1.0)
    segs = [AffineSeg(x0, x1, y0, y1)
            for (x0, x1, y0, y1) in zip(xs, xs[1:], ys, ys[1:])]
    left, right = src.external()
    ext = (left.hi, right.lo) if len(src.branches) >= 3 else (src.domain.lo, src.domain.hi)
    return BranchwiseEquivalence(src, tgt, xs, ys, segs, ext_bounds=ext)


# ----------------------------------------------------------------------
# marking
# ----------------------------------------------------------------------

def mark(e, cond, image):
    """Marked version: reduce the host domain to a single piece and replace
    it by the increasing Moebius map sending cond.start to `image`.

    Evaluation outside the host domain is untouched (same segment
    objects); the pair (start, image) becomes a pinned knot.
    """
    host = e.src.branch_at(cond.start)
    if host is None or host.kind != MONOTONE:
        raise DomainError("marking start must lie inside a monotone source domain")
    host_hat = e.corresponding(host)
    if not (host_hat.lo < image < host_hat.hi):
        raise DomainError("marked image must lie inside the corresponding target domain")
    i = e.knot_index(host.lo, tol=1e-14)
    j = e.knot_index(host.hi, tol=1e-14)
    if i is None or j is None:
        raise StructureError("host domain endpoints are not pinned")
    lo, hi = e.xs[i], e.xs[j]
    lo_v, hi_v = e.ys[i], e.ys[j]
    mob = MobiusSeg.through(lo, hi, lo_v, hi_v, cond.start, image)
    left = MobiusSeg(lo, hi, lo_v, hi_v, mob.lam)
    return e._splice(lo, hi, [cond.start], [image], [left, left])


# ----------------------------------------------------------------------
# pull-backs
# ----------------------------------------------------------------------

def _pull_pair_through(e_inner, outer, outer_hat, budget):
    """Pull one monotone piece pair through the inner equivalence.

    Returns (src branches, tgt branches, knot pairs) where the knot pairs
    are the preimages of every inner knot interior to the covered image,
    pinned so that the lift is exact there.
    """
    f, fh = e_inner.src.f, e_inner.tgt.f
    subs_src = ind._pull_branch_through(f, outer, e_inner.src.branches, budget)
    # target side follows the same inner branch indices
    subs_tgt = []
    img_lo, img_hi = sorted((outer_hat.v_lo, outer_hat.v_hi))
    sign_h = 1.0 if outer_hat.v_hi >= outer_hat.v_lo else -1.0
    by_index = {}
    for d_idx, d in enumerate(e_inner.src.branches):
        a = max(d.lo, min(outer.v_lo, outer.v_hi))
        b = min(d.hi, max(outer.v_lo, outer.v_hi))
        if b - a > 1e-15:
            by_index[d_idx] = (a, b)
    src_iter = iter(subs_src)
    sub_pairs = []
    for d_idx in sorted(by_index):
        d = e_inner.src.branches[d_idx]
        dh = e_inner.tgt.branches[d_idx]
        a, b = by_index[d_idx]
        plo = _preimage(f, outer.s, outer.domain,
                        a if outer.v_hi >= outer.v_lo else b,
                        outer.v_lo, outer.v_hi)
        phi_ = _preimage(f, outer.s, outer.domain,
                         b if outer.v_hi >= outer.v_lo else a,
                         outer.v_lo, outer.v_hi)
        plo, phi_ = min(plo, phi_), max(phi_, plo)
        if phi_ - plo < budget.min_len:
            continue
        ah = max(dh.lo, img_lo)
        bh = min(dh.hi, img_hi)
        if bh - ah <= 1e-15:
            raise CorrespondenceError(
                "inner branch covered on one side only", index=d_idx)
        qlo = _preimage(fh, outer_hat.s, outer_hat.domain,
                        ah if sign_h > 0 else bh, outer_hat.v_lo, outer_hat.v_hi)
        qhi = _preimage(fh, outer_hat.s, outer_hat.domain,
                        bh if sign_h > 0 else ah, outer_hat.v_lo, outer_hat.v_hi)
        qlo, qhi = min(qlo, qhi), max(qlo, qhi)
        sub_pairs.append((d_idx, (plo, phi_), (qlo, qhi), d, dh))
    # assemble branch records and knots
    out_src, out_tgt, knots = [], [], []
    for d_idx, (plo, phi_), (qlo, qhi), d, dh in sub_pairs:
        s_new = outer.s + d.s if d.kind != INDIFFERENT else 0
        sh_new = outer_hat.s + dh.s if dh.kind != INDIFFERENT else 0
        def mk(branch, f_, o, lo, hi):
            if branch.kind == INDIFFERENT:
                return Branch(lo, hi, 0, INDIFFERENT)
            va = f_.iterate(lo, o.s + branch.s)
            vb = f_.iterate(hi, o.s + branch.s)
            if branch.kind == MONOTONE:
                return Branch(lo, hi, o.s + branch.s, MONOTONE, v_lo=va, v_hi=vb)
            center = _preimage(f_, o.s, o.domain, branch.fold_center,
                               o.v_lo, o.v_hi)
            return Branch(lo, hi, o.s + branch.s, FOLDING,
                          sbar=o.s + branch.sbar, v_lo=va, v_hi=vb,
                          critical_value=branch.critical_value,
                          fold_center=center)
        out_src.append(mk(d, f, outer, plo, phi_))
        out_tgt.append(mk(dh, fh, outer_hat, qlo, qhi))
    # knots: preimages of every inner knot interior to the image
    lo_u, hi_u = sorted((outer.v_lo, outer.v_hi))
    for u, uh in zip(e_inner.xs, e_inner.ys):
        if not (lo_u + 1e-14 < u < hi_u - 1e-14):
            continue
        x = _preimage(f, outer.s, outer.domain, u, outer.v_lo, outer.v_hi)
        y = _preimage(fh, outer_hat.s, outer_hat.domain, uh,
                      outer_hat.v_lo, outer_hat.v_hi)
        knots.append((x, y))
    return out_src, out_tgt, knots


def _lift_region(e, outer, outer_hat, inner, region, region_hat, knots, budget):
    """Replace evaluation on `region` (whose endpoints are pinned) by the
    lift of `inner` through the branch pair, with `knots` pinned inside."""
    i = e.knot_index(region[0], tol=1e-14)
    j = e.knot_index(region[1], tol=1e-14)
    if i is None or j is None:
        raise StructureError("lift region endpoints are not pinned")
    lo, hi = e.xs[i], e.xs[j]
    inner_knots = sorted(k for k in knots if lo + 1e-15 < k[0] < hi - 1e-15)
    xs = [k[0] for k in inner_knots]
    ys = [k[1] for k in inner_knots]
    all_x = [lo] + xs + [hi]
    all_y = [e.ys[i]] + ys + [e.ys[j]]
    segs = [LiftSeg(outer.s, inner, e.src.f, e.tgt.f, y0, y1)
            for y0, y1 in zip(all_y, all_y[1:])]
    return xs, ys, segs


def critical_pullback(e, psi, psi_hat, inner, budget=None, tol=1e-7):
    """Replace the equivalence on dom(psi) by the order-preserving lift of
    the marked `inner` through the folding pair (psi, psi_hat).

    If the critical value sits in an extreme domain of the inner map the
    fold is first composed with that extreme branch until it escapes (no
    new branches are created by this).  The two monotone lifts glue at the
    fold center, which is pinned to the target fold center.
    """
    budget = budget or RefinementBudget()
    f, fh = e.src.f, e.tgt.f
    psi2, n = escape_extreme_of(inner.src, psi, f, budget)
    psi_hat2, n_hat = escape_extreme_of(inner.tgt, psi_hat, fh, budget)
    if n != n_hat:
        raise CorrespondenceError(
            f"escape counts differ: {n} vs {n_hat}")
    c, ch = psi2.critical_value, psi_hat2.critical_value
    host = inner.src.branch_at(c)
    if host is None or host.kind != MONOTONE:
        raise StructureError(
            "critical value must lie in a monotone domain of the inner map")
    got = inner(c)
    if abs(got - ch) > tol:
        raise MarkingError(
            f"inner is not marked at the critical value: |{got} - {ch}| > {tol}")
    z, zh = psi2.fold_center, psi_hat2.fold_center
    sides = []
    if psi2.lo < z:
        sides.append((
            Branch(psi2.lo, z, psi2.s, MONOTONE, v_lo=psi2.v_lo, v_hi=c),
            Branch(psi_hat2.lo, zh, psi_hat2.s, MONOTONE,
                   v_lo=psi_hat2.v_lo, v_hi=ch)))
    if z < psi2.hi:
        sides.append((
            Branch(z, psi2.hi, psi2.s, MONOTONE, v_lo=c, v_hi=psi2.v_hi),
            Branch(zh, psi_hat2.hi, psi_hat2.s, MONOTONE,
                   v_lo=ch, v_hi=psi_hat2.v_hi)))
    new_src, new_tgt = [], []
    knots = [(z, zh)]
    for side, side_hat in sides:
        bs, bt, ks = _pull_pair_through(inner, side, side_hat, budget)
        new_src.extend(bs)
        new_tgt.extend(bt)
        knots.extend(ks)
        knots.extend((b.lo, bh.lo) for b, bh in zip(bs, bt))
        knots.extend((b.hi, bh.hi) for b, bh in zip(bs, bt))
    # merge the two central pieces into one folding branch
    new_src, new_tgt = _merge_center(new_src, new_tgt, psi2, psi_hat2, z, zh,
                                     f, fh, inner, budget)
    xs, ys, segs = _lift_region(
        e, psi2, psi_hat2, inner, (psi.lo, psi.hi), (psi_hat.lo, psi_hat.hi),
        knots, budget)
    src2 = e.src.replace_branch(psi, sorted(new_src, key=lambda b: b.lo))
    tgt2 = e.tgt.replace_branch(psi_hat, sorted(new_tgt, key=lambda b: b.lo))
    out = e._splice(psi.lo, psi.hi, xs, ys, segs, src=src2, tgt=tgt2)
    if len(out.xs) > 40 * budget.max_branches:
        raise BudgetError("knot budget exhausted")
    return out


def _merge_center(new_src, new_tgt, psi2, psi_hat2, z, zh, f, fh, inner, budget):
    lc = rc = lch = rch = None
    for b, bh in zip(list(new_src), list(new_tgt)):
        if abs(b.hi - z) < 1e-13:
            lc, lch = b, bh
        if abs(b.lo - z) < 1e-13:
            rc, rch = b, bh
    if lc is None or rc is None:
        return new_src, new_tgt
    host = inner.src.branch_at(psi2.critical_value)
    host_hat = inner.tgt.branches[inner.src.branches.index(host)]
    c_new = float(f.iterate(psi2.critical_value, host.s))
    ch_new = float(fh.iterate(psi_hat2.critical_value, host_hat.s))
    for pair, coll in (((lc, rc), new_src), ((lch, rch), new_tgt)):
        coll.remove(pair[0])
        coll.remove(pair[1])
    center = Branch(lc.lo, rc.hi, psi2.s + host.s, FOLDING, sbar=psi2.sbar,
                    v_lo=lc.v_lo, v_hi=rc.v_hi,
                    critical_value=c_new, fold_center=z)
    center_h = Branch(lch.lo, rch.hi, psi_hat2.s + host_hat.s, FOLDING,
                      sbar=psi_hat2.sbar, v_lo=lch.v_lo, v_hi=rch.v_hi,
                      critical_value=ch_new, fold_center=zh)
    new_src.append(center)
    new_tgt.append(center_h)
    return new_src, new_tgt


def monotone_pullback(e, xi, xi_hat, inner, budget=None):
    """Replace the equivalence on dom(xi) by xi_hat^{-1} o inner o xi and
    refine the partitions by xi-preimages of the inner domains."""
    budget = budget or RefinementBudget()
    if xi.kind != MONOTONE or xi_hat.kind != MONOTONE:
        raise DomainError("monotone pull-back needs monotone branches")
    img = xi.image
    if img.lo < inner.src.domain.lo - 1e-9 or img.hi > inner.src.domain.hi + 1e-9:
        raise DomainError("inner equivalence does not cover the branch image")
    bs, bt, knots = _pull_pair_through(inner, xi, xi_hat, budget)
    knots = list(knots)
    knots.extend((b.lo, bh.lo) for b, bh in zip(bs, bt))
    knots.extend((b.hi, bh.hi) for b, bh in zip(bs, bt))
    xs, ys, segs = _lift_region(e, xi, xi_hat, inner,
                                (xi.lo, xi.hi), (xi_hat.lo, xi_hat.hi),
                                knots, budget)
    src2 = e.src.replace_branch(xi, sorted(bs, key=lambda b: b.lo))
    tgt2 = e.tgt.replace_branch(xi_hat, sorted(bt, key=lambda b: b.lo))
    out = e._splice(xi.lo, xi.hi, xs, ys, segs, src=src2, tgt=tgt2)
    if len(out.xs) > 40 * budget.max_branches:
        raise BudgetError("knot budget exhausted")
    return out


def boundary_refine_equiv(e, side, depth, budget=None):
    """Equivalence-level boundary refinement: repeatedly pull the original
    equivalence back through the extreme branch pair."""
    budget = budget or RefinementBudget()
    base = e
    for _ in range(depth):
        ext = e.src.branches[0] if side == "left" else e.src.branches[-1]
        ext_hat = e.tgt.branches[0] if side == "left" else e.tgt.branches[-1]
        if ext.kind != MONOTONE:
            raise DomainError(f"extreme branch on the {side} is not monotone")
        e = monotone_pullback(e, ext, ext_hat, base, budget)
    return e


# ----------------------------------------------------------------------
# filling-in and final refinement
# ----------------------------------------------------------------------

def filling_in(e, stages, budget=None, _diag=None):
    """Iterated critical pull-backs: each stage pulls the previous stage's
    marked equivalence back onto all folding branches of the input map.

    The surviving folding measure is recorded per stage when a diagnostics
    list is supplied.
    """
    budget = budget or RefinementBudget()
    base = e
    latest = e
    for _ in range(stages):
        cur = base
        for psi in base.src.folding_branches():
            psi_hat = base.corresponding(psi)
            f, fh = base.src.f, base.tgt.f
            psi2, n = escape_extreme_of(latest.src, psi, f, budget)
            psi_hat2, nh = escape_extreme_of(latest.tgt, psi_hat, fh, budget)
            if n != nh:
                raise CorrespondenceError("escape counts differ in filling-in")
            host = latest.src.branch_at(psi2.critical_value)
            if host is None:
                raise StructureError("critical value fell into an unresolved gap")
            if host.kind != MONOTONE:
                raise StructureError(
                    "critical value in a non-monotone domain; map is not basic")
            marked = mark(latest, MarkingCondition(psi2.critical_value),
                          psi_hat2.critical_value)
            cur = critical_pullback(cur, psi, psi_hat, marked, budget)
        latest = cur
        if _diag is not None:
            _diag.append(latest.folding_measure())
    return latest


def final_refinement(e, mesh, budget=None):
    """Pull the equivalence back through every monotone branch pair outside
    the primary external branches until all such source domains are shorter
    than `mesh` (or the depth budget runs out)."""
    budget = budget or RefinementBudget()
    lo, hi = e.ext_bounds if e.ext_bounds else (e.src.domain.lo, e.src.domain.hi)
    for _ in range(budget.depth):
        snapshot = e
        targets = [b for b in e.src.monotone_branches()
                   if b.length() >= mesh and b.lo >= lo - 1e-12 and b.hi <= hi + 1e-12]
        if not targets:
            break
        for b in targets:
            if b not in e.src.branches:
                continue
            bh = e.corresponding(b)
            e = monotone_pullback(e, b, bh, snapshot, budget)
    return e


# ----------------------------------------------------------------------
# quasisymmetric norm
# ----------------------------------------------------------------------

def qs_norm_estimate(g, xs=48, hs=16, h_min=1e-6, h_max=1.0):
    """Sampled quasisymmetric norm sup max(R, 1/R) over a deterministic
    lattice, R = (g(x+h)-g(x)) / (g(x)-g(x-h))."""
    if xs < 2 or hs < 2:
        raise DomainError("need at least a 2x2 lattice")
    x_grid = np.linspace(-1.0, 1.0, xs + 2)[1:-1]
    h_grid = np.geomspace(h_min, h_max, hs)
    worst = 1.0
    for x in x_grid:
        gx = g(float(x))
        for h in h_grid:
            if x + h > 1.0 or x - h < -1.0:
                continue
            up = g(float(x + h)) - gx
            dn = gx - g(float(x - h))
            if up <= 0 or dn <= 0:
                raise ContractViolationError(
                    f"non-monotone samples at x={x}, h={h}")
            r = up / dn
            worst = max(worst, r, 1.0 / r)
    return worst


# ----------------------------------------------------------------------
# the full pipeline
# ----------------------------------------------------------------------

@dataclass
class StageDiagnostics:
    stage: int
    qs_norm: float
    max_gap: float
    sup_oracle_distance: float
    folding_measure: float

    def as_dict(self):
        return {"stage": self.stage, "qs_norm": self.qs_norm,
                "max_gap": self.max_gap,
                "sup_oracle_distance": self.sup_oracle_distance,
                "folding_measure": self.folding_measure}


def make_preferred_pair(f, g, budget=None):
    """Corresponding preferred first-return maps of a kneading-equal pair."""
    budget = budget or RefinementBudget()
    mf, mg = first_return_pair(f, g, budget)
    out_f, out_g = [], []
    for bf, bg in zip(mf.branches, mg.branches):
        if bf.kind == FOLDING:
            bf2, n = escape_external(mf, bf, budget)
            bg2, nh = escape_external(mg, bg, budget)
            if n != nh:
                raise CorrespondenceError("escape counts differ in adjustment")
            out_f.append(bf2)
            out_g.append(bg2)
        else:
            out_f.append(bf)
            out_g.append(bg)
    mf = replace(mf, branches=tuple(out_f))
    mg = replace(mg, branches=tuple(out_g))
    return mf, mg


def _preamble(e, budget):
    """Boundary-refine next to the fold's critical value when it sits too
    close to an endpoint of its monotone host domain."""
    c = central_critical_value(e.src)
    if c is None:
        return e
    host = e.src.branch_at(c)
    if host is None or host.kind != MONOTONE:
        return e
    d = min(c - host.lo, host.hi - c)
    if d >= config.BOUNDARY_CLOSENESS * host.length():
        return e
    idx = e.src.branches.index(host)
    side = "left" if (c - host.lo) < (host.hi - c) else "right"
    j = idx - 1 if side == "left" else idx + 1
    if not (0 <= j < len(e.src.branches)):
        return e
    nb = e.src.branches[j]
    if nb.kind != MONOTONE:
        return e
    # refine the adjacent branch until its piece at the shared endpoint is
    # shorter than the critical value's distance to that endpoint
    shared = host.lo if side == "left" else host.hi
    depth = 0
    e_out = e
    while depth < budget.depth:
        depth += 1
        inner = boundary_refine_equiv(e, "left" if nb.v_lo < 0 else "right",
                                      depth, budget)
        probe = [b for b in inner.src.branches]
        cand = monotone_pullback(e, nb, e.corresponding(nb), inner, budget)
        pieces = [b for b in cand.src.branches
                  if nb.lo - 1e-14 <= b.lo and b.hi <= nb.hi + 1e-14]
        if not pieces:
            break
        edge = pieces[-1] if side == "left" else pieces[0]
        if edge.length() <= d:
            return cand
    return e_out


def build_conjugacy(f, g, budget=None, probe=None, oracle_depth=None):
    """Primary equivalence, staged critical pull-backs with filling-in, and
    a final refinement; per-stage diagnostics against the itinerary oracle.

    Returns (equivalence, [StageDiagnostics...]).
    """
    budget = budget or RefinementBudget()
    kf = kneading_sequence(f, budget.kneading_depth)
    kg = kneading_sequence(g, budget.kneading_depth)
    if kf != kg:
        raise NotConjugateError(
            f"kneading sequences differ at position {kf.common_prefix(kg)}",
            depth=kf.common_prefix(kg))
    basic = ind.basic_dynamics_check(f, min(budget.stages, 3), budget)
    if not basic.passed and not basic.indeterminate:
        raise OutOfClassError(
            "critical value enters a folding domain; map is renormalizable "
            "or outside the basic class")
    mf, mg = make_preferred_pair(f, g, budget)
    e = primary_equivalence(mf, mg)
    lo, hi = e.ext_bounds
    if probe is None:
        probe = np.linspace(lo + 1e-6, hi - 1e-6, budget.probe_points)
    oracle = conjugacy_oracle_grid(
        f, g, probe, depth=oracle_depth or budget.oracle_depth)
    diags = []

    def record(stage):
        built = e.eval_many(probe)
        diags.append(StageDiagnostics(
            stage=stage,
            qs_norm=qs_norm_estimate(e, xs=32, hs=12),
            max_gap=e.max_gap(),
            sup_oracle_distance=float(np.max(np.abs(built - oracle))),
            folding_measure=e.folding_measure()))

    record(0)
    for stage in range(1, budget.stages + 1):
        e = _preamble(e, budget)
        e = filling_in(e, budget.fill_stages, budget)
        record(stage)
    e = final_refinement(e, budget.mesh, budget)
    record(budget.stages + 1)
    return e, diags


def export_conjugacy_table(e, xs, oracle_values, path=None):
    lines = ["x,built,oracle,abs_diff"]
    for x, o in zip(xs, oracle_values):
        b = e(float(x))
        lines.append(f"{x:.17g},{b:.17g},{o:.17g},{abs(b - o):.17g}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
