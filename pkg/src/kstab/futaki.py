"""Futaki invariants by lattice-point counting and toric filtrations.

For an integral polytope P, the sections of the k-th power of the
polarization are labelled by the lattice points of kP, so the weight of a
torus generator xi on the determinant line is w_k = sum of <xi, m> over
kP's lattice points.  F(k) = w_k/(k d_k) expands as F0 + F1/k + F2/k^2 +
... and F1 is the Futaki invariant; its ratio to the boundary functional L
on the linear function <xi, x> is 1/(2 Vol P), a constant this module's
tests freeze.  The filtration route assigns each lattice point the level at
which it enters the sublevel filtration of a convex f and converges to the
same invariant.

SIGN CONVENTION (numbering drifts across sources): the action on the
section labelled by lattice point m has weight +<xi, m>, not its negative.
With this choice sign(F1) = sign(L(<xi, x>)) and F0 is the centroid
component <xi, centroid(P)>.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from kstab.polytope import Polytope

log = logging.getLogger(__name__)

Q = Fraction


class NonIntegralPolytopeError(ValueError):
    """Raised when exact Ehrhart behaviour needs integral vertices."""


@dataclass(frozen=True)
class WeightData:
    k: int
    d_k: int
    w_k: int
    F_k: Q


@dataclass(frozen=True)
class ExpansionFit:
    F0: float
    F1: float
    F2: float
    residual: float
    k_range: tuple[int, int]


def _scaled_facets(P: Polytope):
    """Facet tests q*<nu, m> >= k*p as pure integers."""
    out = []
    for f in P.facets:
        c = f.offset
        out.append((f.normal, c.numerator, c.denominator))
    return out


def lattice_points(P: Polytope, k: int = 1):
    """Iterate over the lattice points of k*P (bounding-box scan, exact)."""
    if k <= 0:
        raise ValueError("k must be a positive integer")
    tests = _scaled_facets(P)
    box = P.bounding_box()
    ranges = [range(math.ceil(lo * k), math.floor(hi * k) + 1) for lo, hi in box]
    for m in itertools.product(*ranges):
        ok = True
        for nu, p, q in tests:
            if q * sum(n * mi for n, mi in zip(nu, m)) < k * p:
                ok = False
                break
        if ok:
            yield m


def require_integral(P: Polytope):
    for v in P.vertices:
        if any(c.denominator != 1 for c in v):
            raise NonIntegralPolytopeError(
                "polytope has non-integral vertices; rescale the polarization "
                "(replace P by m*P for a suitable integer m) before counting")


def count_and_weigh(P: Polytope, xi, k: int) -> WeightData:
    """d_k = #(kP cap Z^n) and w_k = sum of <xi, m> over those points."""
    require_integral(P)
    xi = tuple(int(x) for x in xi)
    if len(xi) != P.dim:
        raise ValueError("xi has wrong dimension")
    d = 0
    w = 0
    for m in lattice_points(P, k):
        d += 1
        w += sum(x * mi for x, mi in zip(xi, m))
    return WeightData(k, d, w, Q(w, k * d))


def expansion(P: Polytope, xi, k_min: int, k_max: int) -> ExpansionFit:
    """Least-squares fit of F_k against (1, 1/k, 1/k^2) on k_min..k_max."""
    if k_max - k_min < 3:
        raise ValueError("need k_max - k_min >= 3 for a three-parameter fit")
    ks = np.arange(k_min, k_max + 1, dtype=float)
    fs = np.array([float(count_and_weigh(P, xi, int(k)).F_k) for k in ks])
    M = np.stack([np.ones_like(ks), 1.0 / ks, 1.0 / ks**2], axis=1)
    coef, res, _, _ = np.linalg.lstsq(M, fs, rcond=None)
    resid = float(np.sqrt(res[0])) if res.size else float(np.linalg.norm(M @ coef - fs))
    return ExpansionFit(float(coef[0]), float(coef[1]), float(coef[2]), resid,
                        (k_min, k_max))


def interpolate_polynomial(ks, vals) -> list[Q]:
    """Exact coefficients (ascending) of the polynomial through (ks, vals)."""
    n = len(ks)
    A = [[Q(k) ** j for j in range(n)] for k in ks]
    b = [Q(v) for v in vals]
    # Gaussian elimination over the rationals
    for col in range(n):
        piv = next(r for r in range(col, n) if A[r][col] != 0)
        A[col], A[piv] = A[piv], A[col]
        b[col], b[piv] = b[piv], b[col]
        inv = 1 / A[col][col]
        A[col] = [a * inv for a in A[col]]
        b[col] *= inv
        for r in range(n):
            if r != col and A[r][col] != 0:
                f = A[r][col]
                A[r] = [a - f * c for a, c in zip(A[r], A[col])]
                b[r] -= f * b[col]
    return b


def expansion_exact(P: Polytope, xi) -> tuple[Q, Q, Q]:
    """(F0, F1, F2) by exact Hilbert-polynomial interpolation.

    d_k is a degree-n polynomial and w_k a degree-(n+1) polynomial with zero
    constant term; interpolating them from small k and dividing the series
    gives the expansion coefficients exactly.  This is the independent
    oracle for the least-squares route.
    """
    require_integral(P)
    n = P.dim
    dks = [count_and_weigh(P, xi, k) for k in range(1, n + 3)]
    dpoly = interpolate_polynomial(list(range(1, n + 2)), [d.d_k for d in dks[:n + 1]])
    wpoly = interpolate_polynomial(list(range(0, n + 3)),
                                   [0] + [d.w_k for d in dks])
    # sanity: the interpolants must reproduce the extra data point
    kchk = n + 2
    assert sum(c * kchk ** j for j, c in enumerate(dpoly)) == dks[n + 1].d_k
    dn = dpoly[n]
    dn1 = dpoly[n - 1] if n >= 1 else Q(0)
    dn2 = dpoly[n - 2] if n >= 2 else Q(0)
    wn1 = wpoly[n + 1]
    wn = wpoly[n]
    wnm = wpoly[n - 1] if n >= 1 else Q(0)
    F0 = wn1 / dn
    F1 = (wn - F0 * dn1) / dn
    F2 = (wnm - F0 * dn2 - F1 * dn1) / dn
    return F0, F1, F2


def filtration_futaki(P: Polytope, f, k: int) -> Q:
    """Finite-k filtration statistic sum_m ceil(k f(m/k)) / (k d_k).

    f is a convex function on P evaluated exactly (a PLConvexFunction or any
    callable returning a rational); m enters the sublevel filtration
    {f <= i/k} at level i = ceil(k f(m/k)).  The statistic converges, as
    k grows, to F0 + F1/k + ... with F1 = L(f)/(2 Vol P).
    """
    require_integral(P)
    total = 0
    d = 0
    minval = None
    for m in lattice_points(P, k):
        val = Q(f(tuple(Q(mi, k) for mi in m)))
        minval = val if minval is None else min(minval, val)
        total += math.ceil(k * val)
        d += 1
    if d == 0:
        raise ValueError("polytope contains no lattice points at this k")
    if minval is not None and minval < 0:
        log.info("filtration level function dips below 0 (min %s); the integer "
                 "ceiling handles the shift and the k->infinity limit is unchanged",
                 minval)
    return Q(total, k * d)
