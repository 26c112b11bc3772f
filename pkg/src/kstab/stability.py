"""The stability functional on piecewise-linear convex functions.

L(f) = integral of f over the weighted boundary minus A times the integral
over the interior, A = bvol/vol, so constants are annihilated.  Linear
functions give the Futaki vector; creases max(0, <a,x> - c) are the search
family for destabilizers on surfaces.  Everything here is exact rational
arithmetic.
"""

from __future__ import annotations

import bisect
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from kstab.polytope import (
    EMPTY,
    BoundaryMeasure,
    Facet,
    Polytope,
    clip,
    integrate_affine,
    measures,
    _frac,
    _point,
    _primitivize,
)

Q = Fraction


@dataclass(frozen=True)
class PLConvexFunction:
    """max of finitely many affine pieces <a_i, x> + b_i with rational data."""

    pieces: tuple[tuple[tuple[Q, ...], Q], ...]

    def __post_init__(self):
        if not self.pieces:
            raise ValueError("need at least one affine piece")
        norm = tuple(sorted({(tuple(_frac(c) for c in a), _frac(b)) for a, b in self.pieces}))
        object.__setattr__(self, "pieces", norm)

    @classmethod
    def affine(cls, a: Sequence, b) -> "PLConvexFunction":
        return cls(((tuple(_frac(c) for c in a), _frac(b)),))

    @classmethod
    def crease(cls, a: Sequence, c) -> "PLConvexFunction":
        """max(0, <a, x> - c)."""
        a = tuple(_frac(v) for v in a)
        zero = (Q(0),) * len(a)
        return cls(((zero, Q(0)), (a, -_frac(c))))

    @classmethod
    def abs_coordinate(cls, dim: int, axis: int = 0) -> "PLConvexFunction":
        """|x_axis| as a two-piece function."""
        plus = tuple(Q(1) if i == axis else Q(0) for i in range(dim))
        minus = tuple(-v for v in plus)
        return cls(((plus, Q(0)), (minus, Q(0))))

    @property
    def dim(self) -> int:
        return len(self.pieces[0][0])

    def __call__(self, x: Sequence) -> Q:
        x = _point(x)
        return max(sum(ai * xi for ai, xi in zip(a, x)) + b for a, b in self.pieces)

    def __add__(self, other: "PLConvexFunction") -> "PLConvexFunction":
        # max_i p_i + max_j q_j = max_{ij} (p_i + q_j)
        pieces = []
        for a, b in self.pieces:
            for c, d in other.pieces:
                pieces.append((tuple(ai + ci for ai, ci in zip(a, c)), b + d))
        return PLConvexFunction(tuple(pieces))

    def is_affine_on(self, P: Polytope) -> bool:
        return len(decompose(P, self)) <= 1

    def compose_inverse(self, T: Sequence[Sequence[int]], shift: Sequence = None):
        """f o T^{-1}(y - shift): the pushforward of f under x -> Tx + shift."""
        n = self.dim
        shift = _point(shift) if shift is not None else (Q(0),) * n
        T = [[int(e) for e in row] for row in T]
        if n == 1:
            inv = [[Q(1, T[0][0])]]
        else:
            det = T[0][0] * T[1][1] - T[0][1] * T[1][0]
            inv = [[Q(T[1][1], det), Q(-T[0][1], det)],
                   [Q(-T[1][0], det), Q(T[0][0], det)]]
        pieces = []
        for a, b in self.pieces:
            # <a, T^{-1}(y - s)> + b = <T^{-T} a, y> + (b - <T^{-T} a, s>)
            na = tuple(sum(a[i] * inv[i][j] for i in range(n)) for j in range(n))
            nb = b - sum(na[j] * shift[j] for j in range(n))
            pieces.append((na, nb))
        return PLConvexFunction(tuple(pieces))


def decompose(P: Polytope, f: PLConvexFunction) -> list[tuple[int, Polytope]]:
    """Full-dimensional cells on which one piece of f is maximal.

    Returns (piece index, cell) pairs; pieces that are nowhere maximal are
    dropped (the canonical form of f relative to P).
    """
    cells = []
    pieces = f.pieces
    for i, (ai, bi) in enumerate(pieces):
        cell = P
        dominated = False
        for j, (aj, bj) in enumerate(pieces):
            if i == j:
                continue
            diff = tuple(x - y for x, y in zip(ai, aj))
            if all(d == 0 for d in diff):
                if bi < bj or (bi == bj and j < i):
                    dominated = True
                    break
                continue
            cell = clip(cell, (diff, bj - bi))
            if cell is EMPTY:
                dominated = True
                break
        if not dominated and cell is not EMPTY:
            cells.append((i, cell))
    return cells


def L(P: Polytope, sigma: BoundaryMeasure, f: PLConvexFunction) -> Q:
    """Exact value of the stability functional on f.

    Interior integral by clipping P into the maximal-domain cells of f;
    boundary integral edge by edge, splitting at the crease crossings.
    """
    m = measures(P, sigma)
    interior = Q(0)
    for i, cell in decompose(P, f):
        a, b = f.pieces[i]
        interior += integrate_affine(cell, a, b)
    boundary = _boundary_integral(P, sigma, f)
    return boundary - m.A * interior


def _boundary_integral(P: Polytope, sigma: BoundaryMeasure, f: PLConvexFunction) -> Q:
    if P.dim == 1:
        total = Q(0)
        wmap = {fc.normal: w for fc, w in zip(P.facets, sigma.weights)}
        (lo,), (hi,) = P.vertices
        total += wmap[(1,)] * f((lo,))
        total += wmap[(-1,)] * f((hi,))
        return total
    total = Q(0)
    verts = P.vertices
    nv = len(verts)
    for k in range(nv):
        p, q = verts[k], verts[(k + 1) % nv]
        d = (q[0] - p[0], q[1] - p[1])
        ell = P.edge_lattice_length(k) * sigma.weights[k]
        # breakpoints where the active piece can change along p + t d
        ts = {Q(0), Q(1)}
        pieces = f.pieces
        for i in range(len(pieces)):
            for j in range(i + 1, len(pieces)):
                (ai, bi), (aj, bj) = pieces[i], pieces[j]
                da = tuple(x - y for x, y in zip(ai, aj))
                denom = da[0] * d[0] + da[1] * d[1]
                if denom == 0:
                    continue
                t = -((da[0] * p[0] + da[1] * p[1]) + (bi - bj)) / denom
                if 0 < t < 1:
                    ts.add(t)
        ts = sorted(ts)
        for t0, t1 in zip(ts, ts[1:]):
            tm = (t0 + t1) / 2
            mid = (p[0] + tm * d[0], p[1] + tm * d[1])
            total += ell * (t1 - t0) * f(mid)
    return total


def futaki_linear(P: Polytope, sigma: BoundaryMeasure) -> tuple[Q, ...]:
    """(L(x_1), ..., L(x_n)): zero iff the two centroids coincide."""
    m = measures(P, sigma)
    return tuple(m.bvol * (bc - c) for bc, c in zip(m.boundary_centroid, m.centroid))


# -- crease search -----------------------------------------------------------

@dataclass(frozen=True)
class CreaseResult:
    direction: tuple[int, ...]
    offset: Q
    L_value: Q
    mass: Q          # integral of the crease over P
    ratio: Q         # L_value / mass

    def function(self) -> PLConvexFunction:
        return PLConvexFunction.crease(self.direction, self.offset)


@dataclass
class StabilityVerdict:
    status: str      # unstable | semistable-boundary | stable-at-resolution
    witness: PLConvexFunction | None
    witness_L: Q | None
    futaki: tuple[Q, ...]
    resolution: int
    n_directions: int = 0
    n_creases: int = 0
    best_creases: list[CreaseResult] = field(default_factory=list)

    def __post_init__(self):
        if self.status == "unstable":
            assert self.witness is not None and self.witness_L < 0
        if self.status == "semistable-boundary":
            assert self.witness is not None and self.witness_L == 0


class _DirectionProfile:
    """Exact piecewise polynomials c -> (boundary term, interior mass).

    For a fixed integer direction a, the boundary integral of
    max(0, <a,x> - c) is piecewise quadratic in c and the interior integral
    is piecewise cubic, with breakpoints at the vertex values of <a, x>.
    """

    def __init__(self, P: Polytope, sigma: BoundaryMeasure, a: tuple[int, ...]):
        self.a = a
        if P.dim == 1:
            svals = sorted({a[0] * v[0] for v in P.vertices})
            rho = [Q(1), Q(1)]
            edges = []
            wmap = {f.normal: w for f, w in zip(P.facets, sigma.weights)}
            (lo,), (hi,) = P.vertices
            edges.append((wmap[(1,)], a[0] * lo, a[0] * lo, Q(1)))
            edges.append((wmap[(-1,)], a[0] * hi, a[0] * hi, Q(1)))
            bps = svals
        else:
            sv = [a[0] * v[0] + a[1] * v[1] for v in P.vertices]
            bps = sorted(set(sv))
            rho = [_chord_length(P, a, s) for s in bps]
            edges = []
            nv = len(P.vertices)
            for k in range(nv):
                sp, sq = sv[k], sv[(k + 1) % nv]
                ell = P.edge_lattice_length(k) * sigma.weights[k]
                edges.append((Q(1), min(sp, sq), max(sp, sq), ell))
        self.smin, self.smax = bps[0], bps[-1]
        self.bps = bps
        nI = len(bps) - 1
        bco = [[Q(0)] * 3 for _ in range(nI)]
        for w, slo, shi, ell in edges:
            wl = w * ell
            for j in range(nI):
                sj, sj1 = bps[j], bps[j + 1]
                if slo == shi:
                    if sj1 <= slo:
                        bco[j][0] += wl * slo
                        bco[j][1] -= wl
                elif sj1 <= slo:
                    bco[j][0] += wl * (slo + shi) / 2
                    bco[j][1] -= wl
                elif sj >= shi:
                    continue
                else:
                    k = wl / (2 * (shi - slo))
                    bco[j][0] += k * shi * shi
                    bco[j][1] -= 2 * k * shi
                    bco[j][2] += k
        # suffix integrals of rho and s*rho
        I1 = [Q(0)] * (nI + 1)
        I2 = [Q(0)] * (nI + 1)
        alphas, betas = [], []
        for j in range(nI):
            dj = bps[j + 1] - bps[j]
            beta = (rho[j + 1] - rho[j]) / dj
            alpha = rho[j] - beta * bps[j]
            alphas.append(alpha)
            betas.append(beta)
        for j in range(nI - 1, -1, -1):
            s0, s1 = bps[j], bps[j + 1]
            I1[j] = I1[j + 1] + alphas[j] * (s1 - s0) + betas[j] * (s1 * s1 - s0 * s0) / 2
            I2[j] = I2[j + 1] + alphas[j] * (s1 * s1 - s0 * s0) / 2 \
                + betas[j] * (s1 ** 3 - s0 ** 3) / 3
        ico = []
        for j in range(nI):
            e = bps[j + 1]
            al, be = alphas[j], betas[j]
            ico.append([
                be * e ** 3 / 3 + al * e * e / 2 + I2[j + 1],
                -(be * e * e / 2 + al * e) - I1[j + 1],
                al / 2,
                be / 6,
            ])
        self._bco = bco
        self._ico = ico

    def eval(self, c: Q) -> tuple[Q, Q]:
        """(boundary integral, interior mass) of max(0, <a,x> - c)."""
        j = bisect.bisect_right(self.bps, c) - 1
        j = min(max(j, 0), len(self._bco) - 1)
        b = self._bco[j]
        bval = b[0] + c * (b[1] + c * b[2])
        p = self._ico[j]
        ival = p[0] + c * (p[1] + c * (p[2] + c * p[3]))
        return bval, ival


def _chord_length(P: Polytope, a: tuple[int, int], s: Q) -> Q:
    """Lattice length of the chord {<a, x> = s} in P (0 at extreme vertices)."""
    perp = (-a[1], a[0])
    norm2 = a[0] * a[0] + a[1] * a[1]
    taus = []
    verts = P.vertices
    nv = len(verts)
    for k in range(nv):
        p, q = verts[k], verts[(k + 1) % nv]
        sp = a[0] * p[0] + a[1] * p[1]
        sq = a[0] * q[0] + a[1] * q[1]
        if sp == sq:
            if sp == s:
                taus.append((perp[0] * p[0] + perp[1] * p[1]))
                taus.append((perp[0] * q[0] + perp[1] * q[1]))
            continue
        if min(sp, sq) <= s <= max(sp, sq):
            t = (s - sp) / (sq - sp)
            x = (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))
            taus.append(perp[0] * x[0] + perp[1] * x[1])
    if not taus:
        return Q(0)
    return (max(taus) - min(taus)) / norm2


def primitive_directions(dim: int, R: int) -> list[tuple[int, ...]]:
    if dim == 1:
        return [(1,), (-1,)]
    out = []
    for p in range(-R, R + 1):
        for q in range(-R, R + 1):
            if (p, q) == (0, 0):
                continue
            if math.gcd(abs(p), abs(q)) == 1:
                out.append((p, q))
    return out


def admissible_offsets(smin: Q, smax: Q, R: int) -> list[Q]:
    """Rationals with denominator <= R strictly inside (smin, smax)."""
    vals = set()
    for den in range(1, R + 1):
        lo = math.floor(smin * den) + 1
        hi = math.ceil(smax * den) - 1
        for num in range(lo, hi + 1):
            c = Q(num, den)
            if smin < c < smax:
                vals.add(c)
    return sorted(vals)


def _scan_direction(P: Polytope, sigma: BoundaryMeasure, A: Q, a: tuple[int, ...],
                    R: int) -> tuple[list[CreaseResult], int]:
    prof = _DirectionProfile(P, sigma, a)
    results = []
    offsets = admissible_offsets(prof.smin, prof.smax, R)
    for c in offsets:
        bval, mass = prof.eval(c)
        lval = bval - A * mass
        results.append(CreaseResult(a, c, lval, mass, lval / mass))
    results.sort(key=lambda r: (r.ratio, r.direction, r.offset))
    return results[:10], len(offsets)


def _scan_chunk(args):
    P, sigma, A, dirs, R = args
    best: list[CreaseResult] = []
    count = 0
    for a in dirs:
        top, n = _scan_direction(P, sigma, A, a, R)
        count += n
        best.extend(top)
    best.sort(key=lambda r: (r.ratio, r.direction, r.offset))
    return best[:10], count


def crease_search(P: Polytope, sigma: BoundaryMeasure, resolution: int,
                  workers: int | None = None) -> StabilityVerdict:
    """Scan creases max(0, <a,x> - c) up to the given resolution.

    Directions a are primitive integer vectors of sup-height <= resolution;
    offsets c are rationals with denominator <= resolution whose crease line
    meets the interior.  The objective is the scale-invariant ratio
    L(f) / integral of f.  A nonzero Futaki vector short-circuits the
    verdict to unstable with a linear witness, but the scan still runs so
    reports can list the worst creases.

    Verdicts are "at resolution": stability quantifies over all rational
    piecewise-linear convex functions, so a clean scan is evidence, not a
    proof.  Creases are known to be a sufficient destabilizer family for
    surfaces; in higher dimensions general convex functions may be needed,
    which is one reason the search stops at n = 2.
    """
    if resolution <= 0:
        raise ValueError("resolution must be a positive integer")
    fut = futaki_linear(P, sigma)
    A = measures(P, sigma).A
    dirs = primitive_directions(P.dim, resolution)
    if workers is None:
        workers = int(os.environ.get("KSTAB_THREADS", "1"))
    best: list[CreaseResult] = []
    n_creases = 0
    if workers > 1 and len(dirs) > 4:
        chunks = [dirs[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for top, count in ex.map(_scan_chunk, [(P, sigma, A, ch, resolution) for ch in chunks]):
                best.extend(top)
                n_creases += count
    else:
        best, n_creases = _scan_chunk((P, sigma, A, dirs, resolution))
    best.sort(key=lambda r: (r.ratio, r.direction, r.offset))
    best = best[:10]
    meta = dict(resolution=resolution, n_directions=len(dirs), n_creases=n_creases,
                best_creases=best, futaki=fut)
    if any(v != 0 for v in fut):
        witness = PLConvexFunction.affine(tuple(-v for v in fut), Q(0))
        wl = -sum(v * v for v in fut)
        return StabilityVerdict("unstable", witness, wl, **meta)
    if not best:
        return StabilityVerdict("stable-at-resolution", None, None, **meta)
    top = best[0]
    if top.ratio < 0:
        return StabilityVerdict("unstable", top.function(), top.L_value, **meta)
    if top.ratio == 0:
        return StabilityVerdict("semistable-boundary", top.function(), Q(0), **meta)
    return StabilityVerdict("stable-at-resolution", None, None, **meta)


# -- test configurations ------------------------------------------------------

@dataclass
class TestConfiguration:
    """Epigraph polytope Q = {(x, y): x in P, f(x) <= y <= top}."""

    polytope: Polytope
    cells: list[Polytope]
    truncation: Q
    is_product: bool


def test_configuration(P: Polytope, f: PLConvexFunction) -> TestConfiguration:
    """The (n+1)-dimensional toric degeneration data attached to f.

    The epigraph of f over P is truncated above at max_P f + 1 (recorded in
    the result); the cells of the induced decomposition of P are the
    components of the central fibre.
    """
    cells = decompose(P, f)
    fmax = max(f(v) for v in P.vertices)
    top = fmax + 1
    active = sorted({i for i, _ in cells})
    if P.dim == 1:
        pts = [(v[0], f(v)) for _, cell in cells for v in cell.vertices]
        pts += [(v[0], top) for v in P.vertices]
        Qp = Polytope.from_vertices(pts)
        return TestConfiguration(Qp, [c for _, c in cells], top, len(cells) == 1)
    if P.dim != 2:
        raise NotImplementedError("test configurations are built for n <= 2")
    facets = []
    for fc in P.facets:
        facets.append(Facet(fc.normal + (0,), fc.offset))
    seen = set()
    for i in active:
        a, b = f.pieces[i]
        prim, s = _primitivize(tuple(-ai for ai in a) + (Q(1),))
        fac = Facet(prim, b / s)
        if (fac.normal, fac.offset) not in seen:
            seen.add((fac.normal, fac.offset))
            facets.append(fac)
    facets.append(Facet((0, 0, -1), -top))
    verts = {(v[0], v[1], top) for v in P.vertices}
    for _, cell in cells:
        for v in cell.vertices:
            verts.add((v[0], v[1], f(v)))
    Qp = Polytope(3, facets, sorted(verts))
    return TestConfiguration(Qp, [c for _, c in cells], top, len(cells) == 1)
