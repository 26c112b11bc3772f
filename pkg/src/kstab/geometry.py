"""Symplectic potentials on graded tensor meshes and the Abreu operator.

A potential is u = u0 + phi where u0 is the reference with the canonical
boundary behaviour (ell/w) log ell summed over facets (sigma-weights divide
the defining functions) and phi is smooth up to the boundary.  u0 is
differentiated analytically; phi by centred finite differences on a mesh
whose nodes crowd geometrically toward each facet.  Meshes are tensor
products, so the solvable domains are segments and axis-aligned boxes.

Grid layout: node arrays have shape (m1,) or (m1, m2) including boundary
nodes.  Hessian data lives on the interior lattice (one layer in); the
scalar curvature field lives two layers in, matching the stencil depth.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from kstab.polytope import BoundaryMeasure, Polytope, is_delzant, measures


class ConvexityError(RuntimeError):
    """Hessian not positive definite at some node; carries the location."""

    def __init__(self, point, detail=""):
        self.point = tuple(point)
        super().__init__(f"convexity violated near {self.point} {detail}".rstrip())


class UnsupportedPolytopeError(ValueError):
    pass


def graded_nodes(lo: float, hi: float, m: int, ratio: float = 1.15) -> np.ndarray:
    """m nodes on [lo, hi] with gaps shrinking geometrically toward both ends.

    The number of graded layers is chosen so the coarsest/finest gap ratio
    is about m/4, keeping the finest gap well above the square root of
    machine precision for second differences.
    """
    if m < 8:
        raise ValueError("need at least 8 nodes per axis")
    G = m - 1
    J = int(round(math.log(max(m / 4.0, 2.0)) / math.log(ratio)))
    # keep a genuine uniform core: at most a quarter of the gaps graded per side
    J = max(1, min(J, G // 4, (G - 2) // 2))
    expo = np.minimum(np.minimum(np.arange(G), G - 1 - np.arange(G)), J)
    gaps = ratio ** (expo.astype(float))
    gaps *= (hi - lo) / gaps.sum()
    nodes = np.empty(m)
    nodes[0] = lo
    np.cumsum(gaps, out=nodes[1:])
    nodes[1:] += lo
    nodes[-1] = hi
    return nodes


@dataclass
class Axis1D:
    """One mesh axis: nodes, gaps, trapezoid weights, difference stencils."""

    nodes: np.ndarray
    lo: float
    hi: float
    w_lo: float   # sigma-weight of the facet at lo
    w_hi: float

    def __post_init__(self):
        x = self.nodes
        self.m = len(x)
        self.gaps = np.diff(x)
        w = np.zeros(self.m)
        w[:-1] += self.gaps / 2
        w[1:] += self.gaps / 2
        self.trapezoid = w
        self.d1, self.d2 = _stencils(x)

    def interior(self):
        return self.nodes[1:-1]

    # analytic reference potential (ell/w) log ell for the two end facets
    def u0(self) -> np.ndarray:
        a = self.nodes - self.lo
        b = self.hi - self.nodes
        out = np.zeros(self.m)
        pos = a > 0
        out[pos] += a[pos] * np.log(a[pos]) / self.w_lo
        pos = b > 0
        out[pos] += b[pos] * np.log(b[pos]) / self.w_hi
        return out

    def u0_d1(self) -> np.ndarray:
        """First derivative at interior nodes."""
        a = self.nodes[1:-1] - self.lo
        b = self.hi - self.nodes[1:-1]
        return (np.log(a) + 1) / self.w_lo - (np.log(b) + 1) / self.w_hi

    def u0_d2(self) -> np.ndarray:
        """Second derivative at interior nodes (positive)."""
        a = self.nodes[1:-1] - self.lo
        b = self.hi - self.nodes[1:-1]
        return 1.0 / (self.w_lo * a) + 1.0 / (self.w_hi * b)

    # closed forms for the quadrature of the singular parts
    def integral_u0(self) -> float:
        """Integral of (ell/w) log ell terms over the axis."""
        lam = self.hi - self.lo
        one = lam * lam * (2 * math.log(lam) - 1) / 4
        return one / self.w_lo + one / self.w_hi

    def integral_log_terms(self) -> float:
        """Integral of log(w_lo ell_lo) + log(w_hi ell_hi) over the axis."""
        lam = self.hi - self.lo
        return (lam * (math.log(self.w_lo * lam) - 1)
                + lam * (math.log(self.w_hi * lam) - 1))

    def u0_end_values(self) -> tuple[float, float]:
        """u0 of this axis evaluated at lo and hi (the own term vanishes)."""
        lam = self.hi - self.lo
        return (lam * math.log(lam) / self.w_hi, lam * math.log(lam) / self.w_lo)


def _stencils(x: np.ndarray):
    """Non-uniform centred 3-point first/second derivative coefficients.

    Returns (d1, d2), each a (m-2, 3) array of (left, centre, right)
    coefficients; exact on quadratics.
    """
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    s = hm + hp
    d1 = np.stack([-hp / (hm * s), (hp - hm) / (hm * hp), hm / (hp * s)], axis=1)
    d2 = np.stack([2 / (hm * s), -2 / (hm * hp), 2 / (hp * s)], axis=1)
    return d1, d2


def apply_stencil(coef: np.ndarray, arr: np.ndarray, axis: int) -> np.ndarray:
    """Apply a (m-2, 3) stencil along the given axis of arr."""
    arr = np.moveaxis(arr, axis, 0)
    out = (coef[:, 0] * arr[:-2].T + coef[:, 1] * arr[1:-1].T + coef[:, 2] * arr[2:].T).T
    return np.moveaxis(out, 0, axis)


def _box_axes(P: Polytope, sigma: BoundaryMeasure) -> list[tuple[float, float, float, float]]:
    """(lo, hi, w_lo, w_hi) per axis for a product-of-intervals polytope."""
    if not P.is_box():
        raise UnsupportedPolytopeError(
            "mesh construction supports products of intervals (segments and "
            "axis-aligned boxes); general polygons are out of the solver's scope")
    box = P.bounding_box()
    out = []
    for a, (lo, hi) in enumerate(box):
        w_lo = w_hi = 1.0
        for f, w in zip(P.facets, sigma.weights):
            if f.normal[a] == 1:
                w_lo = float(w)
            elif f.normal[a] == -1:
                w_hi = float(w)
        out.append((float(lo), float(hi), w_lo, w_hi))
    return out


class PotentialGrid:
    """Discretized symplectic potential u = u0 + phi on a graded box mesh."""

    def __init__(self, P: Polytope, sigma: BoundaryMeasure, axes: list[Axis1D],
                 phi: np.ndarray | None = None):
        self.P = P
        self.sigma = sigma
        self.axes = axes
        self.n = len(axes)
        self.shape = tuple(ax.m for ax in axes)
        self.phi = np.zeros(self.shape) if phi is None else np.asarray(phi, dtype=float)
        if self.phi.shape != self.shape:
            raise ValueError(f"phi must have shape {self.shape}")

    @classmethod
    def build(cls, P: Polytope, sigma: BoundaryMeasure, m, ratio: float = 1.15,
              phi=None) -> "PotentialGrid":
        if isinstance(m, int):
            m = (m,) * P.dim
        spans = _box_axes(P, sigma)
        axes = [Axis1D(graded_nodes(lo, hi, mi, ratio), lo, hi, wl, wh)
                for (lo, hi, wl, wh), mi in zip(spans, m)]
        g = cls(P, sigma, axes)
        if phi is not None:
            g.phi = _phi_array(g, phi)
        return g

    def with_phi(self, phi) -> "PotentialGrid":
        return PotentialGrid(self.P, self.sigma, self.axes, _phi_array(self, phi))

    def refined(self, phi=None) -> "PotentialGrid":
        """Bisection refinement: every gap exactly halved (nodes are nested).

        Use this for mesh-convergence studies; phi defaults to zero on the
        new grid (pass a callable to re-sample).
        """
        axes = []
        for ax in self.axes:
            x = ax.nodes
            nodes = np.empty(2 * len(x) - 1)
            nodes[0::2] = x
            nodes[1::2] = (x[:-1] + x[1:]) / 2
            axes.append(Axis1D(nodes, ax.lo, ax.hi, ax.w_lo, ax.w_hi))
        g = PotentialGrid(self.P, self.sigma, axes)
        if phi is not None:
            g.phi = _phi_array(g, phi)
        return g

    def node_grids(self) -> list[np.ndarray]:
        """Coordinate arrays broadcast to the full grid shape."""
        vecs = [ax.nodes for ax in self.axes]
        return list(np.meshgrid(*vecs, indexing="ij"))

    def u0_values(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for a, ax in enumerate(self.axes):
            shape = [1] * self.n
            shape[a] = ax.m
            out = out + ax.u0().reshape(shape)
        return out

    def u_values(self) -> np.ndarray:
        return self.u0_values() + self.phi

    def find_node(self, x) -> tuple[int, ...]:
        idx = []
        for a, ax in enumerate(self.axes):
            j = int(np.argmin(np.abs(ax.nodes - float(x[a]))))
            if abs(ax.nodes[j] - float(x[a])) > 1e-9 * (ax.hi - ax.lo):
                raise ValueError(f"{x} is not a mesh node")
            idx.append(j)
        return tuple(idx)

    def depth(self, idx) -> int:
        return min(min(j, ax.m - 1 - j) for j, ax in zip(idx, self.axes))

    def node_point(self, idx):
        return tuple(ax.nodes[j] for ax, j in zip(self.axes, idx))


def _phi_array(g: PotentialGrid, phi) -> np.ndarray:
    if callable(phi):
        pts = g.node_grids()
        return np.asarray(phi(*pts), dtype=float) * np.ones(g.shape)
    return np.asarray(phi, dtype=float)


def guillemin(P: Polytope, sigma: BoundaryMeasure, m=65, ratio: float = 1.15) -> PotentialGrid:
    """Reference potential grid (phi = 0) for a segment or box polytope."""
    if P.dim <= 2 and not is_delzant(P):
        warnings.warn("polytope is not Delzant; the reference potential does not "
                      "compactify smoothly", stacklevel=2)
    return PotentialGrid.build(P, sigma, m, ratio)


# -- Hessian / inverse / scalar curvature fields -----------------------------

def hessian_field(g: PotentialGrid, mode: str = "analytic"):
    """Hessian components of u on the interior lattice.

    mode "analytic": u0 differentiated in closed form, phi by stencils.
    mode "numeric": everything differenced from node values (the
    independent check of the analytic route; second-order accurate).
    Returns a dict {(a, b): array} with symmetric entries aliased.
    """
    n = g.n
    if mode == "analytic":
        base = g.phi
    elif mode == "numeric":
        base = g.u_values()
    else:
        raise ValueError(f"unknown mode {mode!r}")
    H = {}
    for a in range(n):
        arr = apply_stencil(g.axes[a].d2, base, axis=a)
        arr = _restrict(arr, n, skip=a)
        if mode == "analytic":
            shape = [1] * n
            shape[a] = g.axes[a].m - 2
            arr = arr + g.axes[a].u0_d2().reshape(shape)
        H[(a, a)] = arr
    if n == 2:
        arr = apply_stencil(g.axes[0].d1, base, axis=0)
        arr = apply_stencil(g.axes[1].d1, arr, axis=1)
        H[(0, 1)] = arr
        H[(1, 0)] = arr
    return H


def _restrict(arr: np.ndarray, n: int, skip: int) -> np.ndarray:
    """Drop boundary entries along every axis except `skip` (already interior)."""
    sl = []
    for a in range(n):
        sl.append(slice(None) if a == skip else slice(1, -1))
    return arr[tuple(sl)]


def det_field(g: PotentialGrid, H=None, mode: str = "analytic") -> np.ndarray:
    H = hessian_field(g, mode) if H is None else H
    if g.n == 1:
        return H[(0, 0)]
    return H[(0, 0)] * H[(1, 1)] - H[(0, 1)] ** 2


def check_convexity(g: PotentialGrid, H=None, mode: str = "analytic"):
    """Raise ConvexityError at the first interior node with a bad Hessian."""
    H = hessian_field(g, mode) if H is None else H
    det = det_field(g, H)
    bad = (H[(0, 0)] <= 0) | (det <= 0)
    if bad.any():
        idx = np.unravel_index(np.argmax(bad), bad.shape)
        loc = tuple(g.axes[a].nodes[i + 1] for a, i in enumerate(idx))
        raise ConvexityError(loc, f"(det = {det[idx]:.3e})")


def inverse_hessian_field(g: PotentialGrid, H=None, mode: str = "analytic"):
    """Pointwise inverse of the Hessian on the interior lattice."""
    H = hessian_field(g, mode) if H is None else H
    det = det_field(g, H)
    if (det <= 0).any() or (H[(0, 0)] <= 0).any():
        check_convexity(g, H)
    if g.n == 1:
        return {(0, 0): 1.0 / H[(0, 0)]}
    return {(0, 0): H[(1, 1)] / det, (1, 1): H[(0, 0)] / det,
            (0, 1): -H[(0, 1)] / det, (1, 0): -H[(0, 1)] / det}


def _interior_stencils(ax: Axis1D):
    return _stencils(ax.nodes[1:-1])


def abreu_residual_field(g: PotentialGrid, U=None, mode: str = "analytic") -> np.ndarray:
    """sum_ab d^2 U^{ab} / dx_a dx_b + A on the two-layers-in lattice.

    Zero exactly at a discrete solution of the constant scalar curvature
    equation; equals A - 2S.
    """
    A = float(measures(g.P, g.sigma).A)
    return divergence2_field(g, U, mode) + A


def divergence2_field(g: PotentialGrid, U=None, mode: str = "analytic") -> np.ndarray:
    """sum_ab (U^{ab})_{,ab} by centred differences of the inverse Hessian."""
    U = inverse_hessian_field(g, mode=mode) if U is None else U
    n = g.n
    out = None
    for a in range(n):
        d1i, d2i = _interior_stencils(g.axes[a])
        arr = apply_stencil(d2i, U[(a, a)], axis=a)
        arr = _restrict(arr, n, skip=a)
        out = arr if out is None else out + arr
    if n == 2:
        d1x, _ = _interior_stencils(g.axes[0])
        d1y, _ = _interior_stencils(g.axes[1])
        arr = apply_stencil(d1x, U[(0, 1)], axis=0)
        arr = apply_stencil(d1y, arr, axis=1)
        out = out + 2 * arr
    return out


def scalar_curvature_field(g: PotentialGrid, mode: str = "analytic") -> np.ndarray:
    """S = -(1/2) sum (U^{ab})_{,ab} on the depth-2 lattice."""
    return -0.5 * divergence2_field(g, mode=mode)


@dataclass
class MetricSample:
    point: tuple
    g_xx: np.ndarray      # Hessian u_ab
    g_theta: np.ndarray   # inverse u^{ab}
    S: float


def abreu_S(g: PotentialGrid, x, mode: str = "analytic") -> MetricSample:
    """Metric data and scalar curvature at a node >= 2 layers from the boundary."""
    idx = g.find_node(x)
    if g.depth(idx) < 2:
        raise ValueError(f"node {x} is fewer than 2 mesh layers from the boundary")
    H = hessian_field(g, mode)
    U = inverse_hessian_field(g, H, mode)
    S = scalar_curvature_field(g, mode)
    iin = tuple(j - 1 for j in idx)
    idd = tuple(j - 2 for j in idx)
    n = g.n
    Hm = np.array([[H[(min(a, b), max(a, b))][iin] for b in range(n)] for a in range(n)])
    Um = np.array([[U[(min(a, b), max(a, b))][iin] for b in range(n)] for a in range(n)])
    return MetricSample(g.node_point(idx), Hm, Um, float(S[idd]))


def gradient_field(g: PotentialGrid, mode: str = "analytic"):
    """du at interior nodes, one array per component."""
    n = g.n
    base = g.phi if mode == "analytic" else g.u_values()
    out = []
    for a in range(n):
        arr = apply_stencil(g.axes[a].d1, base, axis=a)
        arr = _restrict(arr, n, skip=a)
        if mode == "analytic":
            shape = [1] * n
            shape[a] = g.axes[a].m - 2
            arr = arr + g.axes[a].u0_d1().reshape(shape)
        out.append(arr)
    return out


def legendre(g: PotentialGrid, x, mode: str = "analytic"):
    """Classical Legendre transform at an interior node.

    Returns (<x, du(x)> - u(x), du(x)); the gradient is the log-coordinate
    of the corresponding point on the open torus orbit.
    """
    idx = g.find_node(x)
    if g.depth(idx) < 1:
        raise ValueError(f"node {x} is on the boundary")
    H = hessian_field(g, mode)
    check_convexity(g, H)
    grads = gradient_field(g, mode)
    iin = tuple(j - 1 for j in idx)
    gvec = tuple(float(gr[iin]) for gr in grads)
    uval = float(g.u_values()[idx])
    val = sum(xc * gc for xc, gc in zip(g.node_point(idx), gvec)) - uval
    return val, gvec


# -- quadrature ---------------------------------------------------------------

def uniform_core_mask(g: PotentialGrid) -> np.ndarray:
    """Depth-2 lattice nodes whose full stencil sits in uniformly spaced mesh.

    On these nodes both differencing stages are genuinely second-order, so
    mesh-convergence ratios are clean; at grading transitions the composed
    stencil error is irregular.
    """
    masks = []
    for ax in g.axes:
        gaps = ax.gaps
        ok = np.zeros(ax.m - 4, dtype=bool)
        for i, j in enumerate(range(2, ax.m - 2)):
            window = gaps[j - 2:j + 2]
            ok[i] = np.allclose(window, window[0], rtol=1e-10)
        masks.append(ok)
    if g.n == 1:
        return masks[0]
    return masks[0][:, None] & masks[1][None, :]


def node_weights(g: PotentialGrid) -> np.ndarray:
    """Tensor trapezoid weights for the full node grid."""
    w = g.axes[0].trapezoid
    if g.n == 1:
        return w.copy()
    return np.outer(w, g.axes[1].trapezoid)


def interior_weights(g: PotentialGrid) -> np.ndarray:
    w = node_weights(g)
    return w[(slice(1, -1),) * g.n]


def integrate_nodes(g: PotentialGrid, values: np.ndarray) -> float:
    return float((node_weights(g) * values).sum())


def extend_interior_field(g: PotentialGrid, F: np.ndarray, layers: int = 1) -> np.ndarray:
    """Extrapolate a field living `layers` in from the boundary to all nodes.

    Quadratic Lagrange extrapolation from the three nearest known lines
    along each axis; corners are filled by the second pass.
    """
    full = np.full(g.shape, np.nan)
    sl = (slice(layers, -layers),) * g.n
    full[sl] = F
    for a in range(g.n):
        x = g.axes[a].nodes
        for side in range(2):
            for off in range(layers):
                j = off if side == 0 else g.shape[a] - 1 - off
                base = layers if side == 0 else g.shape[a] - 1 - layers
                step = 1 if side == 0 else -1
                js = [base, base + step, base + 2 * step]
                cs = _lagrange3(x[j], x[js[0]], x[js[1]], x[js[2]])
                idx_t = [slice(None)] * g.n
                src = []
                for jj in js:
                    idx_s = idx_t.copy()
                    idx_s[a] = jj
                    src.append(full[tuple(idx_s)])
                idx_t[a] = j
                full[tuple(idx_t)] = cs[0] * src[0] + cs[1] * src[1] + cs[2] * src[2]
    # first pass along axis 0 leaves NaNs at columns near the axis-1 boundary;
    # the axis-1 pass (run above for a=1) fixes them using complete rows.
    if np.isnan(full).any():
        raise RuntimeError("field extension failed to cover the grid")
    return full


def _lagrange3(x0, x1, x2, x3):
    c1 = (x0 - x2) * (x0 - x3) / ((x1 - x2) * (x1 - x3))
    c2 = (x0 - x1) * (x0 - x3) / ((x2 - x1) * (x2 - x3))
    c3 = (x0 - x1) * (x0 - x2) / ((x3 - x1) * (x3 - x2))
    return c1, c2, c3


def integral_u0_exact(g: PotentialGrid) -> float:
    """Closed-form integral of u0 over the box."""
    lams = [ax.hi - ax.lo for ax in g.axes]
    total = 0.0
    for a, ax in enumerate(g.axes):
        cross = 1.0
        for b, lam in enumerate(lams):
            if b != a:
                cross *= lam
        total += ax.integral_u0() * cross
    return total


def integral_log_terms_exact(g: PotentialGrid) -> float:
    """Closed-form integral of sum_k log(w_k ell_k) over the box."""
    lams = [ax.hi - ax.lo for ax in g.axes]
    total = 0.0
    for a, ax in enumerate(g.axes):
        cross = 1.0
        for b, lam in enumerate(lams):
            if b != a:
                cross *= lam
        total += ax.integral_log_terms() * cross
    return total


def boundary_integral_u0_exact(g: PotentialGrid) -> float:
    """Closed-form sigma-weighted boundary integral of u0."""
    if g.n == 1:
        ax = g.axes[0]
        v_lo, v_hi = ax.u0_end_values()
        return ax.w_lo * v_lo + ax.w_hi * v_hi
    ax0, ax1 = g.axes
    total = 0.0
    # edges where axis 0 is pinned
    for side, w_edge in ((0, ax0.w_lo), (1, ax0.w_hi)):
        k_edge = ax0.u0_end_values()[side]
        total += w_edge * (k_edge * (ax1.hi - ax1.lo) + ax1.integral_u0())
    for side, w_edge in ((0, ax1.w_lo), (1, ax1.w_hi)):
        k_edge = ax1.u0_end_values()[side]
        total += w_edge * (k_edge * (ax0.hi - ax0.lo) + ax0.integral_u0())
    return total


def boundary_integral_nodes(g: PotentialGrid, values: np.ndarray) -> float:
    """Sigma-weighted boundary trapezoid of a node field (box edges)."""
    if g.n == 1:
        ax = g.axes[0]
        return float(ax.w_lo * values[0] + ax.w_hi * values[-1])
    ax0, ax1 = g.axes
    t0, t1 = ax0.trapezoid, ax1.trapezoid
    total = 0.0
    total += ax0.w_lo * float((t1 * values[0, :]).sum())
    total += ax0.w_hi * float((t1 * values[-1, :]).sum())
    total += ax1.w_lo * float((t0 * values[:, 0]).sum())
    total += ax1.w_hi * float((t0 * values[:, -1]).sum())
    return total


def l_functional_quadrature(g: PotentialGrid, values_phi: np.ndarray | None = None) -> float:
    """L(u0 + phi) with the u0 parts in closed form and phi by trapezoid."""
    A = float(measures(g.P, g.sigma).A)
    phi = g.phi if values_phi is None else values_phi
    boundary = boundary_integral_u0_exact(g) + boundary_integral_nodes(g, phi)
    interior = integral_u0_exact(g) + integrate_nodes(g, phi)
    return boundary - A * interior


def grid_dump_rows(g: PotentialGrid, mode: str = "analytic"):
    """Rows (x1[, x2], u, det_hess, S) for CSV export; NaN where undefined."""
    u = g.u_values()
    H = hessian_field(g, mode)
    det = det_field(g, H)
    det_full = np.full(g.shape, np.nan)
    det_full[(slice(1, -1),) * g.n] = det
    S = scalar_curvature_field(g, mode)
    S_full = np.full(g.shape, np.nan)
    S_full[(slice(2, -2),) * g.n] = S
    grids = g.node_grids()
    rows = []
    for idx in np.ndindex(*g.shape):
        rows.append(tuple(float(gr[idx]) for gr in grids)
                    + (float(u[idx]), float(det_full[idx]), float(S_full[idx])))
    return rows
