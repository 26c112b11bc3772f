"""Minimization of the toric Mabuchi functional and the Abreu equation.

The functional is F(u) = -int log det(u_ab) dmu + L(u); its L2 gradient at
u = u0 + phi is -(residual) where residual = sum (u^{ab})_{,ab} + A, so the
descent flow is phi_dot = residual.  The explicit flow is fourth-order
stiff, so the descent direction is smoothed by an H2-seminorm
preconditioner built on the graded mesh; a Gauss-Newton phase (damped
normal equations on the exact discrete residual) takes over below a
residual gate and polishes to tolerance.  Affine gauge: constants are
always projected out of phi; linear components only when the Futaki vector
vanishes (they are exactly F-neutral then, and genuine escape directions
otherwise).

A run that leaves the phi ceiling while F is still decreasing terminates
with a divergence certificate carrying the normalized escape direction:
that is the numerical footprint of a destabilizing ray.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from kstab import geometry as geo
from kstab.polytope import BoundaryMeasure, Polytope, measures
from kstab.stability import futaki_linear

Q = Fraction


# -- discrete operators -------------------------------------------------------

def _stencil_matrix(coef: np.ndarray, m: int) -> sp.csr_matrix:
    """(m-2) x m sparse matrix applying a 3-point stencil at interior nodes."""
    rows = np.repeat(np.arange(m - 2), 3)
    cols = (np.arange(m - 2)[:, None] + np.array([0, 1, 2])[None, :]).ravel()
    return sp.csr_matrix((coef.ravel(), (rows, cols)), shape=(m - 2, m))


def _restrict_matrix(m: int) -> sp.csr_matrix:
    return sp.eye(m, format="csr")[1:-1]


class GridOperators:
    """Sparse difference operators and quadrature vectors for a grid."""

    def __init__(self, g: geo.PotentialGrid):
        self.g = g
        n = g.n
        d1 = [_stencil_matrix(ax.d1, ax.m) for ax in g.axes]
        d2 = [_stencil_matrix(ax.d2, ax.m) for ax in g.axes]
        r = [_restrict_matrix(ax.m) for ax in g.axes]
        icoords = [ax.nodes[1:-1] for ax in g.axes]
        d1i, d2i, ri = [], [], []
        for x in icoords:
            c1, c2 = geo._stencils(x)
            d1i.append(_stencil_matrix(c1, len(x)))
            d2i.append(_stencil_matrix(c2, len(x)))
            ri.append(_restrict_matrix(len(x)))
        if n == 1:
            self.hess = {(0, 0): d2[0]}
            self.d2i = {(0, 0): d2i[0]}
        else:
            self.hess = {
                (0, 0): sp.kron(d2[0], r[1], format="csr"),
                (1, 1): sp.kron(r[0], d2[1], format="csr"),
                (0, 1): sp.kron(d1[0], d1[1], format="csr"),
            }
            self.hess[(1, 0)] = self.hess[(0, 1)]
            self.d2i = {
                (0, 0): sp.kron(d2i[0], ri[1], format="csr"),
                (1, 1): sp.kron(ri[0], d2i[1], format="csr"),
                (0, 1): sp.kron(d1i[0], d1i[1], format="csr"),
            }
            self.d2i[(1, 0)] = self.d2i[(0, 1)]
        self.t_full = geo.node_weights(g).ravel()
        self.t_int = geo.interior_weights(g).ravel()
        self.n_all = int(np.prod(g.shape))
        self.deep_shape = tuple(m - 4 for m in g.shape)
        # affine basis on nodes (constants first)
        grids = g.node_grids()
        basis = [np.ones(self.n_all)]
        for arr in grids:
            basis.append(arr.ravel())
        self.affine_basis = np.stack(basis, axis=1)
        self._precond = None

    def gauge_project(self, v: np.ndarray, include_linear: bool) -> np.ndarray:
        """Remove the weighted-L2 best affine (or constant) fit from v."""
        B = self.affine_basis if include_linear else self.affine_basis[:, :1]
        tw = self.t_full
        G = B.T @ (tw[:, None] * B)
        rhs = B.T @ (tw * v)
        coef = np.linalg.solve(G, rhs)
        return v - B @ coef

    def h2_matrix(self) -> sp.csc_matrix:
        """SPD H2-seminorm operator sum_ab Hess_ab^T W Hess_ab (+ tiny ridge)."""
        if getattr(self, "_h2", None) is None:
            n = self.g.n
            M = None
            for a in range(n):
                for b in range(n):
                    Hab = self.hess[(a, b)]
                    term = Hab.T @ sp.diags(self.t_int) @ Hab
                    M = term if M is None else M + term
            scale = M.diagonal().mean()
            self._h2 = (M + sp.diags(np.full(self.n_all, 1e-12 * scale))).tocsc()
        return self._h2

    def preconditioner(self):
        """Factorized descent preconditioner (H2 seminorm, mildly ridged)."""
        if self._precond is None:
            M = self.h2_matrix()
            scale = M.diagonal().mean()
            M = M + sp.diags(1e-10 * scale * np.maximum(self.t_full, self.t_full.max() * 1e-3))
            self._precond = spla.splu(M.tocsc())
        return self._precond

    def max_hessian_rel_change(self, H: dict, delta: np.ndarray) -> float:
        """Relative pointwise Hessian change of a step (trust-region monitor)."""
        n = self.g.n
        worst = 0.0
        for a in range(n):
            dH = (self.hess[(a, a)] @ delta).reshape(H[(a, a)].shape)
            worst = max(worst, float(np.abs(dH / H[(a, a)]).max()))
        if n == 2:
            dH = (self.hess[(0, 1)] @ delta).reshape(H[(0, 0)].shape)
            worst = max(worst, float(np.abs(dH / np.sqrt(H[(0, 0)] * H[(1, 1)])).max()))
        return worst

    def embed_deep(self, v_deep: np.ndarray) -> np.ndarray:
        full = np.zeros(self.g.shape)
        full[(slice(2, -2),) * self.g.n] = v_deep.reshape(self.deep_shape)
        return full.ravel()

    def jacobian(self, U: dict) -> sp.csr_matrix:
        """d(residual)/d(phi): residual = sum_ab D2I_ab U^{ab} + A."""
        n = self.g.n
        J = None
        Uv = {k: U[k].ravel() for k in U}
        for a in range(n):
            for b in range(n):
                for c in range(n):
                    for d in range(n):
                        w = -Uv[_key(a, c)] * Uv[_key(d, b)]
                        term = self.d2i[(a, b)] @ sp.diags(w) @ self.hess[(c, d)]
                        J = term if J is None else J + term
        return J.tocsr()


def _key(a, b):
    return (min(a, b), max(a, b))


# -- Mabuchi functional -------------------------------------------------------

def log_singular_field(g: geo.PotentialGrid) -> np.ndarray:
    """sum_k log(w_k ell_k) at the interior lattice (separable for boxes)."""
    n = g.n
    out = np.zeros(tuple(ax.m - 2 for ax in g.axes))
    for a, ax in enumerate(g.axes):
        x = ax.nodes[1:-1]
        vec = np.log(ax.w_lo * (x - ax.lo)) + np.log(ax.w_hi * (ax.hi - x))
        shape = [1] * n
        shape[a] = len(x)
        out = out + vec.reshape(shape)
    return out


def mabuchi(P: Polytope, sigma: BoundaryMeasure, g: geo.PotentialGrid,
            H: dict | None = None) -> float:
    """F(u) = -int log det(u_ab) dmu + L(u) on the grid's quadrature.

    The log-singular parts (reference potential and boundary-layer log
    terms) are integrated in closed form; the smooth remainders by
    trapezoid.  Raises ConvexityError off the convex cone.
    """
    H = geo.hessian_field(g) if H is None else H
    det = geo.det_field(g, H)
    if (det <= 0).any() or (H[(0, 0)] <= 0).any():
        geo.check_convexity(g, H)
    # log det ~ -sum log(w ell) near the boundary, so this sum is smooth
    r = np.log(det) + log_singular_field(g)
    r_full = geo.extend_interior_field(g, r)
    log_det_integral = geo.integrate_nodes(g, r_full) - geo.integral_log_terms_exact(g)
    return -log_det_integral + geo.l_functional_quadrature(g)


# -- solve --------------------------------------------------------------------

@dataclass
class SolveReport:
    grid: geo.PotentialGrid
    termination: str              # converged | refused-futaki | divergence-certificate | max-iter | stalled
    residual_sup: float
    iterations: int
    mabuchi_history: list[float] = field(default_factory=list)
    residual_history: list[float] = field(default_factory=list)
    min_det_history: list[float] = field(default_factory=list)
    sup_u_history: list[float] = field(default_factory=list)
    sup_phi_history: list[float] = field(default_factory=list)
    futaki: tuple = ()
    certificate: dict | None = None
    wall_time: float = 0.0

    @property
    def converged(self) -> bool:
        return self.termination == "converged"


def residual_field(g: geo.PotentialGrid, U: dict | None = None) -> np.ndarray:
    """sum_ab (u^{ab})_{,ab} + A on the depth-2 lattice (= A - 2S)."""
    return geo.abreu_residual_field(g, U)


def solve(P: Polytope, sigma: BoundaryMeasure, m=None, tol: float = 1e-5,
          max_iter: int = 400, phi0=None, ceiling: float | None = None,
          require_futaki_zero: bool = True, newton_gate: float = 1e-2,
          ratio: float = 1.15, callback=None) -> SolveReport:
    """Descend the Mabuchi functional to solve the Abreu equation.

    Refuses when the Futaki vector is nonzero (no constant-scalar-curvature
    solution exists) unless require_futaki_zero=False, which is the mode
    used to exhibit divergence certificates on destabilized data.  phi0 may
    be a callable on coordinates or a node array; the default start is the
    reference potential itself (phi = 0).  The Newton gate compares the
    mu-weighted L2 residual.  callback(iteration, grid) is invoked once per
    iteration (grid snapshots, progress logging).
    """
    t_start = time.time()
    fut = futaki_linear(P, sigma)
    futaki_zero = all(v == 0 for v in fut)
    if m is None:
        m = 256 if P.dim == 1 else 49
    g = geo.PotentialGrid.build(P, sigma, m, ratio, phi=phi0)
    if not futaki_zero and require_futaki_zero:
        report = SolveReport(g, "refused-futaki", float("inf"), 0, futaki=fut)
        report.wall_time = time.time() - t_start
        return report
    ops = GridOperators(g)
    A = float(measures(P, sigma).A)
    diam = math.sqrt(sum(float(hi - lo) ** 2 for lo, hi in P.bounding_box()))
    if ceiling is None:
        ceiling = 1e3 * diam * A
    phi = ops.gauge_project(g.phi.ravel(), include_linear=futaki_zero)
    g.phi = phi.reshape(g.shape)

    hist_F, hist_r, hist_det, hist_u, hist_phi = [], [], [], [], []
    dt = 1.0
    lm_damp = 1e-2
    lm_fails = 0
    lm_cooldown = 0
    termination = "max-iter"
    certificate = None
    it = 0
    sup = float("inf")

    def evaluate(grid):
        H = geo.hessian_field(grid)
        det = geo.det_field(grid, H)
        if (det <= 0).any() or (H[(0, 0)] <= 0).any():
            return None
        U = geo.inverse_hessian_field(grid, H)
        r = residual_field(grid, U)
        F = mabuchi(P, sigma, grid, H)
        return H, det, U, r, F

    state = evaluate(g)
    if state is None:
        geo.check_convexity(g)
    H, det, U, r, F = state

    t_deep = ops.t_full.reshape(g.shape)[(slice(2, -2),) * g.n].ravel()
    vol = float(t_deep.sum())

    for it in range(1, max_iter + 1):
        sup = float(np.abs(r).max())
        l2w = float(np.sqrt((t_deep * r.ravel() ** 2).sum() / vol))
        hist_F.append(F)
        hist_r.append(sup)
        hist_det.append(float(det.min()))
        hist_u.append(float(np.abs(g.u_values()).max()))
        hist_phi.append(float(np.abs(g.phi).max()))
        if callback is not None:
            callback(it, g)
        if sup < tol:
            termination = "converged"
            break
        if hist_phi[-1] > ceiling:
            window = hist_F[-8:]
            if len(window) >= 2 and window[-1] < window[0]:
                termination = "divergence-certificate"
                nphi = g.phi / max(hist_phi[-1], 1e-300)
                mloc = np.unravel_index(np.argmin(det), det.shape)
                certificate = {
                    "message": "phi ceiling exceeded while F still decreasing; "
                               "the normalized direction is a destabilizer candidate",
                    "direction": nphi,
                    "recent_F": window,
                    "min_det": float(det.min()),
                    "min_det_location": tuple(g.axes[a].nodes[i + 1]
                                              for a, i in enumerate(mloc)),
                }
            else:
                termination = "stalled"
            break

        def lm_attempt():
            # Gauss-Newton with H2-seminorm Levenberg damping: among steps
            # with equal linear residual it picks the one of least bending,
            # which keeps the boundary layer inside its linearization radius.
            nonlocal g, H, det, U, r, F, lm_damp
            J = ops.jacobian(U)
            rhs = -(J.T @ r.ravel())
            JtJ = (J.T @ J).tocsc()
            M2 = ops.h2_matrix()
            for _ in range(8):
                try:
                    delta = spla.splu((JtJ + lm_damp * M2).tocsc()).solve(rhs)
                except RuntimeError:
                    lm_damp *= 10
                    continue
                delta = ops.gauge_project(delta, include_linear=futaki_zero)
                rho = ops.max_hessian_rel_change(H, delta)
                step = min(1.0, 0.3 / max(rho, 1e-30))
                for _ in range(4):
                    trial = g.with_phi(g.phi + step * delta.reshape(g.shape))
                    st = evaluate(trial)
                    if st is not None and (np.abs(st[3]).max() < sup * (1 - 1e-3 * step)
                                           or np.abs(st[3]).max() < 0.9 * sup):
                        g = trial
                        H, det, U, r, F = st
                        lm_damp = max(lm_damp / 5, 1e-14)
                        return True
                    step /= 4
                lm_damp = min(lm_damp * 10, 1e8)
            return False

        def flow_attempt():
            # preconditioned gradient descent with Armijo backtracking
            nonlocal g, H, det, U, r, F, dt
            grad = ops.embed_deep(r.ravel() * t_deep)
            if futaki_zero:
                grad = ops.gauge_project(grad, include_linear=True)
            d = ops.preconditioner().solve(grad)
            d = ops.gauge_project(d, include_linear=futaki_zero)
            dd = float(grad @ d)   # = <dF-direction, d>; positive for descent
            if dd <= 0:
                return False
            dsup = float(np.abs(d).max())
            # cap the per-step movement so escape rays grow geometrically,
            # not in one jump (keeps the certificate history meaningful)
            dt_cap = 4.0 * (1.0 + hist_phi[-1]) / max(dsup, 1e-300)
            dt = min(dt, dt_cap)
            for _ in range(40):
                trial = g.with_phi(g.phi + dt * d.reshape(g.shape))
                st = evaluate(trial)
                if st is not None and st[4] <= F - 1e-4 * dt * dd:
                    g = trial
                    H, det, U, r, F = st
                    dt = min(dt * 1.3, 1e12)
                    return True
                dt /= 2
            return False

        accepted = False
        stagnant = len(hist_r) > 12 and hist_r[-1] > 0.99 * hist_r[-12]
        # while F is in free fall the state is escaping along a destabilizing
        # ray; polishing the (inconsistent) residual there would only chase
        # spurious large-amplitude zeros of the discrete operator
        free_fall = len(hist_F) >= 3 and hist_F[-3] - F > 0.05 * (1 + abs(F))
        lm_tried = False
        if (l2w < newton_gate or stagnant) and lm_cooldown == 0 and not free_fall:
            lm_tried = True
            accepted = lm_attempt()
            if not accepted:
                lm_fails += 1
                if lm_fails >= 3:
                    lm_cooldown = 25
                    lm_fails = 0
            else:
                lm_fails = 0
        elif lm_cooldown > 0:
            lm_cooldown -= 1
        if not accepted:
            accepted = flow_attempt()
        if not accepted and not lm_tried and not free_fall:
            accepted = lm_attempt()
        if not accepted:
            termination = "stalled"
            break
    else:
        it = max_iter

    report = SolveReport(g, termination, sup, it, hist_F, hist_r, hist_det,
                         hist_u, hist_phi, fut, certificate)
    report.wall_time = time.time() - t_start
    return report


# -- instability ray ----------------------------------------------------------

@dataclass
class RaySlope:
    slope: float
    samples: list[tuple[float, float]]
    l_value: float        # quadrature L of the ray direction


def ray_slope(P: Polytope, sigma: BoundaryMeasure, f_tilde, s_max: float = 1e3,
              n_points: int = 9, m=None, ratio_ladder: float = 2.0) -> RaySlope:
    """Fit the asymptotic slope of s -> F(u0 + s f) on a geometric ladder.

    For convex f the slope tends to L(f); linear f gives exactly L(f) at
    every s because the Hessian term is unchanged.
    """
    if m is None:
        m = 257 if P.dim == 1 else 49
    g0 = geo.PotentialGrid.build(P, sigma, m)
    fvals = geo._phi_array(g0, f_tilde)
    lval = geo.l_functional_quadrature(g0, fvals) - geo.l_functional_quadrature(
        g0, np.zeros_like(fvals))
    ladder = [s_max / ratio_ladder ** j for j in range(n_points)][::-1]
    samples = []
    for s in ladder:
        gs = g0.with_phi(s * fvals)
        samples.append((s, mabuchi(P, sigma, gs)))
    (s1, F1), (s2, F2) = samples[-2], samples[-1]
    return RaySlope((F2 - F1) / (s2 - s1), samples, lval)


# -- integration-by-parts certificates ---------------------------------------

def quadratic_l_exact(P: Polytope, sigma: BoundaryMeasure, qmat, lin, const) -> Q:
    """Exact L of the quadratic x^T Q x + lin.x + const on a box polytope."""
    if not P.is_box():
        raise NotImplementedError("exact quadratic L implemented for boxes")
    box = P.bounding_box()
    n = P.dim
    qmat = [[Q(qmat[a][b]) for b in range(n)] for a in range(n)]
    lin = [Q(v) for v in lin]
    const = Q(const)

    def mono1(lo, hi, p):
        # integral of t^p over [lo, hi]
        return (hi ** (p + 1) - lo ** (p + 1)) / (p + 1)

    def integral_over_box(expr):
        # expr: dict {(p1,..,pn): coeff} of monomials
        total = Q(0)
        for powers, cf in expr.items():
            val = cf
            for (lo, hi), p in zip(box, powers):
                val *= mono1(lo, hi, p)
            total += val
        return total

    expr = {}
    for a in range(n):
        for b in range(n):
            pw = [0] * n
            pw[a] += 1
            pw[b] += 1
            expr[tuple(pw)] = expr.get(tuple(pw), Q(0)) + qmat[a][b]
    for a in range(n):
        pw = [0] * n
        pw[a] = 1
        expr[tuple(pw)] = expr.get(tuple(pw), Q(0)) + lin[a]
    expr[(0,) * n] = expr.get((0,) * n, Q(0)) + const

    interior = integral_over_box(expr)
    # boundary: per facet, pin one coordinate and integrate the rest
    boundary = Q(0)
    for f, w in zip(P.facets, sigma.weights):
        axis = next(a for a in range(n) if f.normal[a] != 0)
        pinned = box[axis][0] if f.normal[axis] == 1 else box[axis][1]
        total = Q(0)
        for powers, cf in expr.items():
            val = cf * pinned ** powers[axis]
            for a in range(n):
                if a != axis:
                    val *= mono1(box[a][0], box[a][1], powers[a])
            total += val
        boundary += w * total
    mm = measures(P, sigma)
    return boundary - mm.A * interior


def ibp_pairing(g: geo.PotentialGrid, qmat) -> float:
    """Quadrature value of int sum u^{ab} f_ab dmu for f = x^T Q x (f_ab = 2Q)."""
    U = geo.inverse_hessian_field(g)
    n = g.n
    integrand = np.zeros(tuple(ax.m - 2 for ax in g.axes))
    for a in range(n):
        for b in range(n):
            integrand = integrand + U[_key(a, b)] * (2.0 * float(qmat[a][b]))
    full = geo.extend_interior_field(g, integrand)
    return geo.integrate_nodes(g, full)


def divergence_pairing(g: geo.PotentialGrid, qmat) -> float:
    """Quadrature value of int sum (u^{ab})_{,ab} f dmu for quadratic f."""
    div = geo.divergence2_field(g)
    grids = g.node_grids()
    f = np.zeros(g.shape)
    n = g.n
    for a in range(n):
        for b in range(n):
            f += float(qmat[a][b]) * grids[a] * grids[b]
    full = geo.extend_interior_field(g, div, layers=2)
    return geo.integrate_nodes(g, full * f)
