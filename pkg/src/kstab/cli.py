"""Command-line interface: file-based, reproducible runs.

Every subcommand reads polytope/config files, writes a manifest
(inputs with hashes, parameters, package version) plus human-readable and
machine-readable outputs into --out, and uses exit codes to communicate
verdicts.  Machine-readable outputs are byte-deterministic for identical
inputs and seed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

import kstab
from kstab import geometry as geo
from kstab import kempfness as kn
from kstab import solver as sol
from kstab.futaki import count_and_weigh, expansion, filtration_futaki
from kstab.polytope import (
    PolytopeParseError,
    is_delzant,
    measures,
    parse_polytope_text,
)
from kstab.stability import PLConvexFunction, crease_search, futaki_linear

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNSTABLE = 2
EXIT_FUTAKI = 3
EXIT_DIVERGENCE = 4

Q = Fraction


def _rat(x) -> str:
    return str(x)


def _load_polytope(path):
    text = Path(path).read_text()
    return parse_polytope_text(text)


def _write_manifest(outdir: Path, command: str, params: dict, inputs: list[str]):
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "package_version": kstab.__version__,
        "parameters": params,
        "inputs": {
            str(p): hashlib.sha256(Path(p).read_bytes()).hexdigest() for p in inputs
        },
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_json(outdir: Path, name: str, payload):
    (outdir / name).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _parse_pieces(spec: str, dim: int) -> PLConvexFunction:
    """Pieces 'a1,..,an,b' separated by ';' (rationals)."""
    pieces = []
    for part in spec.split(";"):
        vals = [Q(tok) for tok in part.split(",")]
        if len(vals) != dim + 1:
            raise ValueError(f"piece {part!r} needs {dim + 1} rational entries")
        pieces.append((tuple(vals[:dim]), vals[dim]))
    return PLConvexFunction(tuple(pieces))


# -- subcommands ---------------------------------------------------------------

def cmd_analyze(args) -> int:
    P, sigma = _load_polytope(args.polytope)
    m = measures(P, sigma)
    fut = futaki_linear(P, sigma)
    delzant = is_delzant(P)
    report = {
        "dim": P.dim,
        "vertices": [[_rat(c) for c in v] for v in P.vertices],
        "facets": [{"normal": list(f.normal), "offset": _rat(f.offset), "weight": _rat(w)}
                   for f, w in zip(P.facets, sigma.weights)],
        "vol": _rat(m.vol),
        "bvol": _rat(m.bvol),
        "A": _rat(m.A),
        "centroid": [_rat(c) for c in m.centroid],
        "boundary_centroid": [_rat(c) for c in m.boundary_centroid],
        "delzant": delzant,
        "futaki": [_rat(v) for v in fut],
    }
    out = Path(args.out)
    _write_manifest(out, "analyze", vars_of(args), [args.polytope])
    _write_json(out, "report.json", report)
    print(f"polytope: dim {P.dim}, {len(P.vertices)} vertices, {len(P.facets)} facets")
    print(f"vol = {m.vol}   bvol = {m.bvol}   A = {m.A}")
    print(f"centroid          = {tuple(map(str, m.centroid))}")
    print(f"boundary centroid = {tuple(map(str, m.boundary_centroid))}")
    print(f"Delzant: {delzant}")
    print(f"Futaki vector: {tuple(map(str, fut))}")
    if any(v != 0 for v in fut):
        print("nonzero Futaki invariant: no constant-scalar-curvature solution; "
              "solve will refuse this input")
    return EXIT_OK


def cmd_destabilize(args) -> int:
    P, sigma = _load_polytope(args.polytope)
    verdict = crease_search(P, sigma, args.resolution, workers=args.workers)
    out = Path(args.out)
    _write_manifest(out, "destabilize", vars_of(args), [args.polytope])
    payload = {
        "status": verdict.status,
        "futaki": [_rat(v) for v in verdict.futaki],
        "resolution": verdict.resolution,
        "n_directions": verdict.n_directions,
        "n_creases": verdict.n_creases,
        "best_creases": [
            {"direction": list(c.direction), "offset": _rat(c.offset),
             "L": _rat(c.L_value), "mass": _rat(c.mass), "ratio": _rat(c.ratio)}
            for c in verdict.best_creases
        ],
    }
    if verdict.witness is not None:
        payload["witness"] = {
            "pieces": [[[_rat(a) for a in piece[0]], _rat(piece[1])]
                       for piece in verdict.witness.pieces],
            "L": _rat(verdict.witness_L),
        }
    _write_json(out, "verdict.json", payload)
    print(f"Futaki vector: {tuple(map(str, verdict.futaki))}")
    print(f"verdict: {verdict.status} (resolution {verdict.resolution}, "
          f"{verdict.n_creases} creases over {verdict.n_directions} directions)")
    for c in verdict.best_creases:
        print(f"  crease a={c.direction} c={c.offset}: L = {c.L_value}, ratio = {c.ratio}")
    if verdict.status == "unstable":
        return EXIT_FUTAKI if any(v != 0 for v in verdict.futaki) else EXIT_UNSTABLE
    return EXIT_OK


def cmd_futaki(args) -> int:
    P, sigma = _load_polytope(args.polytope)
    xi = tuple(int(t) for t in args.xi.split(","))
    rows = [count_and_weigh(P, xi, k) for k in range(args.kmin, args.kmax + 1)]
    fit = expansion(P, xi, args.kmin, args.kmax)
    out = Path(args.out)
    _write_manifest(out, "futaki", vars_of(args), [args.polytope])
    with (out / "weights.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "d_k", "w_k", "F_k"])
        for r in rows:
            w.writerow([r.k, r.d_k, r.w_k, _rat(r.F_k)])
    _write_json(out, "fit.json", {
        "F0": fit.F0, "F1": fit.F1, "F2": fit.F2,
        "residual": fit.residual, "k_range": list(fit.k_range),
    })
    print(f"{'k':>4} {'d_k':>10} {'w_k':>12} {'F_k':>14}")
    for r in rows:
        print(f"{r.k:>4} {r.d_k:>10} {r.w_k:>12} {str(r.F_k):>14}")
    print(f"fit over k={fit.k_range}: F(k) ~ {fit.F0:.8g} + {fit.F1:.8g}/k "
          f"+ {fit.F2:.8g}/k^2   (residual {fit.residual:.2e})")
    print(f"Futaki invariant estimate (1/k coefficient): {fit.F1:.8g}")
    return EXIT_OK


def cmd_filtration(args) -> int:
    P, sigma = _load_polytope(args.polytope)
    f = _parse_pieces(args.pieces, P.dim)
    ks = [int(t) for t in args.ks.split(",")]
    vals = [(k, filtration_futaki(P, f, k)) for k in ks]
    out = Path(args.out)
    _write_manifest(out, "filtration", vars_of(args), [args.polytope])
    with (out / "filtration.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "statistic"])
        for k, v in vals:
            w.writerow([k, _rat(v)])
    for k, v in vals:
        print(f"k = {k:>5}: filtration statistic = {v} ~ {float(v):.8f}")
    if len(vals) >= 2:
        (k1, v1), (k2, v2) = vals[-2], vals[-1]
        f1 = (v1 - v2) / (Q(1, k1) - Q(1, k2))
        print(f"extrapolated 1/k coefficient: {float(f1):.8f}")
    return EXIT_OK


def cmd_solve(args) -> int:
    P, sigma = _load_polytope(args.polytope)
    out = Path(args.out)
    _write_manifest(out, "solve", vars_of(args), [args.polytope])
    callback = None
    if args.dump_every:
        def callback(it, grid):
            if it % args.dump_every == 0:
                _dump_grid(out / f"grid_{it:05d}.csv", grid)
    report = sol.solve(P, sigma, m=args.mesh, tol=args.tol, max_iter=args.max_iter,
                       require_futaki_zero=not args.allow_nonzero_futaki,
                       callback=callback)
    _write_json(out, "solve.json", {
        "termination": report.termination,
        "residual_sup": report.residual_sup,
        "iterations": report.iterations,
        "futaki": [_rat(v) for v in report.futaki],
        "mabuchi_final": report.mabuchi_history[-1] if report.mabuchi_history else None,
        "min_det_final": report.min_det_history[-1] if report.min_det_history else None,
    })
    with (out / "histories.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "mabuchi", "residual_sup", "min_det", "sup_u", "sup_phi"])
        for i in range(len(report.mabuchi_history)):
            w.writerow([i, report.mabuchi_history[i], report.residual_history[i],
                        report.min_det_history[i], report.sup_u_history[i],
                        report.sup_phi_history[i]])
    if report.termination != "refused-futaki":
        _dump_grid(out / "grid.csv", report.grid)
    print(f"termination: {report.termination}")
    print(f"sup residual: {report.residual_sup:.3e} after {report.iterations} iterations")
    if report.certificate:
        print("divergence certificate:", report.certificate["message"])
        print(f"  min det(u_ab) = {report.certificate['min_det']:.3e} "
              f"near {report.certificate['min_det_location']}")
    if report.termination == "converged":
        return EXIT_OK
    if report.termination == "refused-futaki":
        print(f"Futaki vector {tuple(map(str, report.futaki))} is nonzero; "
              "no constant-scalar-curvature solution exists")
        return EXIT_FUTAKI
    if report.termination == "divergence-certificate":
        return EXIT_DIVERGENCE
    return EXIT_ERROR


def _dump_grid(path: Path, g: geo.PotentialGrid):
    rows = geo.grid_dump_rows(g)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        header = ["x1", "x2"][: g.n] + ["u", "det_hess", "S"]
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) for v in row])


def cmd_ray(args) -> int:
    P, sigma = _load_polytope(args.polytope)
    n = P.dim
    qvals = [Q(t) for t in args.quadratic.split(",")] if args.quadratic else []
    lvals = [Q(t) for t in args.linear.split(",")] if args.linear else [Q(0)] * n
    if args.quadratic and len(qvals) != n * (n + 1) // 2:
        raise ValueError("need n(n+1)/2 entries for the quadratic part")
    if len(lvals) != n:
        raise ValueError("need n entries for the linear part")

    if n == 1:
        qxx = float(qvals[0]) if qvals else 0.0
        lin = float(lvals[0])
        def f(x):
            return qxx * x * x + lin * x
    else:
        qxx = float(qvals[0]) if qvals else 0.0
        qxy = float(qvals[1]) if qvals else 0.0
        qyy = float(qvals[2]) if qvals else 0.0
        l1, l2 = float(lvals[0]), float(lvals[1])
        def f(x, y):
            return qxx * x * x + 2 * qxy * x * y + qyy * y * y + l1 * x + l2 * y
    rs = sol.ray_slope(P, sigma, f, s_max=args.smax, m=args.mesh)
    out = Path(args.out)
    _write_manifest(out, "ray", vars_of(args), [args.polytope])
    with (out / "ray.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "mabuchi"])
        for s, F in rs.samples:
            w.writerow([repr(s), repr(F)])
    print(f"asymptotic slope: {rs.slope:.10g}")
    print(f"quadrature L of the ray direction: {rs.l_value:.10g}")
    rel = abs(rs.slope - rs.l_value) / max(abs(rs.l_value), 1e-30)
    print(f"relative gap: {rel:.2e}")
    return EXIT_OK


def cmd_flow_sphere(args) -> int:
    rows = []
    for line in Path(args.points).read_text().splitlines():
        s = line.split("#", 1)[0].strip()
        if s:
            rows.append([float(t) for t in s.split()])
    pts = np.array([r[:3] for r in rows])
    mult = np.array([r[3] if len(r) > 3 else 1.0 for r in rows])
    pts = pts / np.linalg.norm(pts, axis=1)[:, None]
    res = kn.sphere_flow(kn.SphereConfig(pts, mult), step=args.step,
                         max_steps=args.max_steps)
    out = Path(args.out)
    _write_manifest(out, "flow-sphere", vars_of(args), [args.points])
    with (out / "trajectory.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "mu_norm"])
        for i, v in enumerate(res.mu_norms):
            w.writerow([i, repr(v)])
    _write_json(out, "flow.json", {
        "verdict": res.verdict,
        "mu_norm_final": res.mu_norms[-1],
        "steps": res.steps,
        "points": res.config.points.tolist(),
        "multiplicities": res.config.multiplicities.tolist(),
    })
    print(f"verdict: {res.verdict}, |mu| = {res.mu_norms[-1]:.3e} after {res.steps} steps")
    if res.antipodal is not None:
        axis, plus, minus = res.antipodal
        print(f"antipodal structure: multiplicities ({plus:g}, {minus:g}) along "
              f"({axis[0]:.4f}, {axis[1]:.4f}, {axis[2]:.4f})")
    return EXIT_OK


def cmd_flow_matrix(args) -> int:
    lines = [ln.split("#", 1)[0].strip() for ln in Path(args.matrix).read_text().splitlines()]
    rows = [[complex(t) for t in ln.split()] for ln in lines if ln]
    res = kn.matrix_flow(np.array(rows), step=args.step, max_steps=args.max_steps)
    out = Path(args.out)
    _write_manifest(out, "flow-matrix", vars_of(args), [args.matrix])
    with (out / "trajectory.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "commutator_norm"])
        for i, v in enumerate(res.commutator_norms):
            w.writerow([i, repr(v)])
    _write_json(out, "flow.json", {
        "verdict": res.verdict,
        "commutator_norm_final": res.commutator_norms[-1],
        "steps": res.steps,
        "matrix_real": res.matrix.real.tolist(),
        "matrix_imag": res.matrix.imag.tolist(),
        "eigenvalues_real": sorted(np.linalg.eigvals(res.matrix).real.tolist()),
    })
    print(f"verdict: {res.verdict}, ||[A,A*]|| = {res.commutator_norms[-1]:.3e} "
          f"after {res.steps} steps")
    print(f"Frobenius norm of the limit: {np.linalg.norm(res.matrix):.6g}")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    P, sigma = _load_polytope(args.polytope)
    out = Path(args.out)
    _write_manifest(out, "pipeline", vars_of(args), [args.polytope])
    verdict = crease_search(P, sigma, args.resolution, workers=args.workers)
    log = {"stability": verdict.status,
           "futaki": [_rat(v) for v in verdict.futaki]}
    print(f"stability verdict: {verdict.status}")
    if any(v != 0 for v in verdict.futaki):
        log["exit"] = EXIT_FUTAKI
        _write_json(out, "pipeline.json", log)
        print(f"Futaki vector {tuple(map(str, verdict.futaki))} is nonzero (exit 3)")
        return EXIT_FUTAKI
    if verdict.status == "unstable":
        c = verdict.best_creases[0]
        log["witness"] = {"direction": list(c.direction), "offset": _rat(c.offset),
                          "L": _rat(c.L_value)}
        log["exit"] = EXIT_UNSTABLE
        _write_json(out, "pipeline.json", log)
        print(f"destabilizing crease a={c.direction}, c={c.offset} with L = {c.L_value} (exit 2)")
        return EXIT_UNSTABLE
    report = sol.solve(P, sigma, m=args.mesh, tol=args.tol, max_iter=args.max_iter)
    log["solver"] = report.termination
    if report.termination == "converged":
        log["exit"] = EXIT_OK
        _write_json(out, "pipeline.json", log)
        print(f"solved: sup residual {report.residual_sup:.3e} (exit 0)")
        return EXIT_OK
    if report.termination == "divergence-certificate":
        # search said stable, solver disagreed: log the anomaly loudly
        log["anomaly"] = ("stability search found no destabilizer at this "
                          "resolution but the solver emitted a divergence "
                          "certificate; increase the resolution")
        log["exit"] = EXIT_DIVERGENCE
        _write_json(out, "pipeline.json", log)
        print("divergence certificate despite stable-at-resolution verdict "
              "(logged anomaly, exit 4)")
        return EXIT_DIVERGENCE
    log["exit"] = EXIT_ERROR
    _write_json(out, "pipeline.json", log)
    print(f"solver did not converge: {report.termination} (exit 1)")
    return EXIT_ERROR


def vars_of(args) -> dict:
    skip = {"func"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="kstab",
        description="Toric K-stability, Futaki invariants, the Abreu equation, "
                    "and moment-map flows. File formats: docs/formats.md.")
    ap.add_argument("--seed", type=int, default=0,
                    help="seed recorded in the manifest (flows are deterministic)")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        p = sub.add_parser(name, **kw)
        p.set_defaults(func=fn)
        p.add_argument("--out", default=f"kstab-{name}-out", help="output directory")
        return p

    p = add("analyze", cmd_analyze, help="measures, Delzant check, Futaki vector")
    p.add_argument("polytope")

    p = add("destabilize", cmd_destabilize, help="crease search for destabilizers")
    p.add_argument("polytope")
    p.add_argument("--resolution", type=int, default=8)
    p.add_argument("--workers", type=int, default=None,
                   help="parallel workers (default: KSTAB_THREADS or 1)")

    p = add("futaki", cmd_futaki, help="lattice-point weight table and expansion fit")
    p.add_argument("polytope")
    p.add_argument("--xi", default="1,0")
    p.add_argument("--kmin", type=int, default=4)
    p.add_argument("--kmax", type=int, default=40)

    p = add("filtration", cmd_filtration, help="filtration weight statistic of a PL function")
    p.add_argument("polytope")
    p.add_argument("--pieces", required=True,
                   help="affine pieces 'a1,..,an,b' separated by ';'")
    p.add_argument("--ks", default="32,64,128,256", help="comma-separated k values")

    p = add("solve", cmd_solve, help="solve the constant scalar curvature equation")
    p.add_argument("polytope")
    p.add_argument("--mesh", type=int, default=None)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--max-iter", type=int, default=400)
    p.add_argument("--dump-every", type=int, default=0,
                   help="write a grid snapshot CSV every N iterations")
    p.add_argument("--allow-nonzero-futaki", action="store_true",
                   help="skip the Futaki refusal (divergence experiments)")

    p = add("ray", cmd_ray, help="Mabuchi slope along a convex ray")
    p.add_argument("polytope")
    p.add_argument("--quadratic", default=None,
                   help="rationals qxx[,qxy,qyy] of the quadratic part")
    p.add_argument("--linear", default=None, help="rationals of the linear part")
    p.add_argument("--smax", type=float, default=1e3)
    p.add_argument("--mesh", type=int, default=None)

    p = add("flow-sphere", cmd_flow_sphere, help="center-of-mass flow on the sphere")
    p.add_argument("--points", required=True, help="file: x y z [multiplicity] per line")
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--max-steps", type=int, default=200000)

    p = add("flow-matrix", cmd_flow_matrix, help="commutator-norm flow on a matrix orbit")
    p.add_argument("--matrix", required=True, help="file: complex entries per row")
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--max-steps", type=int, default=100000)

    p = add("pipeline", cmd_pipeline, help="destabilize, then solve if stable")
    p.add_argument("polytope")
    p.add_argument("--resolution", type=int, default=8)
    p.add_argument("--mesh", type=int, default=None)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--max-iter", type=int, default=400)
    p.add_argument("--workers", type=int, default=None)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except PolytopeParseError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
