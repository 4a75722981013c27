"""Batch orchestration: parameter sweeps, convergence studies, reports.

One declarative JSON config per run; command-line flags only override the
seed, output directory, and worker count.  Every study writes RFC-4180
CSV (17 significant digits) plus a machine-readable manifest recording
the resolved config, library versions, seeds, wall times, and per-point
status; re-running from the manifest reproduces the CSV byte for byte.

Exit codes: 0 success, 2 usage, 3 capacity, 4 accuracy/non-convergence.
"""

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from . import asymptotics as asym
from . import operators as ops
from . import renorm
from . import scattering as scat
from .errors import AccuracyError, CapacityError, ContractViolation, SolverError
from .eig import lanczos_lowest
from .fock import enumerate_sector
from .lattice import TWO_PI, ModelParams, build_lattice

EXIT_OK, EXIT_USAGE, EXIT_CAPACITY, EXIT_ACCURACY = 0, 2, 3, 4


def _fmt(x):
    return f"{float(x):.17g}"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def _require(cfg, key, path="config"):
    if key not in cfg:
        raise ContractViolation(f"{path}.{key} is missing")
    return cfg[key]


def _potential_from(cfg, path):
    kind = _require(cfg, "kind", path)
    if kind == "tabulated_radial":
        return scat.load_tabulated_potential(_require(cfg, "file", path))
    return scat.PotentialSpec(kind, amplitude=float(cfg.get("amplitude", 1.0)),
                              range=float(cfg.get("range", 0.25)))


# ---------------------------------------------------------------------------
# studies; each returns (csv_name, header, rows, extras) given the config

def _point_scatter(cfg, pt):
    pot = _potential_from(cfg["potential"], "config.potential")
    tol = float(cfg.get("tol", 1e-10))
    lat = build_lattice(pt["cutoff"])
    sol = scat.solve_torus_scattering(pot.scaled(pt["n"]), lat, tol=tol)
    a_t = sol.torus_length
    a_free = pt["a_free"]
    return [pt["n"], lat.size, _fmt(a_t), _fmt(pt["n"] * a_t), _fmt(a_free),
            _fmt(abs(pt["n"] * a_t - a_free))]


def _study_scatter(cfg, seed, workers):
    pot = _potential_from(_require(cfg, "potential"), "config.potential")
    n_grid = [int(n) for n in _require(cfg, "n_grid")]
    if not n_grid:
        raise ContractViolation("config.n_grid is empty")
    per_n = float(cfg.get("cutoff_per_n", 5.0))
    free_pts = int(cfg.get("free_grid_points", 3000))
    a_free = scat.free_space_scattering_length(pot, grid_points=free_pts)
    points = [{"n": n, "cutoff": per_n * n, "a_free": a_free} for n in n_grid]
    rows, statuses = _run_points("scattering_rate", cfg, points, workers)
    done = [r for r in rows if r is not None]
    extras = {}
    if len(done) >= 3:
        exponent, constant = scat.rate_fit(
            [(r[0], float(r[5])) for r in done if float(r[5]) > 0])
        extras["rate_fit"] = {"exponent": exponent, "constant": constant}
    header = ["n", "lattice_size", "torus_length", "n_times_length",
              "free_length", "abs_diff"]
    return "scatter.csv", header, done, extras, statuses


def _study_flow(cfg, seed, workers):
    grid = [float(x) for x in _require(cfg, "lambda_grid")]
    if not grid:
        raise ContractViolation("config.lambda_grid is empty")
    a_v = float(cfg.get("a_v", 0.25))
    a_w = float(cfg.get("a_w", 0.15))
    kappa = float(cfg.get("kappa", 2.0)) * TWO_PI
    n_max = int(cfg.get("n_max", 2))
    k = int(cfg.get("k", 3))
    tol = float(cfg.get("tol", 1e-8))
    rows, statuses = [], []
    prev = None
    # the cutoff chain is warm-started, so this study is always sequential;
    # worker counts cannot change its output
    for i, lam in enumerate(grid):
        t0 = time.time()
        try:
            cutoff = lam * TWO_PI
            lat = build_lattice(cutoff)
            p = ModelParams(a_v=a_v, a_w=a_w, cutoff=cutoff, kappa=kappa,
                            n_max=n_max)
            e1 = renorm.e_lambda_1(p)
            e2 = renorm.e_lambda_2(p)
            if n_max == 2:
                warm = None
                if prev is not None:
                    shift = (e1 + e2) - prev["E"]
                    warm = {j: prev["ev"][j] + shift for j in range(k)}
                ev, _ = ops.pair_sector_lowest(lat, p, k=k, tol=tol, seed=seed,
                                               warm=warm)
            else:
                basis = enumerate_sector(lat, n_max)
                rep = lanczos_lowest(ops.hbf_operator(basis, p), k, tol=tol,
                                     seed=seed)
                if not rep.converged:
                    raise SolverError("flow eigensolve did not converge")
                ev = rep.eigenvalues
            prev = {"ev": ev, "E": e1 + e2}
            row = [_fmt(cutoff), _fmt(kappa), n_max, _fmt(ev[0]), _fmt(ev[1]),
                   _fmt(ev[2]), _fmt(e1), _fmt(e2), _fmt(ev[0] - e1 - e2)]
            rows.append(row)
            statuses.append({"index": i, "status": "ok",
                             "wall_s": time.time() - t0})
        except Exception as exc:       # recorded, sweep continues
            statuses.append({"index": i, "status": "error",
                             "error": f"{type(exc).__name__}: {exc}",
                             "wall_s": time.time() - t0})
    header = ["cutoff", "kappa", "n_max", "e0", "e1", "e2", "E1", "E2",
              "e0_minus_E"]
    return "flow.csv", header, rows, {}, statuses


def _point_spectrum(cfg, pt):
    a_v = float(cfg.get("a_v", 0.0))
    a_w = float(cfg.get("a_w", 0.1))
    kappa = float(cfg.get("kappa", 0.0)) * TWO_PI
    k = int(cfg.get("k", 3))
    tol = float(cfg.get("tol", 1e-9))
    seed = int(cfg.get("_seed", 0))
    cutoff = pt["lam"] * TWO_PI
    lat = build_lattice(cutoff)
    params = ModelParams(a_v=a_v, a_w=a_w, cutoff=cutoff, kappa=kappa,
                         n_max=pt["n_max"], p_total=pt["p"])
    basis = enumerate_sector(lat, pt["n_max"], p_total=pt["p"])
    rep = lanczos_lowest(ops.hbf_operator(basis, params),
                         min(k, basis.dim), tol=tol, seed=seed)
    if not rep.converged:
        raise SolverError("spectrum eigensolve did not converge")
    return [[_fmt(cutoff), pt["n_max"], json.dumps(list(pt["p"])), basis.dim,
             i, _fmt(ev), _fmt(rn)]
            for i, (ev, rn) in enumerate(zip(rep.eigenvalues,
                                             rep.residual_norms))]


def _study_spectrum(cfg, seed, workers):
    lam_grid = [float(x) for x in _require(cfg, "lambda_grid")]
    nmax_grid = [int(x) for x in cfg.get("n_max_grid", [1])]
    p_grid = [tuple(int(c) for c in p) for p in cfg.get("p_total_grid", [[0, 0, 0]])]
    if not lam_grid or not nmax_grid or not p_grid:
        raise ContractViolation("spectrum grids must be non-empty")
    cfg = dict(cfg, _seed=seed)
    points = [{"lam": l, "n_max": nm, "p": p}
              for l in lam_grid for nm in nmax_grid for p in p_grid]
    nested, statuses = _run_points("spectrum_gaps", cfg, points, workers)
    rows = [r for block in nested if block is not None for r in block]
    header = ["cutoff", "n_max", "p_total", "dim", "index", "eigenvalue",
              "residual"]
    return "spectrum.csv", header, rows, {}, statuses


def _study_weyl(cfg, seed, workers):
    radius = float(cfg.get("lattice_radius", 1.0)) * TWO_PI
    n_max = int(cfg.get("n_max", 3))
    a_v = float(cfg.get("a_v", 1.0))
    a_w = float(cfg.get("a_w", 0.02))
    kappa = float(cfg.get("kappa", 0.0)) * TWO_PI
    lat = build_lattice(radius)
    params = ModelParams(a_v=a_v, a_w=a_w, cutoff=radius, kappa=kappa,
                         n_max=n_max)
    basis = enumerate_sector(lat, n_max)
    t0 = time.time()
    h = ops.hbf_dense(basis, params)
    u = ops.weyl_unitary(basis, ops.gross_profile_array(lat, params))
    rhs = ops.dressed_rhs(basis, params)
    conj = u.matrix.T @ h.matrix @ u.matrix
    interior = basis.offsets[max(0, n_max - 1)]
    block = slice(0, int(interior))
    resid = float(np.max(np.abs(conj[block, block] - rhs.matrix[block, block])))
    h_max = float(np.max(np.abs(h.matrix)))
    row = [[_fmt(radius), n_max, _fmt(a_v), _fmt(a_w), _fmt(kappa), basis.dim,
            _fmt(h_max), _fmt(resid), _fmt(resid / h_max),
            str(resid <= 1e-8 * h_max)]]
    status = [{"index": 0, "status": "ok", "wall_s": time.time() - t0}]
    header = ["lattice_radius", "n_max", "a_v", "a_w", "kappa", "dim", "h_max",
              "max_residual", "relative_residual", "within_1e-8"]
    return "weyl.csv", header, row, {}, status


def _point_logterm(cfg, pt):
    a_w = float(cfg.get("a_w", 1.0))
    a_v = float(cfg.get("a_v", 0.0))
    params = ModelParams(a_v=a_v, a_w=a_w, cutoff=TWO_PI, kappa=0.0, n_max=2)
    closed = asym.log_coefficient(a_w)
    c = math.sqrt(pt["N"])
    e_lo = asym.e_n_sum(pt["N"], params, cutoff=c)
    e_hi = asym.e_n_sum(pt["N"], params, cutoff=2.0 * c)
    slope = (e_hi - e_lo) / math.log(2.0)
    return [_fmt(pt["N"]), _fmt(c), _fmt(e_lo), _fmt(e_hi), _fmt(slope),
            _fmt(closed), _fmt(abs(slope - closed) / abs(closed))]


def _study_logterm(cfg, seed, workers):
    n_grid = [float(x) for x in _require(cfg, "N_grid")]
    if not n_grid:
        raise ContractViolation("config.N_grid is empty")
    points = [{"N": n} for n in n_grid]
    rows, statuses = _run_points("log_term", cfg, points, workers)
    header = ["N", "cutoff", "E_at_cutoff", "E_at_doubled_cutoff",
              "slope_per_log2", "closed_form", "relative_error"]
    return "logterm.csv", header, [r for r in rows if r], {}, statuses


def _point_lhy(cfg, pt):
    val = asym.lhy_sum(float(cfg.get("a_v", 1.0)), pt["c"] * TWO_PI)
    return [_fmt(pt["c"]), _fmt(val)]


def _study_lhy(cfg, seed, workers):
    c_grid = [float(x) for x in _require(cfg, "c_grid")]
    if not c_grid:
        raise ContractViolation("config.c_grid is empty")
    points = [{"c": c} for c in c_grid]
    rows, statuses = _run_points("lhy", cfg, points, workers)
    done = [r for r in rows if r]
    extras = {}
    incr = [(float(done[i][0]), abs(float(done[i + 1][1]) - float(done[i][1])))
            for i in range(len(done) - 1)]
    if len(incr) >= 2 and all(v > 0 for _, v in incr):
        slope, intercept = np.polyfit(np.log([c for c, _ in incr]),
                                      np.log([v for _, v in incr]), 1)
        extras["increment_fit"] = {"exponent": float(slope),
                                   "constant": float(np.exp(intercept))}
    header = ["cutoff_over_2pi", "value"]
    return "lhy.csv", header, done, extras, statuses


def _point_expand(cfg, pt):
    a_v = float(cfg.get("a_v", 0.1))
    a_w = float(cfg.get("a_w", 0.1))
    kappa = float(cfg.get("kappa", 2.0)) * TWO_PI
    alpha = float(cfg.get("alpha", 0.1))
    diff = cfg.get("length_differences", {"V": 0.0, "W": 0.0})
    params = ModelParams(a_v=a_v, a_w=a_w, cutoff=TWO_PI, kappa=kappa, n_max=2)
    n = pt["N"]
    scattering = {"V": (a_v + float(diff["V"]) / n, a_v),
                  "W": (a_w + float(diff["W"]) / math.sqrt(n), a_w)}
    br = asym.energy_expansion(n, params, scattering, alpha=alpha)
    return br.csv_row()


def _study_expand(cfg, seed, workers):
    n_grid = [float(x) for x in _require(cfg, "N_grid")]
    if not n_grid:
        raise ContractViolation("config.N_grid is empty")
    points = [{"N": n} for n in n_grid]
    rows, statuses = _run_points("expansion", cfg, points, workers)
    return ("expansion.csv", asym.ExpansionBreakdown.csv_header(),
            [r for r in rows if r], {}, statuses)


_STUDIES = {
    "scattering_rate": _study_scatter,
    "renorm_flow": _study_flow,
    "spectrum_gaps": _study_spectrum,
    "weyl_identity": _study_weyl,
    "log_term": _study_logterm,
    "lhy": _study_lhy,
    "expansion": _study_expand,
}

_POINT_RUNNERS = {
    "scattering_rate": _point_scatter,
    "spectrum_gaps": _point_spectrum,
    "log_term": _point_logterm,
    "lhy": _point_lhy,
    "expansion": _point_expand,
}


def _point_entry(study, cfg, pt):
    """Module-level worker entry so process pools can pickle the call."""
    return _POINT_RUNNERS[study](cfg, pt)

_SUBCOMMANDS = {
    "scatter": "scattering_rate",
    "flow": "renorm_flow",
    "spectrum": "spectrum_gaps",
    "weyl": "weyl_identity",
    "logterm": "log_term",
    "lhy": "lhy",
    "expand": "expansion",
}


def _run_points(study, cfg, points, workers):
    """Run independent grid points, keeping deterministic result order.

    Failures are recorded per point and do not abort the sweep; results
    are collected in grid order so output never depends on scheduling.
    """
    results = [None] * len(points)
    statuses = []
    if workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {i: pool.submit(_point_entry, study, cfg, pt)
                       for i, pt in enumerate(points)}
            for i in range(len(points)):
                t0 = time.time()
                try:
                    results[i] = futures[i].result()
                    statuses.append({"index": i, "status": "ok",
                                     "point": points[i],
                                     "wall_s": time.time() - t0})
                except Exception as exc:
                    statuses.append({"index": i, "status": "error",
                                     "point": points[i],
                                     "error": f"{type(exc).__name__}: {exc}",
                                     "wall_s": time.time() - t0})
    else:
        for i, pt in enumerate(points):
            t0 = time.time()
            try:
                results[i] = _point_entry(study, cfg, pt)
                statuses.append({"index": i, "status": "ok", "point": pt,
                                 "wall_s": time.time() - t0})
            except Exception as exc:
                statuses.append({"index": i, "status": "error", "point": pt,
                                 "error": f"{type(exc).__name__}: {exc}",
                                 "wall_s": time.time() - t0})
    return results, statuses


def run_study(config, out_dir, seed=0, workers=1):
    """Execute one named study; writes CSV plus manifest, returns exit code."""
    import os
    import scipy
    study = config.get("study")
    if study not in _STUDIES:
        raise ContractViolation(
            f"config.study must be one of {sorted(_STUDIES)}, got {study!r}")
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.time()
    csv_name, header, rows, extras, statuses = _STUDIES[study](config, seed,
                                                               workers)
    csv_path = os.path.join(out_dir, csv_name)
    _write_csv(csv_path, header, rows)
    manifest = {
        "study": study,
        "config": config,
        "seed": seed,
        "workers": workers,
        "versions": {"toruspolaron": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__,
                     "python": sys.version.split()[0]},
        "wall_time_s": time.time() - t0,
        "points": statuses,
        "extras": extras,
        "outputs": {csv_name: _sha256(csv_path)},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True, default=str)
    failed = [s for s in statuses if s["status"] != "ok"]
    if not failed:
        return EXIT_OK
    worst = EXIT_ACCURACY
    for s in failed:
        if "CapacityError" in s.get("error", ""):
            worst = EXIT_CAPACITY
    return worst


def _load_config(path):
    with open(path) as fh:
        cfg = json.load(fh)
    if "config" in cfg and "study" in cfg.get("config", {}):
        cfg = cfg["config"]        # accept a manifest as the config
    return cfg


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="toruspolaron",
        description="Parameter sweeps and convergence studies; see README")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=1)
    try:
        args = parser.parse_args(argv)
    except SystemExit:
        return EXIT_USAGE
    try:
        config = _load_config(args.config)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    expected = _SUBCOMMANDS[args.command]
    config.setdefault("study", expected)
    if config["study"] != expected:
        print(f"error: config.study = {config['study']!r} does not match "
              f"subcommand {args.command!r}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return run_study(config, args.out, seed=args.seed, workers=args.workers)
    except ContractViolation as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (AccuracyError, SolverError) as exc:
        print(f"accuracy error: {exc}", file=sys.stderr)
        return EXIT_ACCURACY


if __name__ == "__main__":
    sys.exit(main())
