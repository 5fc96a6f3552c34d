"""Command-line harness: generation, decomposition, solving, verification.

Configuration is flat ``section.key=value`` text, overridable with repeated
``--set`` flags; unknown keys are rejected.  Artifacts are written
atomically (temp file + rename).  Exit codes: 0 success, 1 solver
non-convergence, 2 input/config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import darcy, datasetio, decomp, krylov, localspectral, metric, precond
from .errors import (ConfigError, DimensionMismatchError, FormatError,
                     IterationError, NotSPDError, RankDeficientError,
                     SchwarzLabError)

# key -> (type, default, help); bools parse true/false, "nan" floats mean unset
SCHEMA = {
    "problem.dim": (int, 2, "spatial dimension (2 or 3)"),
    "problem.nx": (int, 32, "cells along x"),
    "problem.ny": (int, 0, "cells along y (0 = nx)"),
    "problem.nz": (int, 0, "cells along z (0 = nx, 3D only)"),
    "problem.perm": (str, "constant", "constant | lognormal | channels"),
    "problem.kappa": (float, 1.0, "constant permeability value"),
    "problem.sigma2": (float, 2.0, "log-field variance"),
    "problem.eta": (float, float("nan"),
                    "correlation length (default 0.05 in 2D, 0.1 in 3D)"),
    "problem.kappa_c": (float, 1e3, "channel permeability"),
    "problem.channels_lo": (int, 8, "min channel count"),
    "problem.channels_hi": (int, 20, "max channel count"),
    "problem.width_lo": (float, 3.0, "min channel width (3D: radius)"),
    "problem.width_hi": (float, 8.0, "max channel width (3D: radius)"),
    "problem.seed": (int, 0, "permeability RNG seed"),
    "problem.bc": (str, "C1", "boundary preset C1 | C2"),
    "decomp.k": (int, 8, "subdomain count"),
    "decomp.delta": (int, 2, "overlap depth (graph distance)"),
    "decomp.partitioner": (str, "auto", "auto | rcb | graph | file"),
    "decomp.part_file": (str, "", "partition vector file (one id per line)"),
    "decomp.seed": (int, 0, "partitioner seed"),
    "coarse.mode": (str, "exact", "exact | import | none"),
    "coarse.n_c": (int, 8, "spectral vectors per subdomain (0 = adaptive)"),
    "coarse.tau": (float, float("nan"),
                   "adaptive eigenvalue threshold (unset = fixed n_c)"),
    "coarse.import_dir": (str, "", "directory of basis_%04d.cbx files"),
    "coarse.import_kernel": (str, "none",
                             "none | compute: add kernel columns on import"),
    "solver.tol": (float, 1e-8, "relative residual target"),
    "solver.max_iter": (int, 2000, "iteration cap"),
    "solver.variant": (str, "symmetric", "symmetric | weighted level 1"),
    "solver.dense_kappa": (str, "auto", "auto | always | never"),
    "solver.dense_cap": (int, 4096, "max n for dense spectra"),
    "output.dir": (str, "out", "artifact directory"),
    "output.plots": (bool, True, "render figures next to CSV output"),
    "corpus.num_graphs": (int, 20, "number of global operators"),
    "corpus.graph_size": (int, 600, "vertices per operator"),
    "corpus.nnz_lo": (float, 3.0, "min NNZ/N"),
    "corpus.nnz_hi": (float, 7.0, "max NNZ/N"),
    "corpus.target_size": (int, 300, "target subdomain size"),
    "corpus.delta": (int, 2, "corpus overlap depth"),
    "corpus.n_c": (int, 8, "target basis width"),
    "corpus.train_fraction": (float, 0.8, "train split fraction"),
    "corpus.seed": (int, 0, "corpus master seed"),
    "export.include_kernel": (bool, True,
                              "exported coarse bases carry kernel columns"),
    "export.targets": (bool, True, "embed target bases in SGB records"),
}


def _parse_value(key, raw):
    typ = SCHEMA[key][0]
    raw = raw.strip()
    if typ is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: cannot parse {raw!r} as bool")
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}")


def load_config(path=None, overrides=()):
    cfg = {k: v for k, (_, v, _) in SCHEMA.items()}
    pairs = []
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        for ln, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected key=value")
            pairs.append(tuple(line.split("=", 1)))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        pairs.append(tuple(item.split("=", 1)))
    for key, raw in pairs:
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = _parse_value(key, raw)
    return cfg


def _atomic_text(path, text):
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _atomic_json(path, payload):
    _atomic_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# problem construction
# ---------------------------------------------------------------------------

def build_problem(cfg):
    dim = cfg["problem.dim"]
    if dim not in (2, 3):
        raise ConfigError("problem.dim must be 2 or 3")
    nx = cfg["problem.nx"]
    ny = cfg["problem.ny"] or nx
    nz = cfg["problem.nz"] or nx
    grid = darcy.Grid((nx, ny) if dim == 2 else (nx, ny, nz))
    kind = cfg["problem.perm"]
    seed = cfg["problem.seed"]
    if kind == "constant":
        perm = darcy.constant_field(grid, cfg["problem.kappa"])
    elif kind == "lognormal":
        eta = cfg["problem.eta"]
        if math.isnan(eta):
            eta = 0.05 if dim == 2 else 0.1
        perm = darcy.gen_lognormal(grid, cfg["problem.sigma2"],
                                   [eta] * dim, seed)
    elif kind == "channels":
        perm = darcy.gen_channels(
            grid, (cfg["problem.channels_lo"], cfg["problem.channels_hi"]),
            None, (cfg["problem.width_lo"], cfg["problem.width_hi"]),
            cfg["problem.kappa_c"], seed)
    else:
        raise ConfigError(f"unknown permeability family {kind!r}")
    bc = darcy.BoundaryConfig.preset(cfg["problem.bc"], dim)
    system = darcy.assemble_tpfa(grid, perm, bc)
    return system


def build_decomposition(cfg, system):
    graph = decomp.adjacency_graph(system.A)
    method = cfg["decomp.partitioner"]
    k = cfg["decomp.k"]
    if method == "file":
        if not cfg["decomp.part_file"]:
            raise ConfigError("decomp.partitioner=file needs decomp.part_file")
        interior = decomp.read_partition_vector(cfg["decomp.part_file"])
    elif method in ("auto", "rcb"):
        interior = decomp.partition(graph, k, cfg["decomp.seed"],
                                    coords=system.grid.coords())
    elif method == "graph":
        interior = decomp.partition(graph, k, cfg["decomp.seed"])
    else:
        raise ConfigError(f"unknown partitioner {method!r}")
    return decomp.grow_overlap(graph, interior, cfg["decomp.delta"])


def _coarse_selection(cfg):
    n_c = cfg["coarse.n_c"] if cfg["coarse.n_c"] > 0 else None
    tau = None if math.isnan(cfg["coarse.tau"]) else cfg["coarse.tau"]
    if n_c is None and tau is None:
        raise ConfigError("set coarse.n_c > 0 or coarse.tau")
    return n_c, tau


def build_preconditioner(cfg, system, dec, workers=1):
    """Returns (M, spaces, blocks, setup_seconds); spaces is None unless
    the exact mode ran eigensolves."""
    t0 = time.monotonic()
    mode = cfg["coarse.mode"]
    blocks = [localspectral.build_local_blocks(system.A, dec, i)
              for i in range(dec.k)]
    spaces = None
    coarse = None
    if mode == "exact":
        n_c, tau = _coarse_selection(cfg)
        _, spaces = localspectral.build_all_coarse_spaces(
            system.A, dec, n_c=n_c, tau=tau, workers=workers,
            blocks_list=blocks)
        coarse = spaces
    elif mode == "import":
        if not cfg["coarse.import_dir"]:
            raise ConfigError("coarse.mode=import needs coarse.import_dir")
        bases = datasetio.load_imported_bases(cfg["coarse.import_dir"], dec)
        if cfg["coarse.import_kernel"] == "compute":
            merged = []
            for b, Z in zip(blocks, bases):
                K, _ = localspectral.kernel_bases(b)
                merged.append(np.hstack([K, Z]))
            bases = merged
        coarse = bases
    elif mode != "none":
        raise ConfigError(f"unknown coarse mode {mode!r}")
    M = precond.assemble(system.A, dec, coarse,
                         level1_variant=cfg["solver.variant"],
                         blocks_list=blocks)
    return M, spaces, blocks, time.monotonic() - t0


def _maybe_dense_kappa(cfg, system, M):
    mode = cfg["solver.dense_kappa"]
    n = system.A.n
    cap = cfg["solver.dense_cap"]
    if mode == "never" or cfg["solver.variant"] != "symmetric":
        return None
    if mode == "auto" and n > min(cap, 1200):
        return None
    if n > cap:
        return None
    _, kappa = precond.dense_preconditioned_spectrum(system.A, M, cap=cap)
    return kappa


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_solve(cfg, threads):
    out = Path(cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    system = build_problem(cfg)
    t0 = time.monotonic()
    dec = build_decomposition(cfg, system)
    M, spaces, _, precond_seconds = build_preconditioner(
        cfg, system, dec, workers=threads)
    setup_seconds = time.monotonic() - t0

    x, report = krylov.pcg(system.A, M, system.b, tol=cfg["solver.tol"],
                           max_iter=cfg["solver.max_iter"])
    report.setup_seconds = setup_seconds
    report.coarse_dim = M.coarse_dim
    report.dropped_columns = M.dropped
    report.kappa_dense = _maybe_dense_kappa(cfg, system, M)

    stats = decomp.overlap_stats(dec)
    bound = None
    if spaces is not None and (report.kappa_dense is not None
                               or report.kappa_estimate is not None):
        taus = [s.tau for s in spaces]
        bound = krylov.bound_check(report, stats, taus)
        report.bound_lemma = bound.lemma_bound

    tta = out / "tta.csv"
    krylov.write_time_to_accuracy_csv(str(tta) + ".tmp", report)
    os.replace(str(tta) + ".tmp", tta)
    darcy.write_field_raster(out / "field.raster", system.perm.values,
                             system.grid.dims,
                             provenance=system.perm.provenance,
                             seed=cfg["problem.seed"])
    darcy.write_field_raster(out / "solution.raster", x, system.grid.dims,
                             provenance={"kind": "solution"})
    payload = json.loads(report.to_json())
    payload["overlap_stats"] = {"k_c": stats.k_c, "k_m": stats.k_m}
    payload["decomposition"] = decomp.decomposition_manifest(
        dec, stats, seed=cfg["decomp.seed"])
    if bound is not None:
        payload["bound"] = {"kappa": bound.kappa, "source": bound.kappa_source,
                            "lemma": bound.lemma_bound,
                            "violated": bound.lemma_violated}
    _atomic_json(out / "report.json", payload)

    if cfg["output.plots"]:
        from . import plots
        rows = krylov.read_time_to_accuracy_csv(out / "tta.csv")
        plots.fig_time_to_accuracy(rows, out / "convergence.png",
                                   tol=cfg["solver.tol"],
                                   title="time to accuracy")
        plots.fig_field(system.perm.values, system.grid.dims,
                        out / "field.png", title="permeability")
        plots.fig_field(x, system.grid.dims, out / "solution.png",
                        log=False, title="pressure")
    print(f"converged={report.converged} iterations={report.iterations} "
          f"setup={report.setup_seconds:.3f}s solve={report.solve_seconds:.3f}s")
    return 0 if report.converged else 1


def cmd_corpus(cfg, threads):
    spec = datasetio.CorpusSpec(
        num_graphs=cfg["corpus.num_graphs"],
        graph_size=cfg["corpus.graph_size"],
        nnz_range=(cfg["corpus.nnz_lo"], cfg["corpus.nnz_hi"]),
        target_subdomain_size=cfg["corpus.target_size"],
        delta=cfg["corpus.delta"],
        n_c=cfg["corpus.n_c"],
        train_fraction=cfg["corpus.train_fraction"],
        seed=cfg["corpus.seed"])
    manifest = datasetio.build_corpus(spec, cfg["output.dir"])
    blob = json.dumps(manifest, sort_keys=True).encode()
    digest = hashlib.sha256(blob).hexdigest()
    print(f"records={len(manifest['records'])} manifest_sha256={digest}")
    return 0


def cmd_export(cfg, threads):
    out = Path(cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    system = build_problem(cfg)
    dec = build_decomposition(cfg, system)
    darcy.write_field_raster(out / "field.raster", system.perm.values,
                             system.grid.dims,
                             provenance=system.perm.provenance,
                             seed=cfg["problem.seed"])
    darcy.write_system_coo(out / "system.coo", out / "rhs.f64", system)
    n_c, tau = _coarse_selection(cfg)
    want_targets = cfg["export.targets"]
    for i in range(dec.k):
        blocks = localspectral.build_local_blocks(system.A, dec, i)
        rec = datasetio.record_from_blocks(
            blocks,
            multiplicity=dec.multiplicity[dec.overlapping_sets[i]])
        # targets and exported bases are solved on the record's own blocks
        # so they are reproducible bit for bit from the file
        space = localspectral.solve_local_spectral(
            datasetio.blocks_from_record(rec), n_c=n_c, tau=tau)
        if want_targets:
            rec.target_basis = space.spectral_part
        datasetio.write_sgb(out / datasetio.sgb_name(i), rec)
        Z = space.basis if cfg["export.include_kernel"] else space.spectral_part
        datasetio.write_cbx(out / datasetio.cbx_name(i), Z)
    _atomic_json(out / "export_manifest.json", {
        "k": dec.k, "n": system.A.n,
        "records": [datasetio.sgb_name(i) for i in range(dec.k)],
        "bases": [datasetio.cbx_name(i) for i in range(dec.k)],
        "include_kernel": cfg["export.include_kernel"]})
    print(f"exported {dec.k} subdomains to {out}")
    return 0


def cmd_import_check(cfg, threads):
    system = build_problem(cfg)
    dec = build_decomposition(cfg, system)
    if not cfg["coarse.import_dir"]:
        raise ConfigError("import-check needs coarse.import_dir")
    bases = datasetio.load_imported_bases(cfg["coarse.import_dir"], dec)
    for i, Z in enumerate(bases):
        print(f"subdomain {i}: {Z.shape[0]}x{Z.shape[1]} ok")
    print(f"import-check passed for {len(bases)} subdomains")
    return 0


def cmd_distance(args):
    rec = datasetio.read_sgb(args.sgb)
    a = datasetio.read_cbx(args.a)
    b = datasetio.read_cbx(args.b)
    for name, Z in (("a", a), ("b", b)):
        if Z.shape[0] != rec.n:
            raise DimensionMismatchError(
                f"basis {name} has {Z.shape[0]} rows, record has {rec.n}")
    at = rec.a_tilde()
    image = metric.image_basis(at)
    s1 = metric.a_orthonormalize(at, a, image=image)
    s2 = metric.a_orthonormalize(at, b, image=image)
    print(f"{metric.dist(s1, s2):.12e}")
    return 0


def cmd_condest(cfg, threads):
    out = Path(cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    system = build_problem(cfg)
    dec = build_decomposition(cfg, system)
    M, spaces, _, _ = build_preconditioner(cfg, system, dec, workers=threads)
    stats = decomp.overlap_stats(dec)
    payload = {"n": system.A.n, "coarse_dim": M.coarse_dim,
               "k_c": stats.k_c, "k_m": stats.k_m}
    if system.A.n <= cfg["solver.dense_cap"] \
            and cfg["solver.variant"] == "symmetric":
        _, kappa = precond.dense_preconditioned_spectrum(
            system.A, M, cap=cfg["solver.dense_cap"])
        payload["kappa"] = kappa
        payload["source"] = "dense"
    else:
        rng = np.random.default_rng(0)
        _, rep = krylov.pcg(system.A, M, rng.standard_normal(system.A.n),
                            tol=1e-12, max_iter=cfg["solver.max_iter"])
        payload["kappa"] = rep.kappa_estimate
        payload["source"] = "estimate"
    if spaces is not None:
        taus = [s.tau for s in spaces]
        payload["lemma_bound"] = krylov.schwarz_bound(
            stats.k_c, stats.k_m, taus)
        payload["max_tau"] = max(taus)
    _atomic_json(out / "condest.json", payload)
    print(f"kappa={payload['kappa']:.6e} ({payload['source']})")
    return 0


BENCH_FAMILIES = {
    "constant": {"problem.perm": "constant"},
    "lognormal": {"problem.perm": "lognormal"},
    "channels1e3": {"problem.perm": "channels", "problem.kappa_c": 1e3},
    "channels1e5": {"problem.perm": "channels", "problem.kappa_c": 1e5},
}


def cmd_bench(cfg, threads):
    out = Path(cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    curves = []
    for family, over in BENCH_FAMILIES.items():
        for bc in ("C1", "C2"):
            for mode in ("none", "exact"):
                sub = dict(cfg)
                sub.update(over)
                sub["problem.bc"] = bc
                sub["coarse.mode"] = mode
                name = f"bench_{family}_{bc}_{mode}"
                system = build_problem(sub)
                t0 = time.monotonic()
                dec = build_decomposition(sub, system)
                M, _, _, _ = build_preconditioner(sub, system, dec,
                                                  workers=threads)
                setup = time.monotonic() - t0
                _, rep = krylov.pcg(system.A, M, system.b,
                                    tol=sub["solver.tol"],
                                    max_iter=sub["solver.max_iter"])
                rep.setup_seconds = setup
                path = out / f"{name}.csv"
                krylov.write_time_to_accuracy_csv(str(path) + ".tmp", rep)
                os.replace(str(path) + ".tmp", path)
                summary.append({"cell": name, "family": family, "bc": bc,
                                "coarse": mode,
                                "iterations": rep.iterations,
                                "converged": rep.converged,
                                "setup_seconds": rep.setup_seconds,
                                "solve_seconds": rep.solve_seconds})
                curves.append((name, krylov.read_time_to_accuracy_csv(path)))
                print(f"{name}: iters={rep.iterations} "
                      f"converged={rep.converged}")
    _atomic_json(out / "bench_summary.json", summary)
    if cfg["output.plots"]:
        from . import plots
        plots.fig_comparison(curves, out / "bench.png",
                             tol=cfg["solver.tol"], title="benchmark grid")
    return 0


def cmd_report(args):
    out = Path(args.dir)
    from . import plots
    made = []
    tta = out / "tta.csv"
    if tta.exists():
        rows = krylov.read_time_to_accuracy_csv(tta)
        plots.fig_time_to_accuracy(rows, out / "convergence.png",
                                   title="time to accuracy")
        made.append("convergence.png")
    for name, log in (("field", True), ("solution", False)):
        raster = out / f"{name}.raster"
        if raster.exists():
            values, header = darcy.read_field_raster(raster)
            plots.fig_field(values, header["dims"], out / f"{name}.png",
                            log=log, title=name)
            made.append(f"{name}.png")
    print("rendered: " + (", ".join(made) if made else "nothing to render"))
    return 0


# ---------------------------------------------------------------------------

def _config_epilog():
    lines = ["configuration keys (key=value, defaults shown):"]
    for key, (typ, default, helptext) in SCHEMA.items():
        lines.append(f"  {key}={default!r}  ({typ.__name__}) {helptext}")
    return "\n".join(lines)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="schwarzlab",
        description="Two-level Schwarz preconditioner toolkit for "
                    "high-contrast pressure systems",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap for per-subdomain eigensolves")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "corpus", "export", "import-check", "condest",
                 "bench"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value file")
        p.add_argument("--set", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--out", default=None, help="shorthand for output.dir")
    pd = sub.add_parser("distance",
                        help="weighted subspace distance of two CBX bases")
    pd.add_argument("--sgb", required=True, help="record supplying the weight")
    pd.add_argument("--a", required=True)
    pd.add_argument("--b", required=True)
    pr = sub.add_parser("report", help="render figures for an artifact dir")
    pr.add_argument("--dir", required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "distance":
            return cmd_distance(args)
        if args.command == "report":
            return cmd_report(args)
        overrides = list(args.set)
        if args.out:
            overrides.append(f"output.dir={args.out}")
        cfg = load_config(args.config, overrides)
        handler = {"solve": cmd_solve, "corpus": cmd_corpus,
                   "export": cmd_export, "import-check": cmd_import_check,
                   "condest": cmd_condest, "bench": cmd_bench}[args.command]
        return handler(cfg, max(1, args.threads))
    except (ConfigError, FormatError, DimensionMismatchError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NotSPDError, RankDeficientError, IterationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except SchwarzLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
