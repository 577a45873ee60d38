"""Command-line front end: ``svem mesh-info | kl | solve | compare``.

Every output is plain CSV or JSON written with full float precision and no
timestamps, so identical inputs and seed give byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import mc, pc, stats, win
from .config import ConfigError, RunConfig, build_kl, build_problem, load_config
from .mesh import MeshError, load_mesh, summary
from .random_field import save_kl

AXES = "xyz"


def _fmt(x) -> str:
    return repr(float(x))


def _write_table(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else _fmt(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def _read_table(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def _versions() -> dict:
    import scipy

    out = {"svem": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}
    try:
        import cvxopt

        out["cvxopt"] = cvxopt.__version__
    except ImportError:  # pragma: no cover
        pass
    return out


def _write_manifest(out: Path, command: str, cfg: RunConfig | None, extra: dict) -> None:
    doc = {"command": command, "versions": _versions()}
    if cfg is not None:
        echo = dict(cfg.raw)
        echo["samples"] = dict(echo.get("samples", {}) or {}, seed=cfg.seed, n=cfg.n_samples)
        doc["config"] = echo
    doc.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = replace(cfg, seed=int(args.seed))
    return cfg


def _out_dir(args, cfg: RunConfig | None) -> Path:
    if args.out:
        return Path(args.out)
    if cfg is not None and cfg.raw.get("output"):
        return Path(args.config).parent / cfg.raw["output"]
    raise ConfigError("no output directory: pass --out or set 'output' in the config")


# ---------------------------------------------------------------------------
# commands


def cmd_mesh_info(args) -> int:
    path = args.path
    if path is None:
        if args.config is None:
            raise ConfigError("mesh-info needs a mesh path or --config")
        path = load_config(args.config).mesh_path
    print(summary(load_mesh(path)))
    return 0


def cmd_kl(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    mesh = load_mesh(cfg.mesh_path)
    kl = build_kl(cfg, mesh)
    save_kl(kl, out / "kl")
    _write_manifest(out, "kl", cfg, {"kl": {"m": kl.m, "distribution": kl.distribution}})
    print(f"m={kl.m}")
    return 0


def _solve(cfg: RunConfig, problem, threads: int, timing: bool):
    system, batch = problem.system, problem.batch
    rows = batch.accepted
    dofs = problem.probe_dofs()
    opts = {k: v for k, v in cfg.solver.items() if k != "kind"}
    kind = cfg.solver_kind
    info: dict = {"kind": kind}
    if kind == "win":
        keys = ("eps_d", "eps_u", "max_inner", "max_terms", "init", "init_seed", "residual_tol")
        unknown = set(opts) - set(keys)
        if unknown:
            raise ConfigError(f"unknown WIN solver keys: {sorted(unknown)}")
        exp = win.run(system, batch, win.IterationConfig(**opts), timing=timing)
        st = stats.expansion_statistics(exp.D, exp.Lam)
        probe_vals = exp.Lam @ exp.D[dofs].T
        header = ["term", "eps_u", "inner_iterations", "eps_d"] + (["wall_time"] if timing else [])
        trace = [[r.term, float(r.eps_u), r.inner_iterations, float(r.eps_d)] + ([float(r.wall_time)] if timing else []) for r in exp.trace]
        info.update(terms=exp.k, stop_reason=exp.stop_reason)
    elif kind == "pc":
        unknown = set(opts) - {"order", "direct_limit", "rtol", "max_size", "statistics"}
        if unknown:
            raise ConfigError(f"unknown PC solver keys: {sorted(unknown)}")
        order = int(opts.get("order", 2))
        t0 = time.perf_counter()
        sol = pc.solve_pc(
            system,
            order=order,
            direct_limit=int(opts.get("direct_limit", 200_000)),
            rtol=float(opts.get("rtol", 1e-10)),
            max_size=int(opts.get("max_size", 20_000)),
        )
        elapsed = time.perf_counter() - t0
        mode = opts.get("statistics", "samples")
        if mode not in ("samples", "closed-form"):
            raise ConfigError("solver.statistics must be 'samples' or 'closed-form'")
        st = stats.pc_statistics(sol, rows if mode == "samples" else None)
        probe_vals = pc.eval_pc_samples(sol, rows)[:, dofs]
        header = ["order", "modes", "iterations", "residual"] + (["wall_time"] if timing else [])
        trace = [[order, sol.basis.size, sol.iterations, float(sol.residual)] + ([float(elapsed)] if timing else [])]
        info.update(order=order, modes=sol.basis.size)
    else:
        unknown = set(opts) - {"chunk", "rtol", "mode"}
        if unknown:
            raise ConfigError(f"unknown MCS solver keys: {sorted(unknown)}")
        t0 = time.perf_counter()
        sol = mc.run_mcs(
            system,
            batch,
            probes=dofs,
            mode=opts.get("mode", "streaming"),
            chunk=int(opts.get("chunk", 256)),
            threads=threads,
            rtol=float(opts.get("rtol", 1e-10)),
        )
        elapsed = time.perf_counter() - t0
        st = stats.FieldStatistics(mean=sol.mean, std=sol.std)
        probe_vals = sol.probe_samples
        header = ["solved", "failed"] + (["wall_time"] if timing else [])
        trace = [[sol.count, len(sol.failed)] + ([float(elapsed)] if timing else [])]
        info.update(solved=sol.count, failed=list(sol.failed))
    return st, np.asarray(probe_vals).reshape(-1, len(dofs)), header, trace, info


def cmd_solve(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    problem = build_problem(cfg)
    st, probe_vals, trace_header, trace, info = _solve(cfg, problem, args.threads, args.timing)
    mesh = problem.mesh
    d = mesh.dim
    mean, std = st.per_vertex(d)
    header = list(AXES[:d]) + [f"mean_{a}" for a in AXES[:d]] + [f"std_{a}" for a in AXES[:d]]
    rows = [list(map(float, mesh.vertices[v])) + list(map(float, mean[v])) + list(map(float, std[v])) for v in range(mesh.n_vertices)]
    _write_table(out / "stats.csv", header, rows)
    _write_table(out / "trace.csv", trace_header, trace)
    pdf_cfg = cfg.pdf
    degenerate = []
    for j, probe in enumerate(problem.probes):
        vals = probe_vals[:, j]
        _write_table(out / "probes" / f"{probe.name}.csv", ["sample", "value"], [[i, float(v)] for i, v in enumerate(vals)])
        est = stats.kde_pdf(vals, n_grid=int(pdf_cfg.get("n_grid", 512)), width=float(pdf_cfg.get("width", 5.0)))
        if est.degenerate:
            degenerate.append({"probe": probe.name, "value": est.value})
            continue
        _write_table(out / "pdf" / f"{probe.name}.csv", ["grid", "density"], [[float(g), float(p)] for g, p in zip(est.grid, est.density)])
    info.update(
        m=problem.kl.m,
        n_samples=problem.batch.n_samples,
        n_accepted=problem.batch.n_accepted,
        probes=[{"name": p.name, "vertex": p.vertex, "component": p.component} for p in problem.probes],
        degenerate_pdfs=degenerate,
    )
    _write_manifest(out, "solve", cfg, {"run": info})
    print(f"{cfg.solver_kind}: wrote {out}")
    return 0


def _load_run(path: Path):
    header, data = _read_table(path / "stats.csv")
    mean = data[:, [i for i, h in enumerate(header) if h.startswith("mean_")]].reshape(-1)
    std = data[:, [i for i, h in enumerate(header) if h.startswith("std_")]].reshape(-1)
    probes = {p.stem: _read_table(p)[1][:, 1] for p in sorted((path / "probes").glob("*.csv"))}
    return mean, std, probes


def cmd_compare(args) -> int:
    """Moment and density errors of run A against reference run B."""
    a_dir, b_dir = Path(args.run), Path(args.reference)
    for p in (a_dir, b_dir):
        if not (p / "stats.csv").exists():
            raise ConfigError(f"{p} is not a run directory (no stats.csv)")
    mean_a, std_a, probes_a = _load_run(a_dir)
    mean_b, std_b, probes_b = _load_run(b_dir)
    if mean_a.shape != mean_b.shape:
        raise ConfigError("runs have different numbers of DoFs")
    report = [["mean_rel_l2", stats.relative_l2(mean_a, mean_b)], ["std_rel_l2", stats.relative_l2(std_a, std_b)]]
    out = Path(args.out) if args.out else None
    for name in sorted(set(probes_a) & set(probes_b)):
        pb = stats.kde_pdf(probes_b[name])
        pa = stats.kde_pdf(probes_a[name], grid=pb.grid if not pb.degenerate else None)
        if pa.degenerate or pb.degenerate:
            report.append([f"pdf_max_abs_error_over_peak:{name}", float("nan")])
            continue
        grid, err = stats.pdf_abs_error(pa, pb)
        report.append([f"pdf_max_abs_error_over_peak:{name}", float(err.max() / pb.peak)])
        if out is not None:
            _write_table(out / "pdf_error" / f"{name}.csv", ["grid", "abs_error"], [[float(g), float(e)] for g, e in zip(grid, err)])
    for key, val in report:
        print(f"{key} {val:.6e}")
    if out is not None:
        _write_table(out / "compare.csv", ["quantity", "value"], report)
        _write_manifest(out, "compare", None, {"run": str(a_dir), "reference": str(b_dir)})
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svem", description="Stochastic virtual element solvers for linear elasticity.")
    parser.add_argument("--version", action="version", version=f"svem {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh-info", help="print a one-line mesh summary")
    p.add_argument("path", nargs="?", help="mesh file")
    p.add_argument("--config", help="take the mesh from a run configuration")
    p.set_defaults(func=cmd_mesh_info)

    for name, func, helptext in (("kl", cmd_kl, "compute and write the KL expansion"), ("solve", cmd_solve, "run the configured solver")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="run configuration (YAML or JSON)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override samples.seed")
        p.add_argument("--threads", type=int, default=1, help="worker cap for sample-parallel solvers")
        p.add_argument("--timing", action="store_true", help="add wall-clock columns to trace.csv")
        p.set_defaults(func=func)

    p = sub.add_parser("compare", help="compare a run against a reference run")
    p.add_argument("run", help="run directory")
    p.add_argument("reference", help="reference run directory")
    p.add_argument("--out", help="directory for compare.csv and PDF error curves")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        return int(args.func(args) or 0)
    except (ConfigError, MeshError, FileNotFoundError, KeyError, ValueError, ArithmeticError, MemoryError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
