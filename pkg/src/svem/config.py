"""Run configuration and the mesh -> field -> system pipeline.

A configuration is a YAML (or JSON) mapping::

    mesh: ex1_desk.mesh               # relative to the config file
    material: {model: plane-stress, E0: 100.0, nu: 0.3}
    field:
      kernel: separable-exponential-2d
      sigma: 10.0
      lengths: extent                 # or an explicit list
      length_scale: 1.0               # multiplies "extent"
      tol: 1.0e-3
      n_terms: null                   # override the truncation rule
      distribution: gaussian          # or uniform (on [0, 1])
      quadrature: collocation         # or nystrom
      element_value: vertex-mean      # or centroid-nearest-vertex
    dirichlet: [supports]             # vertex sets fixed in every direction
    loads:
      - {kind: point, set: load, value: [0, -1000],
         random: [{coef: [0, -100], distribution: gaussian}]}
    solver: {kind: win, eps_d: 1.0e-3, eps_u: 1.0e-6}
    samples: {n: 10000, seed: 1}
    probes: [{name: load_y, set: load, component: 1}]
    pdf: {n_grid: 512, width: 5.0}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .mesh import PolyMesh, load_mesh
from .random_field import (
    GAUSSIAN,
    KERNELS,
    CovarianceKernel,
    KLExpansion,
    SampleBatch,
    covariance_matrix,
    deterministic_field,
    draw_samples,
    kl_solve,
    lumped_vertex_weights,
    material_matrices,
)
from .svee import LoadSpec, SeparatedSystem, build_system, force_expansion

SOLVERS = ("pc", "win", "mcs")
_TOP_KEYS = {"mesh", "material", "field", "dirichlet", "loads", "solver", "samples", "probes", "pdf", "output", "dirichlet_values"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Probe:
    name: str
    vertex: int
    component: int


@dataclass
class RunConfig:
    mesh_path: Path
    model: str
    E0: float
    nu: float
    kernel: str
    sigma: float
    lengths: object
    length_scale: float
    tol: float
    n_terms: int | None
    distribution: str
    quadrature: str
    element_value: str
    dirichlet: list[str]
    loads: list[LoadSpec]
    solver: dict
    n_samples: int
    seed: int
    probes: list[dict]
    pdf: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def solver_kind(self) -> str:
        return self.solver["kind"]


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"missing required key '{where}.{key}'" if where else f"missing required key '{key}'")
    return d[key]


def _pos(x, name):
    try:
        x = float(x)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {x!r}") from None
    if not x > 0:
        raise ConfigError(f"{name} must be positive, got {x}")
    return x


def parse_config(data: dict, base_dir=".") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    base = Path(base_dir)
    mesh_path = Path(_need(data, "mesh", ""))
    if not mesh_path.is_absolute():
        mesh_path = base / mesh_path
    if not mesh_path.exists():
        raise ConfigError(f"mesh file not found: {mesh_path}")

    mat = _need(data, "material", "")
    model = _need(mat, "model", "material")
    if model not in ("plane-stress", "isotropic-3d"):
        raise ConfigError(f"material.model must be 'plane-stress' or 'isotropic-3d', got {model!r}")
    E0 = _pos(_need(mat, "E0", "material"), "material.E0")
    nu = float(_need(mat, "nu", "material"))

    fld = data.get("field", {}) or {}
    kernel = fld.get("kernel", "separable-exponential-2d" if model == "plane-stress" else "exponential-3d")
    if kernel not in KERNELS:
        raise ConfigError(f"field.kernel must be one of {KERNELS}, got {kernel!r}")
    sigma = float(fld.get("sigma", 0.0))
    if sigma < 0:
        raise ConfigError("field.sigma must be non-negative")
    lengths = fld.get("lengths", "extent")
    if lengths != "extent" and not (isinstance(lengths, (list, tuple)) and all(float(l) > 0 for l in lengths)):
        raise ConfigError("field.lengths must be 'extent' or a list of positive numbers")
    tol = float(fld.get("tol", 1e-3))
    if not 0 < tol < 1:
        raise ConfigError("field.tol must lie in (0, 1)")
    n_terms = fld.get("n_terms")
    distribution = fld.get("distribution", GAUSSIAN)
    if distribution not in ("gaussian", "uniform"):
        raise ConfigError("field.distribution must be 'gaussian' or 'uniform'")
    quadrature = fld.get("quadrature", "collocation")
    if quadrature not in ("collocation", "nystrom"):
        raise ConfigError("field.quadrature must be 'collocation' or 'nystrom'")

    dirichlet = data.get("dirichlet", [])
    if isinstance(dirichlet, str):
        dirichlet = [dirichlet]
    if data.get("dirichlet_values"):
        raise ConfigError("nonzero Dirichlet data is not supported; constrained DoFs are fixed at zero")

    loads = []
    for i, ld in enumerate(data.get("loads", []) or []):
        kind = _need(ld, "kind", f"loads[{i}]")
        rnd = []
        for r in ld.get("random", []) or []:
            dist = r.get("distribution", GAUSSIAN)
            if dist not in ("gaussian", "uniform"):
                raise ConfigError(f"loads[{i}].random distribution must be 'gaussian' or 'uniform'")
            rnd.append((tuple(float(c) for c in _need(r, "coef", f"loads[{i}].random")), dist))
        loads.append(LoadSpec(kind=kind, value=tuple(float(v) for v in _need(ld, "value", f"loads[{i}]")), set=ld.get("set"), random=tuple(rnd)))
    if not loads:
        raise ConfigError("at least one load is required")

    solver = dict(_need(data, "solver", ""))
    kind = solver.get("kind")
    if kind not in SOLVERS:
        raise ConfigError(f"solver.kind must be exactly one of {SOLVERS}, got {kind!r}")
    for key in ("eps_d", "eps_u"):
        if key in solver:
            _pos(solver[key], f"solver.{key}")

    smp = data.get("samples", {}) or {}
    n_samples = int(smp.get("n", 10_000))
    if n_samples <= 0:
        raise ConfigError("samples.n must be positive")
    seed = int(smp.get("seed", 0))
    if seed < 0 or seed >= 2**64:
        raise ConfigError("samples.seed must be an unsigned 64-bit integer")

    return RunConfig(
        mesh_path=mesh_path,
        model=model,
        E0=E0,
        nu=nu,
        kernel=kernel,
        sigma=sigma,
        lengths=lengths,
        length_scale=float(fld.get("length_scale", 1.0)),
        tol=tol,
        n_terms=None if n_terms is None else int(n_terms),
        distribution=distribution,
        quadrature=quadrature,
        element_value=fld.get("element_value", "vertex-mean"),
        dirichlet=list(dirichlet),
        loads=loads,
        solver=solver,
        n_samples=n_samples,
        seed=seed,
        probes=list(data.get("probes", []) or []),
        pdf=dict(data.get("pdf", {}) or {}),
        raw=data,
    )


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_text()
    try:
        data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from None
    return parse_config(data, p.parent)


# ---------------------------------------------------------------------------
# pipeline


@dataclass(frozen=True, eq=False)
class Problem:
    mesh: PolyMesh
    kl: KLExpansion
    system: SeparatedSystem
    batch: SampleBatch
    probes: tuple[Probe, ...]

    def probe_dofs(self) -> np.ndarray:
        return np.array([p.vertex * self.mesh.dim + p.component for p in self.probes], dtype=np.int64)


def correlation_lengths(cfg: RunConfig, mesh: PolyMesh) -> tuple[float, ...]:
    if cfg.lengths == "extent":
        lo, hi = mesh.bounding_box()
        return tuple(float(x) * cfg.length_scale for x in hi - lo)
    return tuple(float(x) * cfg.length_scale for x in cfg.lengths)


def build_kl(cfg: RunConfig, mesh: PolyMesh) -> KLExpansion:
    mean = np.full(mesh.n_vertices, cfg.E0)
    if cfg.sigma == 0:
        return deterministic_field(mean)
    kernel = CovarianceKernel(cfg.kernel, cfg.sigma, correlation_lengths(cfg, mesh))
    C = covariance_matrix(mesh.vertices, kernel)
    w = lumped_vertex_weights(mesh) if cfg.quadrature == "nystrom" else None
    return kl_solve(C, cfg.tol, mean=mean, weights=w, n_terms=cfg.n_terms, distribution=cfg.distribution)


def resolve_probes(cfg: RunConfig, mesh: PolyMesh) -> tuple[Probe, ...]:
    out = []
    for i, p in enumerate(cfg.probes):
        comp = p.get("component", 0)
        if isinstance(comp, str):
            comp = "xyz".index(comp)
        if not 0 <= int(comp) < mesh.dim:
            raise ConfigError(f"probes[{i}].component out of range")
        if "vertex" in p:
            vs = [int(p["vertex"])]
        elif "set" in p:
            try:
                vs = mesh.dirichlet(p["set"]).tolist()
            except KeyError as exc:
                raise ConfigError(f"probes[{i}]: {exc.args[0]}") from None
        else:
            raise ConfigError(f"probes[{i}] needs 'vertex' or 'set'")
        name = p.get("name", f"probe{i}")
        for j, v in enumerate(vs):
            if not 0 <= v < mesh.n_vertices:
                raise ConfigError(f"probes[{i}] vertex {v} out of range")
            out.append(Probe(name if len(vs) == 1 else f"{name}_{j}", int(v), int(comp)))
    return tuple(out)


def build_problem(cfg: RunConfig, kl: KLExpansion | None = None) -> Problem:
    mesh = load_mesh(cfg.mesh_path)
    if (mesh.dim == 2) != (cfg.model == "plane-stress"):
        raise ConfigError(f"material model {cfg.model!r} does not match a {mesh.dim}D mesh")
    kl = build_kl(cfg, mesh) if kl is None else kl
    G = material_matrices(mesh, kl, cfg.model, cfg.nu, cfg.element_value)
    try:
        forces = force_expansion(mesh, cfg.loads)
        fixed = np.concatenate([mesh.dofs_of(mesh.dirichlet(name)) for name in cfg.dirichlet]) if cfg.dirichlet else np.zeros(0, int)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    system = build_system(mesh, G, forces, fixed, kl.distribution)
    batch = draw_samples(kl, forces.distributions, cfg.n_samples, cfg.seed)
    return Problem(mesh=mesh, kl=kl, system=system, batch=batch, probes=resolve_probes(cfg, mesh))
