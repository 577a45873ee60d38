"""Generate the bundled Voronoi mesh fixtures.

Bounded Voronoi cells are obtained by mirroring the generators across every
face of the box, which makes the cells of the original generators tile the
box exactly. A few Lloyd iterations regularize the cells, and Voronoi
vertices closer than a small tolerance are merged.

Usage: python3 tools/make_fixtures.py [output_dir]
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, Voronoi, cKDTree

from svem.mesh import build_mesh, summary, write_mesh


def _mirror(points: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    out = [points]
    for ax in range(points.shape[1]):
        for wall in (lo[ax], hi[ax]):
            p = points.copy()
            p[:, ax] = 2 * wall - p[:, ax]
            out.append(p)
    return np.vstack(out)


def _merge(coords: np.ndarray, tol: float) -> np.ndarray:
    """Map each coordinate row to a representative index (union-find over close pairs)."""
    parent = np.arange(len(coords))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in cKDTree(coords).query_pairs(tol):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    return np.array([find(i) for i in range(len(coords))])


def _snap(coords: np.ndarray, lo: np.ndarray, hi: np.ndarray, tol: float) -> np.ndarray:
    c = coords.copy()
    for ax in range(c.shape[1]):
        c[np.abs(c[:, ax] - lo[ax]) < tol, ax] = lo[ax]
        c[np.abs(c[:, ax] - hi[ax]) < tol, ax] = hi[ax]
    return c


def _dedupe_loop(loop):
    out = []
    for v in loop:
        if not out or out[-1] != v:
            out.append(v)
    while len(out) > 1 and out[0] == out[-1]:
        out.pop()
    return out


def _compact(coords, cells_as_lists, dim):
    """Drop unused vertices and renumber."""
    used = sorted({v for cell in cells_as_lists for v in (cell if dim == 2 else [u for f in cell for u in f])})
    remap = {v: i for i, v in enumerate(used)}
    if dim == 2:
        cells = [[remap[v] for v in cell] for cell in cells_as_lists]
    else:
        cells = [[[remap[v] for v in f] for f in cell] for cell in cells_as_lists]
    return coords[used], cells


# ---------------------------------------------------------------------------
# 2D


def _cells_2d(points, lo, hi):
    n = len(points)
    vor = Voronoi(_mirror(points, lo, hi))
    cells = []
    for i in range(n):
        region = vor.regions[vor.point_region[i]]
        verts = np.asarray(region)
        P = vor.vertices[verts]
        c = P.mean(axis=0)
        order = np.argsort(np.arctan2(P[:, 1] - c[1], P[:, 0] - c[0]))
        cells.append(verts[order].tolist())
    return vor.vertices, cells


def _polygon_centroid(P):
    x, y = P[:, 0], P[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    a = cr.sum() / 2
    return np.array([((x + xn) * cr).sum(), ((y + yn) * cr).sum()]) / (6 * a)


def voronoi_2d(n_cells: int, size=(1.0, 1.0), seed: int = 0, lloyd: int = 20):
    rng = np.random.default_rng(seed)
    lo, hi = np.zeros(2), np.asarray(size, dtype=float)
    pts = lo + rng.random((n_cells, 2)) * (hi - lo)
    for _ in range(lloyd):
        V, cells = _cells_2d(pts, lo, hi)
        pts = np.array([_polygon_centroid(V[c]) for c in cells])
    V, cells = _cells_2d(pts, lo, hi)
    tol = 1e-6 * float(np.max(hi - lo))
    V = _snap(V, lo, hi, tol)
    rep = _merge(V, tol)
    cells = [_dedupe_loop([int(rep[v]) for v in c]) for c in cells]
    return _compact(V, cells, 2)


# ---------------------------------------------------------------------------
# 3D


def _cells_3d(points, lo, hi):
    n = len(points)
    vor = Voronoi(_mirror(points, lo, hi))
    faces = [[] for _ in range(n)]
    for (p, q), rv in zip(vor.ridge_points, vor.ridge_vertices):
        if p >= n and q >= n:
            continue
        rv = np.asarray(rv)
        if np.any(rv < 0):
            raise RuntimeError("unbounded ridge inside the box")
        P = vor.vertices[rv]
        c = P.mean(axis=0)
        nrm = vor.points[q] - vor.points[p]
        nrm /= np.linalg.norm(nrm)
        e1 = P[0] - c
        e1 -= nrm * (e1 @ nrm)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(nrm, e1)
        ang = np.arctan2((P - c) @ e2, (P - c) @ e1)
        loop = rv[np.argsort(ang)].tolist()
        for owner in (p, q):
            if owner < n:
                faces[owner].append(loop)
    return vor.vertices, faces


def voronoi_3d(n_cells: int, size=(1.0, 1.0, 1.0), seed: int = 0, lloyd: int = 10):
    rng = np.random.default_rng(seed)
    lo, hi = np.zeros(3), np.asarray(size, dtype=float)
    pts = lo + rng.random((n_cells, 3)) * (hi - lo)
    for _ in range(lloyd):
        vor = Voronoi(_mirror(pts, lo, hi))
        new = []
        for i in range(n_cells):
            hull = ConvexHull(vor.vertices[vor.regions[vor.point_region[i]]])
            P = hull.points
            ref = P[hull.vertices].mean(axis=0)
            vols, cents = [], []
            for s in hull.simplices:
                a, b, c = P[s]
                vols.append(abs(np.dot(a - ref, np.cross(b - ref, c - ref))) / 6)
                cents.append((ref + a + b + c) / 4)
            vols = np.array(vols)
            new.append((vols[:, None] * np.array(cents)).sum(0) / vols.sum())
        pts = np.array(new)
    V, cells = _cells_3d(pts, lo, hi)
    tol = 1e-6 * float(np.max(hi - lo))
    V = _snap(V, lo, hi, tol)
    rep = _merge(V, tol)
    out = []
    for cell in cells:
        fs = []
        for f in cell:
            loop = _dedupe_loop([int(rep[v]) for v in f])
            if len(set(loop)) >= 3:
                fs.append(loop)
        out.append(fs)
    return _compact(V, out, 3)


# ---------------------------------------------------------------------------
# boundary sets


def _near(x, value, scale):
    return np.abs(x - value) < 1e-9 * scale


def faces_on_plane(mesh, axis: int, value: float):
    scale = float(np.ptp(mesh.vertices, axis=0).max())
    pairs = []
    for k, el in enumerate(mesh.elements):
        for j, f in enumerate(el.faces):
            if np.all(_near(el.coords[f, axis], value, scale)):
                pairs.append((k, j))
    return pairs


def nearest_vertex(V, target, mask=None):
    d = np.linalg.norm(V - np.asarray(target), axis=1)
    if mask is not None:
        d[~mask] = np.inf
    return int(np.argmin(d))


def make_2d_beam(n_cells, size, seed):
    V, cells = voronoi_2d(n_cells, size=size, seed=seed)
    Lx, Ly = size
    scale = max(size)
    left = nearest_vertex(V, (0.0, 0.0))
    right = nearest_vertex(V, (Lx, 0.0))
    top = _near(V[:, 1], Ly, scale)
    load = nearest_vertex(V, (Lx / 2, Ly), mask=top)
    mesh = build_mesh(V, cells, {"supports": [left, right], "load": [load]})
    boundary = mesh.boundary_vertices()
    return build_mesh(V, cells, {"supports": [left, right], "load": [load], "boundary": boundary})


def make_2d_patch(n_cells, seed):
    V, cells = voronoi_2d(n_cells, seed=seed, lloyd=5)
    mesh = build_mesh(V, cells)
    return build_mesh(V, cells, {"boundary": mesh.boundary_vertices()})


def make_3d_box(n_cells, size, seed, lloyd=10):
    V, cells = voronoi_3d(n_cells, size=size, seed=seed, lloyd=lloyd)
    mesh = build_mesh(V, cells)
    scale = max(size)
    fixed = np.flatnonzero(_near(V[:, 0], 0.0, scale))
    return build_mesh(
        V,
        cells,
        {"fixed": fixed, "boundary": mesh.boundary_vertices()},
        {"loaded": faces_on_plane(mesh, 0, size[0])},
    )


def unit_square():
    return build_mesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2, 3]], {"boundary": [0, 1, 2, 3]}, {"bottom": [(0, 0)]})


def main(out_dir: str = "fixtures") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meshes = {
        "unit_square": unit_square(),
        "voronoi16": make_2d_patch(16, seed=3),
        "cube8": make_3d_box(8, (1.0, 1.0, 1.0), seed=5, lloyd=3),
        "ex1_desk": make_2d_beam(50, (3.0, 1.0), seed=11),
        "ex1_500": make_2d_beam(250, (3.0, 1.0), seed=12),
        "ex1_full": make_2d_beam(1000, (3.0, 1.0), seed=13),
        "ex2_desk": make_3d_box(100, (2.0, 1.0, 1.0), seed=17),
    }
    for name, mesh in meshes.items():
        write_mesh(mesh, out / f"{name}.mesh")
        print(f"{name}: {summary(mesh)}")


if __name__ == "__main__":
    main(*sys.argv[1:])
