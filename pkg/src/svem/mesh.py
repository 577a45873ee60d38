"""Polygonal (2D) and polyhedral (3D) meshes.

Mesh file grammar (line oriented, ``#`` starts a comment, indices are 0-based)::

    <dim> <n_v> <n_e>
    v <x> <y> [<z>]                      # n_v lines
    e <i0> <i1> ... <ik>                 # 2D: one vertex loop per element
    e <n_faces>                          # 3D: element header ...
    f <i0> <i1> ... <ik>                 # ... followed by n_faces face loops
    set <name> dirichlet <v0> <v1> ...
    set <name> neumann (<e>,<f>) (<e>,<f>) ...

In 2D, local face ``f`` of an element is the edge from loop position ``f`` to
``f + 1``. Loops and faces with the wrong orientation are reversed at load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Base class for mesh errors."""


class MeshFormatError(MeshError):
    pass


class MeshTopologyError(MeshError):
    pass


class MeshOrientationError(MeshError):
    pass


@dataclass(frozen=True, eq=False)
class Element:
    """A single polygon or polyhedron with cached geometry.

    ``faces`` holds loops of *local* vertex positions (indices into
    ``vertices``). In 2D the faces are the edges of the vertex loop.
    """

    vertices: np.ndarray
    coords: np.ndarray
    faces: tuple[np.ndarray, ...]
    measure: float
    centroid: np.ndarray
    face_measures: np.ndarray
    face_normals: np.ndarray
    face_centroids: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def n_faces(self) -> int:
        return len(self.faces)


@dataclass(frozen=True, eq=False)
class PolyMesh:
    dim: int
    vertices: np.ndarray
    elements: tuple[Element, ...]
    dirichlet_sets: dict[str, np.ndarray] = field(default_factory=dict)
    neumann_sets: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_dofs(self) -> int:
        # one d-vector per vertex
        return self.n_vertices * self.dim

    def dofs_of(self, vertex_ids, components=None) -> np.ndarray:
        """Global DoF indices of the given vertices (vertex-major ordering)."""
        vertex_ids = np.asarray(vertex_ids, dtype=np.int64).reshape(-1)
        comps = np.arange(self.dim) if components is None else np.asarray(components, dtype=np.int64)
        return (vertex_ids[:, None] * self.dim + comps[None, :]).reshape(-1)

    def dirichlet(self, name: str) -> np.ndarray:
        try:
            return self.dirichlet_sets[name]
        except KeyError:
            raise KeyError(f"unknown dirichlet set {name!r}; available: {sorted(self.dirichlet_sets)}") from None

    def neumann(self, name: str) -> np.ndarray:
        try:
            return self.neumann_sets[name]
        except KeyError:
            raise KeyError(f"unknown neumann set {name!r}; available: {sorted(self.neumann_sets)}") from None

    def boundary_vertices(self) -> np.ndarray:
        """Vertices on faces that belong to exactly one element."""
        count: dict[tuple, int] = {}
        for el in self.elements:
            for face in el.faces:
                key = tuple(sorted(el.vertices[face].tolist()))
                count[key] = count.get(key, 0) + 1
        on_boundary = {v for key, c in count.items() if c == 1 for v in key}
        return np.array(sorted(on_boundary), dtype=np.int64)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


# ---------------------------------------------------------------------------
# geometry primitives


def _shoelace(P: np.ndarray) -> float:
    x, y = P[:, 0], P[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _polygon_centroid(P: np.ndarray, area: float) -> np.ndarray:
    x, y = P[:, 0], P[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    return np.array([np.sum((x + xn) * cross), np.sum((y + yn) * cross)]) / (6.0 * area)


def fan_triangles(P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fan triangulation of a (possibly non-planar) 3D loop about its vertex average.

    Returns the fan centre and the vector areas of the triangles
    ``(c, P[j], P[j+1])``, shape ``(k, 3)``.
    """
    c = P.mean(axis=0)
    R = P - c
    return c, 0.5 * np.cross(R, np.roll(R, -1, axis=0))


def _face_geometry_3d(P: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    c, tri = fan_triangles(P)
    vec = tri.sum(axis=0)
    b = float(np.linalg.norm(vec))
    if b == 0.0:
        return 0.0, np.zeros(3), c
    n = vec / b
    w = tri @ n
    tri_centroids = (c + P + np.roll(P, -1, axis=0)) / 3.0
    centroid = (w[:, None] * tri_centroids).sum(axis=0) / w.sum() if w.sum() != 0 else c
    return b, n, centroid


def _signed_volume(coords: np.ndarray, faces) -> float:
    vol = 0.0
    for f in faces:
        P = coords[f]
        c, tri = fan_triangles(P)
        tri_centroids = (c + P + np.roll(P, -1, axis=0)) / 3.0
        vol += float(np.sum(tri_centroids * tri))
    return vol / 3.0


def _polyhedron_centroid(coords: np.ndarray, faces, volume: float) -> np.ndarray:
    ref = coords.mean(axis=0)
    acc = np.zeros(3)
    for f in faces:
        P = coords[f]
        c, tri = fan_triangles(P)
        for j in range(len(f)):
            a, b = P[j], P[(j + 1) % len(f)]
            tet_vol = float(np.dot(c - ref, np.cross(a - ref, b - ref))) / 6.0
            acc += tet_vol * (ref + c + a + b) / 4.0
    return acc / volume


def element_measure(e: Element, dim: int | None = None) -> float:
    """Area (2D, shoelace) or volume (3D, divergence theorem on the fan triangulation)."""
    dim = e.dim if dim is None else dim
    if dim == 2:
        return _shoelace(e.coords)
    return _signed_volume(e.coords, e.faces)


def face_geometry(e: Element, j: int) -> tuple[float, np.ndarray, np.ndarray]:
    """Measure, unit outward normal and centroid of local face ``j``."""
    if not 0 <= j < e.n_faces:
        raise IndexError(f"face index {j} out of range for element with {e.n_faces} faces")
    return float(e.face_measures[j]), e.face_normals[j].copy(), e.face_centroids[j].copy()


def _edge_geometry(P: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    d = np.roll(P, -1, axis=0) - P
    lengths = np.hypot(d[:, 0], d[:, 1])
    normals = np.column_stack([d[:, 1], -d[:, 0]]) / lengths[:, None]
    mids = P + 0.5 * d
    return lengths, normals, mids


# ---------------------------------------------------------------------------
# element construction and validation


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def make_element_2d(vertex_ids, all_coords: np.ndarray) -> Element:
    ids = np.asarray(vertex_ids, dtype=np.int64)
    if len(ids) < 3:
        raise MeshTopologyError(f"2D element needs at least 3 vertices, got {len(ids)}")
    if len(np.unique(ids)) != len(ids):
        raise MeshTopologyError(f"repeated vertex in element loop {ids.tolist()}")
    P = all_coords[ids]
    n = len(ids)
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(P[i], P[(i + 1) % n], P[j], P[(j + 1) % n]):
                raise MeshTopologyError(f"self-intersecting element loop {ids.tolist()}")
    area = _shoelace(P)
    if area < 0:
        ids = ids[::-1].copy()
        P = all_coords[ids]
        area = -area
    scale = float(np.max(np.ptp(P, axis=0)))
    if area <= 1e-14 * scale**2:
        raise MeshOrientationError(f"degenerate element {ids.tolist()} (area {area:g})")
    lengths, normals, mids = _edge_geometry(P)
    if np.any(lengths == 0):
        raise MeshTopologyError(f"zero-length edge in element {ids.tolist()}")
    faces = tuple(np.array([i, (i + 1) % n]) for i in range(n))
    return Element(
        vertices=ids,
        coords=P,
        faces=faces,
        measure=area,
        centroid=_polygon_centroid(P, area),
        face_measures=lengths,
        face_normals=normals,
        face_centroids=mids,
    )


def _orient_faces_consistently(faces: list[list[int]]) -> list[list[int]]:
    """Flip faces so every interior edge is traversed once in each direction."""
    edge_faces: dict[tuple[int, int], list[int]] = {}
    for fi, f in enumerate(faces):
        for a, b in zip(f, f[1:] + f[:1]):
            edge_faces.setdefault((min(a, b), max(a, b)), []).append(fi)
    for key, owners in edge_faces.items():
        if len(owners) != 2:
            raise MeshTopologyError(f"face surface is not closed: edge {key} used by {len(owners)} faces")

    def directed(f):
        return set(zip(f, f[1:] + f[:1]))

    faces = [list(f) for f in faces]
    done = [False] * len(faces)
    for start in range(len(faces)):
        if done[start]:
            continue
        done[start] = True
        stack = [start]
        while stack:
            fi = stack.pop()
            d_fi = directed(faces[fi])
            for a, b in d_fi:
                for gj in edge_faces[(min(a, b), max(a, b))]:
                    if gj == fi:
                        continue
                    same = (a, b) in directed(faces[gj])
                    if done[gj]:
                        if same:
                            raise MeshTopologyError("face surface is not orientable")
                        continue
                    if same:
                        faces[gj] = faces[gj][::-1]
                    done[gj] = True
                    stack.append(gj)
    return faces


def make_element_3d(face_loops, all_coords: np.ndarray) -> Element:
    loops = []
    for f in face_loops:
        f = [int(v) for v in f]
        if len(f) < 3:
            raise MeshTopologyError(f"face needs at least 3 vertices, got {f}")
        if len(set(f)) != len(f):
            raise MeshTopologyError(f"repeated vertex in face loop {f}")
        loops.append(f)
    if len(loops) < 4:
        raise MeshTopologyError(f"polyhedron needs at least 4 faces, got {len(loops)}")
    loops = _orient_faces_consistently(loops)
    ids = np.unique(np.concatenate([np.asarray(f) for f in loops]))
    local = {int(v): i for i, v in enumerate(ids)}
    P = all_coords[ids]
    faces = [np.array([local[v] for v in f], dtype=np.int64) for f in loops]
    vol = _signed_volume(P, faces)
    if vol < 0:
        faces = [f[::-1].copy() for f in faces]
        vol = -vol
    scale = float(np.max(np.ptp(P, axis=0)))
    if vol <= 1e-14 * scale**3:
        raise MeshOrientationError(f"degenerate or inverted polyhedron (volume {vol:g})")
    geo = [_face_geometry_3d(P[f]) for f in faces]
    b = np.array([g[0] for g in geo])
    if np.any(b <= 0):
        raise MeshTopologyError("degenerate face with zero area")
    return Element(
        vertices=ids,
        coords=P,
        faces=tuple(faces),
        measure=vol,
        centroid=_polyhedron_centroid(P, faces, vol),
        face_measures=b,
        face_normals=np.array([g[1] for g in geo]),
        face_centroids=np.array([g[2] for g in geo]),
    )


def build_mesh(vertices, elements, dirichlet_sets=None, neumann_sets=None) -> PolyMesh:
    """Build a validated mesh.

    ``elements`` holds vertex loops (2D) or lists of face loops (3D), with
    global vertex indices.
    """
    V = np.asarray(vertices, dtype=float)
    if V.ndim != 2 or V.shape[1] not in (2, 3):
        raise MeshFormatError(f"vertices must have shape (n, 2) or (n, 3), got {V.shape}")
    dim = V.shape[1]
    n_v = len(V)
    built = []
    for k, spec in enumerate(elements):
        flat = np.concatenate([np.asarray(f, dtype=np.int64).ravel() for f in spec]) if dim == 3 else np.asarray(spec)
        if flat.size and (flat.min() < 0 or flat.max() >= n_v):
            raise MeshTopologyError(f"element {k} references a vertex outside 0..{n_v - 1}")
        try:
            built.append(make_element_2d(spec, V) if dim == 2 else make_element_3d(spec, V))
        except MeshError as exc:
            raise type(exc)(f"element {k}: {exc}") from None
    dsets = {}
    for name, ids in (dirichlet_sets or {}).items():
        ids = np.asarray(sorted(set(int(i) for i in ids)), dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= n_v):
            raise MeshTopologyError(f"dirichlet set {name!r} references a vertex outside 0..{n_v - 1}")
        dsets[name] = ids
    nsets = {}
    for name, pairs in (neumann_sets or {}).items():
        arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        for e, f in arr:
            if not (0 <= e < len(built)) or not (0 <= f < built[e].n_faces):
                raise MeshTopologyError(f"neumann set {name!r} references invalid face ({e},{f})")
        nsets[name] = arr
    return PolyMesh(dim=dim, vertices=V, elements=tuple(built), dirichlet_sets=dsets, neumann_sets=nsets)


# ---------------------------------------------------------------------------
# file I/O


def _parse_pair(tok: str, lineno: int) -> tuple[int, int]:
    t = tok.strip()
    if not (t.startswith("(") and t.endswith(")")):
        raise MeshFormatError(f"line {lineno}: expected '(e,f)', got {tok!r}")
    parts = t[1:-1].split(",")
    if len(parts) != 2:
        raise MeshFormatError(f"line {lineno}: expected '(e,f)', got {tok!r}")
    return int(parts[0]), int(parts[1])


def parse_mesh(text: str) -> PolyMesh:
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        s = raw.split("#", 1)[0].strip()
        if s:
            lines.append((lineno, s))
    if not lines:
        raise MeshFormatError("empty mesh file")
    try:
        dim, n_v, n_e = (int(t) for t in lines[0][1].split())
    except ValueError:
        raise MeshFormatError(f"line {lines[0][0]}: header must be 'dim n_v n_e'") from None
    if dim not in (2, 3):
        raise MeshFormatError(f"unsupported dimension {dim}")

    verts: list[list[float]] = []
    elems: list = []
    dsets: dict[str, list[int]] = {}
    nsets: dict[str, list[tuple[int, int]]] = {}
    i = 1
    try:
        while i < len(lines):
            lineno, s = lines[i]
            tok = s.split()
            kind = tok[0]
            if kind == "v":
                if len(tok) != dim + 1:
                    raise MeshFormatError(f"line {lineno}: vertex needs {dim} coordinates")
                verts.append([float(t) for t in tok[1:]])
                i += 1
            elif kind == "e" and dim == 2:
                elems.append([int(t) for t in tok[1:]])
                i += 1
            elif kind == "e":
                if len(tok) != 2:
                    raise MeshFormatError(f"line {lineno}: 3D element header is 'e <n_faces>'")
                nf = int(tok[1])
                faces = []
                for k in range(1, nf + 1):
                    if i + k >= len(lines):
                        raise MeshFormatError(f"line {lineno}: element truncated, expected {nf} faces")
                    fl, fs = lines[i + k]
                    ft = fs.split()
                    if ft[0] != "f":
                        raise MeshFormatError(f"line {fl}: expected face record 'f ...'")
                    faces.append([int(t) for t in ft[1:]])
                elems.append(faces)
                i += nf + 1
            elif kind == "set":
                if len(tok) < 3:
                    raise MeshFormatError(f"line {lineno}: set record is 'set <name> <kind> ...'")
                name, skind = tok[1], tok[2]
                if skind == "dirichlet":
                    dsets.setdefault(name, []).extend(int(t) for t in tok[3:])
                elif skind == "neumann":
                    rest = s.split(None, 3)[3] if len(tok) > 3 else ""
                    pairs = [p + ")" for p in rest.replace(" ", "").split(")") if p]
                    nsets.setdefault(name, []).extend(_parse_pair(p, lineno) for p in pairs)
                else:
                    raise MeshFormatError(f"line {lineno}: unknown set kind {skind!r}")
                i += 1
            elif kind == "f":
                raise MeshFormatError(f"line {lineno}: face record outside a 3D element")
            else:
                raise MeshFormatError(f"line {lineno}: unknown record {kind!r}")
    except ValueError as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshFormatError(f"line {lines[i][0]}: {exc}") from None
    if len(verts) != n_v:
        raise MeshFormatError(f"header declares {n_v} vertices, found {len(verts)}")
    if len(elems) != n_e:
        raise MeshFormatError(f"header declares {n_e} elements, found {len(elems)}")
    return build_mesh(np.array(verts, dtype=float).reshape(-1, dim), elems, dsets, nsets)


def load_mesh(path, fmt: str = "svem") -> PolyMesh:
    """Read a mesh file. Only the native text format (``fmt="svem"``) is supported."""
    if fmt != "svem":
        raise MeshFormatError(f"unsupported mesh format {fmt!r}")
    return parse_mesh(Path(path).read_text())


def _fmt(x: float) -> str:
    return repr(float(x))


def format_mesh(mesh: PolyMesh) -> str:
    out = [f"{mesh.dim} {mesh.n_vertices} {mesh.n_elements}"]
    out += ["v " + " ".join(_fmt(c) for c in p) for p in mesh.vertices]
    for el in mesh.elements:
        if mesh.dim == 2:
            out.append("e " + " ".join(str(v) for v in el.vertices))
        else:
            out.append(f"e {el.n_faces}")
            out += ["f " + " ".join(str(v) for v in el.vertices[f]) for f in el.faces]
    for name, ids in mesh.dirichlet_sets.items():
        out.append(f"set {name} dirichlet " + " ".join(str(v) for v in ids))
    for name, pairs in mesh.neumann_sets.items():
        out.append(f"set {name} neumann " + " ".join(f"({e},{f})" for e, f in pairs))
    return "\n".join(out) + "\n"


def write_mesh(mesh: PolyMesh, path) -> None:
    Path(path).write_text(format_mesh(mesh))


def summary(mesh: PolyMesh) -> str:
    return f"dim={mesh.dim} vertices={mesh.n_vertices} elements={mesh.n_elements}"


def total_measure(mesh: PolyMesh) -> float:
    return math.fsum(el.measure for el in mesh.elements)
