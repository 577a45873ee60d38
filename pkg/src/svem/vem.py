"""Low-order virtual element operators, assembly and constrained solves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from .linalg import SPDSolver
from .mesh import Element, PolyMesh

# ---------------------------------------------------------------------------
# materials


def plane_stress_matrix(E: float, nu: float) -> np.ndarray:
    """Plane-stress material matrix for strain ordering (e11, e22, 2 e12)."""
    if not -1.0 < nu < 1.0:
        raise ValueError(f"plane-stress Poisson ratio must lie in (-1, 1), got {nu}")
    c = E / (1.0 - nu**2)
    return c * np.array([[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, 0.5 * (1.0 - nu)]])


def isotropic_3d_matrix(E: float, nu: float) -> np.ndarray:
    """3D isotropic material matrix for Voigt ordering (11, 22, 33, 12, 23, 31)."""
    if not -1.0 < nu < 0.5:
        raise ValueError(f"3D Poisson ratio must lie in (-1, 0.5), got {nu}")
    c = E / ((1.0 + nu) * (1.0 - 2.0 * nu))
    G = np.zeros((6, 6))
    G[:3, :3] = nu
    np.fill_diagonal(G[:3, :3], 1.0 - nu)
    G[3:, 3:] = np.eye(3) * (0.5 - nu)
    return c * G


def material_matrix(model: str, E: float, nu: float) -> np.ndarray:
    if model == "plane-stress":
        return plane_stress_matrix(E, nu)
    if model == "isotropic-3d":
        return isotropic_3d_matrix(E, nu)
    raise ValueError(f"unknown material model {model!r}; expected 'plane-stress' or 'isotropic-3d'")


# ---------------------------------------------------------------------------
# element operators


@dataclass(frozen=True, eq=False)
class ElementOperators:
    A: np.ndarray  # (n, d) projected gradients of the vertex basis functions
    X: np.ndarray  # (n, d) vertex coordinates minus the vertex average
    B: np.ndarray  # (q, n d)
    S: np.ndarray  # (n d, n d)
    measure: float


def projector_gradients(e: Element) -> np.ndarray:
    """Constant gradients of the projected vertex basis functions, shape ``(n, d)``.

    Computed as the boundary integral of the piecewise-linear vertex trace
    times the outward normal, divided by the element measure.
    """
    P = e.coords
    n = len(P)
    if e.measure <= 0:
        raise ValueError("degenerate element")
    if e.dim == 2:
        d = np.roll(P, -1, axis=0) - P
        ln = np.column_stack([d[:, 1], -d[:, 0]])  # length times outward normal, edge i -> i+1
        return (np.roll(ln, 1, axis=0) + ln) / (2.0 * e.measure)

    A = np.zeros((n, 3))
    for face in e.faces:
        Q = P[face]
        nf = len(face)
        c = Q.mean(axis=0)
        R = Q - c
        tri = 0.5 * np.cross(R, np.roll(R, -1, axis=0))  # vector area of (c, Q_j, Q_j+1)
        # linear trace on each fan triangle: phi_i(c) = 1/nf, 1 at its own vertex
        share = tri.sum(axis=0) / (3.0 * nf)
        A[face] += share + (tri + np.roll(tri, 1, axis=0)) / 3.0
    return A / e.measure


def centered_coords(e: Element) -> np.ndarray:
    return e.coords - e.coords.mean(axis=0)


def build_B(e: Element, A: np.ndarray) -> np.ndarray:
    """Strain-displacement matrix of the projected field."""
    n, d = A.shape
    if d == 2:
        B = np.zeros((3, 2 * n))
        B[0, 0::2] = A[:, 0]
        B[1, 1::2] = A[:, 1]
        B[2, 0::2] = A[:, 1]
        B[2, 1::2] = A[:, 0]
        return B
    B = np.zeros((6, 3 * n))
    B[0, 0::3] = A[:, 0]
    B[1, 1::3] = A[:, 1]
    B[2, 2::3] = A[:, 2]
    B[3, 0::3] = A[:, 1]
    B[3, 1::3] = A[:, 0]
    B[4, 1::3] = A[:, 2]
    B[4, 2::3] = A[:, 1]
    B[5, 0::3] = A[:, 2]
    B[5, 2::3] = A[:, 0]
    return B


def projection_weights(A: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Scalar weights h_ij = X_i . A_j + 1/n."""
    return X @ A.T + 1.0 / len(A)


def build_S(e: Element, A: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Nodal projection matrix: block (i, j) equals h_ij times the d x d identity."""
    return np.kron(projection_weights(A, X), np.eye(A.shape[1]))


def element_operators(e: Element) -> ElementOperators:
    A = projector_gradients(e)
    X = centered_coords(e)
    return ElementOperators(A=A, X=X, B=build_B(e, A), S=build_S(e, A, X), measure=e.measure)


def _check_spd(G: np.ndarray) -> None:
    if not np.allclose(G, G.T, rtol=0, atol=1e-14 * max(1.0, np.abs(G).max())):
        raise ValueError("material matrix is not symmetric")
    if np.linalg.eigvalsh(G).min() <= 0:
        raise ValueError("material matrix is not positive definite")


def consistency_matrix(e: Element, G: np.ndarray, ops: ElementOperators | None = None) -> np.ndarray:
    """k_C = a B^T G B for an SPD material matrix ``G``."""
    G = np.asarray(G, dtype=float)
    _check_spd(G)
    ops = element_operators(e) if ops is None else ops
    return _consistency(ops, G)


def _consistency(ops: ElementOperators, G: np.ndarray) -> np.ndarray:
    # no SPD check: the separated components G_i need not be definite
    return ops.measure * ops.B.T @ G @ ops.B


def stability_matrix(e: Element, gamma: float, ops: ElementOperators | None = None) -> np.ndarray:
    """k_S = gamma (I - S)^T (I - S)."""
    if not np.isfinite(gamma) or gamma < 0:
        raise ValueError(f"stabilization coefficient must be non-negative, got {gamma}")
    ops = element_operators(e) if ops is None else ops
    return gamma * _unit_stability(ops)


def _unit_stability(ops: ElementOperators) -> np.ndarray:
    R = np.eye(len(ops.S)) - ops.S
    return R.T @ R


def stiffness_matrix(e: Element, G: np.ndarray, ops: ElementOperators | None = None) -> np.ndarray:
    """Element stiffness k_C + k_S with gamma = Tr(G)/2. ``G`` need not be definite."""
    ops = element_operators(e) if ops is None else ops
    G = np.asarray(G, dtype=float)
    return _consistency(ops, G) + 0.5 * np.trace(G) * _unit_stability(ops)


def element_force(e: Element, f_nodal=None, neumann=()) -> np.ndarray:
    """One-point nodal force vector.

    Args:
        e: element.
        f_nodal: body-force values at the element vertices, shape ``(n, d)`` or ``None``.
        neumann: iterable of ``(face, g_nodal)`` with ``g_nodal`` of shape
            ``(n_face_vertices, d)`` ordered as the face loop.

    Returns:
        Force vector of length ``n d`` (vertex-major).
    """
    n, d = e.n_vertices, e.dim
    out = np.zeros((n, d))
    if f_nodal is not None:
        f = np.asarray(f_nodal, dtype=float)
        if f.shape != (n, d):
            raise ValueError(f"body force must have shape {(n, d)}, got {f.shape}")
        out += e.measure * f.sum(axis=0) / n**2
    for j, g in neumann:
        face = e.faces[j]
        g = np.asarray(g, dtype=float)
        if g.shape != (len(face), d):
            raise ValueError(f"traction on face {j} must have shape {(len(face), d)}, got {g.shape}")
        out[face] += e.face_measures[j] * g.sum(axis=0) / len(face) ** 2
    return out.reshape(-1)


# ---------------------------------------------------------------------------
# assembly


def element_dofs(e: Element, d: int) -> np.ndarray:
    return (e.vertices[:, None] * d + np.arange(d)).reshape(-1)


@dataclass(frozen=True, eq=False)
class Pattern:
    """Shared CSR sparsity pattern plus the scatter map from element entries.

    ``order`` sorts element entries by (slot, canonical element rank), where
    elements are ranked by their sorted global vertex ids. Summing in that
    order makes assembly independent of the element-list order.
    """

    shape: tuple[int, int]
    indptr: np.ndarray
    indices: np.ndarray
    rows: np.ndarray  # COO row of every element entry, element order
    cols: np.ndarray
    slot: np.ndarray  # position in ``indices`` of every element entry
    order: np.ndarray
    starts: np.ndarray  # segment starts of ``slot[order]``

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def matrix(self, data) -> sps.csr_matrix:
        return sps.csr_matrix((np.asarray(data, dtype=float), self.indices, self.indptr), shape=self.shape)


def build_pattern(mesh: PolyMesh) -> Pattern:
    d = mesh.dim
    n = mesh.n_dofs
    keys = [tuple(sorted(el.vertices.tolist())) for el in mesh.elements]
    rank = np.empty(len(keys), dtype=np.int64)
    rank[sorted(range(len(keys)), key=keys.__getitem__)] = np.arange(len(keys))
    rows, cols, owner = [], [], []
    for k, el in enumerate(mesh.elements):
        dofs = element_dofs(el, d)
        rows.append(np.repeat(dofs, len(dofs)))
        cols.append(np.tile(dofs, len(dofs)))
        owner.append(np.full(len(dofs) ** 2, rank[k]))
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    key = r * n + c
    uniq, slot = np.unique(key, return_inverse=True)
    slot = slot.reshape(-1)
    ur, uc = np.divmod(uniq, n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, ur + 1, 1)
    indptr = np.cumsum(indptr)
    order = np.lexsort((np.concatenate(owner), slot))
    s = slot[order]
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    return Pattern(
        shape=(n, n), indptr=indptr, indices=uc.astype(np.int64), rows=r, cols=c, slot=slot, order=order, starts=starts
    )


def scatter(pattern: Pattern, values: np.ndarray) -> np.ndarray:
    """Sum element entries (element order) into pattern slots in canonical order."""
    return np.add.reduceat(values[pattern.order], pattern.starts)


def assemble(mesh: PolyMesh, provider, pattern: Pattern | None = None) -> sps.csr_matrix:
    """Assemble ``provider(index, element) -> (n d, n d)`` matrices into a CSR matrix."""
    pattern = build_pattern(mesh) if pattern is None else pattern
    return pattern.matrix(assemble_values(mesh, provider, pattern))


def assemble_values(mesh: PolyMesh, provider, pattern: Pattern) -> np.ndarray:
    d = mesh.dim
    blocks = []
    for k, el in enumerate(mesh.elements):
        ke = np.asarray(provider(k, el), dtype=float)
        nd = el.n_vertices * d
        if ke.shape != (nd, nd):
            raise ValueError(f"element {k}: matrix shape {ke.shape}, expected {(nd, nd)}")
        blocks.append(ke.reshape(-1))
    return scatter(pattern, np.concatenate(blocks))


def assemble_force(mesh: PolyMesh, provider) -> np.ndarray:
    """Assemble ``provider(index, element) -> (n d,)`` vectors into a global vector."""
    d = mesh.dim
    idx, vals = [], []
    for k, el in enumerate(mesh.elements):
        fe = np.asarray(provider(k, el), dtype=float).reshape(-1)
        dofs = element_dofs(el, d)
        if fe.shape != dofs.shape:
            raise ValueError(f"element {k}: force length {fe.size}, expected {dofs.size}")
        idx.append(dofs)
        vals.append(fe)
    idx = np.concatenate(idx)
    vals = np.concatenate(vals)
    order = np.lexsort((vals, idx))
    out = np.zeros(mesh.n_dofs)
    i, v = idx[order], vals[order]
    starts = np.flatnonzero(np.r_[True, i[1:] != i[:-1]])
    out[i[starts]] = np.add.reduceat(v, starts)
    return out


def assemble_stiffness(mesh: PolyMesh, G_elem) -> sps.csr_matrix:
    """Deterministic stiffness from one material matrix per element (or one shared)."""
    G_elem = np.asarray(G_elem, dtype=float)
    if G_elem.ndim == 2:
        G_elem = np.broadcast_to(G_elem, (mesh.n_elements,) + G_elem.shape)
    return assemble(mesh, lambda k, el: stiffness_matrix(el, G_elem[k]))


# ---------------------------------------------------------------------------
# constraints and solve


@dataclass(frozen=True, eq=False)
class ConstrainedSystem:
    K: sps.csr_matrix
    F: np.ndarray
    fixed: np.ndarray
    free: np.ndarray
    values: np.ndarray  # prescribed values at ``fixed``
    K_free: sps.csr_matrix
    F_free: np.ndarray


def apply_dirichlet(K, F, fixed, values=None) -> ConstrainedSystem:
    """Eliminate fixed DoFs.

    ``values`` (prescribed displacements) default to zero. Nonzero values are
    lifted to the right-hand side; they exist for patch tests and the
    stochastic pipeline never passes them.
    """
    K = sps.csr_matrix(K)
    F = np.asarray(F, dtype=float)
    n = K.shape[0]
    fixed = np.unique(np.asarray(fixed, dtype=np.int64))
    if fixed.size and (fixed[0] < 0 or fixed[-1] >= n):
        raise IndexError("fixed DoF index out of range")
    vals = np.zeros(len(fixed)) if values is None else np.asarray(values, dtype=float)
    if vals.shape != fixed.shape:
        raise ValueError("values must match the fixed DoFs")
    free = np.setdiff1d(np.arange(n), fixed)
    K_free = K[free][:, free].tocsr()
    F_free = F[free] - K[free][:, fixed] @ vals if fixed.size else F[free].copy()
    return ConstrainedSystem(K=K, F=F, fixed=fixed, free=free, values=vals, K_free=K_free, F_free=F_free)


def solve_spd(system: ConstrainedSystem, rtol: float = 1e-10, **solver_opts) -> np.ndarray:
    """Solve the reduced SPD system and return the full-length solution."""
    u = np.zeros(system.K.shape[0])
    u[system.fixed] = system.values
    if system.free.size == 0:
        return u
    solver = SPDSolver(system.K_free, **solver_opts)
    x = solver.solve(system.F_free)
    r = system.K_free @ x - system.F_free
    scale = max(np.linalg.norm(system.F_free), np.finfo(float).tiny)
    if np.linalg.norm(r) > rtol * scale and np.linalg.norm(system.F_free) > 0:
        raise RuntimeError(f"solve residual {np.linalg.norm(r) / scale:.3e} exceeds {rtol:g}")
    u[system.free] = x
    return u
