"""Separated stochastic system K(theta) = sum_i xi_i K_i, F(theta) = sum_j eta_j F_j."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from .linalg import SymbolicCholesky
from .mesh import PolyMesh
from .random_field import GAUSSIAN, SampleBatch
from .vem import Pattern, assemble_force, assemble_values, build_pattern, element_force, element_operators

# ---------------------------------------------------------------------------
# stiffness


def assemble_separated(mesh: PolyMesh, G_fields, pattern: Pattern | None = None) -> tuple[Pattern, np.ndarray]:
    """Assemble K_i for every separated material component on one shared pattern.

    Args:
        mesh: the mesh.
        G_fields: array (m + 1, n_e, q, q) of per-element material matrices.
        pattern: optional precomputed pattern.

    Returns:
        ``(pattern, data)`` with ``data`` of shape (m + 1, nnz); row i holds the
        CSR values of K_i.
    """
    G = np.asarray(G_fields, dtype=float)
    if G.ndim != 4 or G.shape[1] != mesh.n_elements:
        raise ValueError(f"G_fields must have shape (m+1, {mesh.n_elements}, q, q), got {G.shape}")
    if not np.all(np.isfinite(G)):
        bad = np.unique(np.argwhere(~np.isfinite(G))[:, 1])
        raise ValueError(f"non-finite material entries in elements {bad[:10].tolist()}")
    pattern = build_pattern(mesh) if pattern is None else pattern
    ops = [element_operators(el) for el in mesh.elements]
    unit_stab = [(np.eye(len(o.S)) - o.S).T @ (np.eye(len(o.S)) - o.S) for o in ops]
    data = np.empty((G.shape[0], pattern.nnz))
    for i in range(G.shape[0]):
        Gi = G[i]

        def provider(k, el, Gi=Gi):
            o = ops[k]
            return o.measure * o.B.T @ Gi[k] @ o.B + 0.5 * np.trace(Gi[k]) * unit_stab[k]

        data[i] = assemble_values(mesh, provider, pattern)
    return pattern, data


# ---------------------------------------------------------------------------
# loads


@dataclass(frozen=True)
class LoadSpec:
    """Affine load: ``value + sum_r eta_r * random[r].coef``.

    ``kind`` is ``"point"`` (force at every vertex of a Dirichlet-style vertex
    set), ``"body"`` (uniform body force over all elements) or ``"traction"``
    (uniform traction over a Neumann face set).
    """

    kind: str
    value: tuple[float, ...]
    set: str | None = None
    random: tuple[tuple[tuple[float, ...], str], ...] = ()


@dataclass(frozen=True, eq=False)
class ForceExpansion:
    columns: np.ndarray  # (1 + q, n): F0 then one column per random variable
    distributions: tuple[str, ...]  # q tags


def _load_vector(mesh: PolyMesh, kind: str, vec, set_name) -> np.ndarray:
    d = mesh.dim
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (d,):
        raise ValueError(f"load vector must have {d} components, got {vec.tolist()}")
    if kind == "point":
        if set_name is None:
            raise ValueError("point load needs a vertex set")
        F = np.zeros((mesh.n_vertices, d))
        F[mesh.dirichlet(set_name)] += vec
        return F.reshape(-1)
    if kind == "body":
        return assemble_force(mesh, lambda k, el: element_force(el, np.tile(vec, (el.n_vertices, 1))))
    if kind == "traction":
        if set_name is None:
            raise ValueError("traction needs a face set")
        faces: dict[int, list[int]] = {}
        for e, f in mesh.neumann(set_name):
            faces.setdefault(int(e), []).append(int(f))

        def provider(k, el):
            nm = [(j, np.tile(vec, (len(el.faces[j]), 1))) for j in faces.get(k, [])]
            return element_force(el, None, nm)

        return assemble_force(mesh, provider)
    raise ValueError(f"unknown load kind {kind!r}; expected point, body or traction")


def force_expansion(mesh: PolyMesh, loads) -> ForceExpansion:
    """Build the affine force columns. Every random term gets its own variable."""
    F0 = np.zeros(mesh.n_dofs)
    cols, dists = [], []
    for spec in loads:
        F0 += _load_vector(mesh, spec.kind, spec.value, spec.set)
        for coef, dist in spec.random:
            cols.append(_load_vector(mesh, spec.kind, coef, spec.set))
            dists.append(dist)
    return ForceExpansion(np.vstack([F0] + cols), tuple(dists))


# ---------------------------------------------------------------------------
# system


@dataclass(frozen=True, eq=False)
class SeparatedSystem:
    """Immutable separated system with full and free-DoF views.

    ``k_columns[i]`` is the sample column multiplying ``K_i`` and
    ``f_columns[j]`` the one multiplying ``F_j``; column 0 of every sample
    batch is the constant 1.
    """

    mesh: PolyMesh
    pattern: Pattern
    Kdata: np.ndarray  # (m + 1, nnz)
    F: np.ndarray  # (p, n)
    fixed: np.ndarray
    k_columns: np.ndarray
    f_columns: np.ndarray
    input_distributions: tuple[str, ...]  # per random input column 1..M
    free: np.ndarray = field(init=False)
    K_free: tuple = field(init=False)
    F_free: np.ndarray = field(init=False)
    _free_data: np.ndarray = field(init=False)
    _lower_idx: np.ndarray = field(init=False)
    _lower_data: np.ndarray = field(init=False)
    _free_pattern: sps.csc_matrix = field(init=False)

    def __post_init__(self):
        n = self.pattern.shape[0]
        free = np.setdiff1d(np.arange(n), self.fixed)
        object.__setattr__(self, "free", free)
        mats = []
        for i in range(self.Kdata.shape[0]):
            K = self.pattern.matrix(self.Kdata[i])
            mats.append(K[free][:, free].tocsr())
        object.__setattr__(self, "K_free", tuple(mats))
        object.__setattr__(self, "F_free", np.ascontiguousarray(self.F[:, free]))
        # CSC values of every K_i on the free pattern; the lower triangle feeds refactorization
        ones = self.pattern.matrix(np.ones(self.pattern.nnz))[free][:, free].tocsc()
        ones.sort_indices()
        chol = SymbolicCholesky(ones, backend="splu")
        data = np.vstack([chol.csc_data(K) for K in mats]) if mats else np.zeros((0, 0))
        object.__setattr__(self, "_free_data", data)
        object.__setattr__(self, "_lower_idx", chol.lower)
        object.__setattr__(self, "_lower_data", np.ascontiguousarray(data[:, chol.lower]) if mats else data)
        object.__setattr__(self, "_free_pattern", ones)

    @property
    def n(self) -> int:
        return self.pattern.shape[0]

    @property
    def n_free(self) -> int:
        return len(self.free)

    @property
    def m(self) -> int:
        return self.Kdata.shape[0] - 1

    @property
    def n_inputs(self) -> int:
        return len(self.input_distributions)

    def K(self, i: int) -> sps.csr_matrix:
        return self.pattern.matrix(self.Kdata[i])

    def xi(self, rows) -> np.ndarray:
        """Stiffness weights (n_s, m + 1) from sample rows."""
        return np.atleast_2d(rows)[:, self.k_columns]

    def eta(self, rows) -> np.ndarray:
        """Force weights (n_s, p) from sample rows."""
        return np.atleast_2d(rows)[:, self.f_columns]

    def _row(self, sample, batch: SampleBatch | None):
        if np.isscalar(sample) or np.ndim(sample) == 0:
            if batch is None:
                raise ValueError("a sample index needs a SampleBatch")
            return batch.row(int(sample))
        row = np.asarray(sample, dtype=float)
        if row.shape != (1 + self.n_inputs,):
            raise ValueError(f"sample row must have length {1 + self.n_inputs}")
        return row

    def K_at(self, sample, batch: SampleBatch | None = None) -> sps.csr_matrix:
        """Full stiffness at a sample row (or accepted sample index of ``batch``)."""
        row = self._row(sample, batch)
        return self.pattern.matrix(row[self.k_columns] @ self.Kdata)

    def F_at(self, sample, batch: SampleBatch | None = None) -> np.ndarray:
        row = self._row(sample, batch)
        return row[self.f_columns] @ self.F

    def free_values(self, xi) -> np.ndarray:
        """CSC values of the free-DoF K(theta) for stiffness weights ``xi`` ((m + 1,) or (n_s, m + 1))."""
        return xi @ self._free_data

    def free_matrix(self, values) -> sps.csc_matrix:
        p = self._free_pattern
        return sps.csc_matrix((values, p.indices, p.indptr), shape=p.shape)

    def lower_values(self, xi_row) -> np.ndarray:
        """Free-DoF lower-triangle values of K(theta) for stiffness weights ``xi_row``."""
        return xi_row @ self._lower_data

    def lower_of(self, values) -> np.ndarray:
        return values[..., self._lower_idx]

    def factorizer(self, backend: str = "auto") -> SymbolicCholesky:
        """Cholesky object with the symbolic analysis of the free pattern."""
        return SymbolicCholesky(self._free_pattern, backend=backend)

    def expand(self, u_free) -> np.ndarray:
        """Insert zeros at fixed DoFs. Works on (n_free,) or (..., n_free)."""
        u_free = np.asarray(u_free)
        out = np.zeros(u_free.shape[:-1] + (self.n,))
        out[..., self.free] = u_free
        return out


def build_system(
    mesh: PolyMesh,
    G_fields,
    forces: ForceExpansion,
    fixed_dofs,
    field_distribution: str = GAUSSIAN,
) -> SeparatedSystem:
    """Assemble the separated system for sample columns [1, xi_1..xi_m, eta_1..eta_q]."""
    pattern, data = assemble_separated(mesh, G_fields)
    m = data.shape[0] - 1
    q = len(forces.distributions)
    fixed = np.unique(np.asarray(fixed_dofs, dtype=np.int64))
    return SeparatedSystem(
        mesh=mesh,
        pattern=pattern,
        Kdata=data,
        F=forces.columns,
        fixed=fixed,
        k_columns=np.arange(m + 1),
        f_columns=np.r_[0, np.arange(m + 1, m + 1 + q)].astype(np.int64),
        input_distributions=(field_distribution,) * m + tuple(forces.distributions),
    )
