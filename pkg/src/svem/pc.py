"""Polynomial chaos stochastic Galerkin solver."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from numpy.polynomial import hermite_e, legendre

from .linalg import SPDSolver
from .random_field import GAUSSIAN, UNIFORM
from .svee import SeparatedSystem

FAMILIES = {GAUSSIAN: "hermite", UNIFORM: "legendre", "hermite": "hermite", "legendre": "legendre"}


def basis_size(m: int, r: int) -> int:
    return math.comb(m + r, r)


def multi_indices(m: int, r: int) -> np.ndarray:
    """All multi-indices of total degree <= r, graded and lexicographically descending within a degree."""
    if m == 0:
        return np.zeros((1, 0), dtype=np.int64)

    def compositions(total, parts):
        if parts == 1:
            yield (total,)
            return
        for first in range(total, -1, -1):
            for rest in compositions(total - first, parts - 1):
                yield (first,) + rest

    out = [c for deg in range(r + 1) for c in compositions(deg, m)]
    return np.array(out, dtype=np.int64)


def univariate(family: str, x, order: int) -> np.ndarray:
    """Orthonormal univariate polynomials psi_0..psi_order evaluated at ``x``, shape (len(x), order + 1)."""
    x = np.asarray(x, dtype=float)
    n = np.arange(order + 1)
    if family == "hermite":
        return hermite_e.hermevander(x, order) / np.sqrt([math.factorial(k) for k in n])
    if family == "legendre":
        return legendre.legvander(2.0 * x - 1.0, order) * np.sqrt(2 * n + 1)
    raise ValueError(f"unknown polynomial family {family!r}")


def gauss_rule(family: str, n_points: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss rule for the family's probability measure (weights sum to 1)."""
    if family == "hermite":
        x, w = hermite_e.hermegauss(n_points)
        return x, w / w.sum()
    if family == "legendre":
        t, w = legendre.leggauss(n_points)
        return 0.5 * (t + 1.0), w / w.sum()
    raise ValueError(f"unknown polynomial family {family!r}")


@dataclass(frozen=True, eq=False)
class PCBasis:
    families: tuple[str, ...]
    order: int
    indices: np.ndarray  # (k, m)

    @property
    def m(self) -> int:
        return len(self.families)

    @property
    def size(self) -> int:
        return len(self.indices)

    def evaluate(self, xi) -> np.ndarray:
        """Basis values at variable samples ``xi`` of shape (n_s, m); returns (n_s, k)."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        if xi.shape[1] != self.m:
            raise ValueError(f"samples have {xi.shape[1]} variables, basis has {self.m}")
        out = np.ones((len(xi), self.size))
        for dim, fam in enumerate(self.families):
            if not self.indices[:, dim].any():
                continue
            table = univariate(fam, xi[:, dim], self.order)
            out *= table[:, self.indices[:, dim]]
        return out


def generate_basis(m: int, r: int, families="hermite", max_size: int = 20_000) -> PCBasis:
    """Total-degree orthonormal basis; the first function is the constant 1."""
    if m < 0 or r < 0:
        raise ValueError("m and r must be non-negative")
    fams = (families,) * m if isinstance(families, str) else tuple(families)
    if len(fams) != m:
        raise ValueError(f"{len(fams)} families given for {m} variables")
    fams = tuple(FAMILIES[f] for f in fams)
    k = basis_size(m, r)
    if k > max_size:
        raise ValueError(f"PC basis with m={m}, r={r} has {k} modes, above the cap of {max_size}")
    return PCBasis(families=fams, order=r, indices=multi_indices(m, r))


def _moment_tables(family: str, order: int) -> tuple[np.ndarray, np.ndarray]:
    """E[psi_a psi_b] and E[x psi_a psi_b] for a, b <= order by Gauss quadrature."""
    x, w = gauss_rule(family, order + 2)
    P = univariate(family, x, order)
    return (P.T * w) @ P, (P.T * (w * x)) @ P


def quadrature_gram(basis: PCBasis) -> np.ndarray:
    """Gram matrix of the basis from the tensor rule built on univariate tables."""
    G = np.ones((basis.size, basis.size))
    for dim, fam in enumerate(basis.families):
        g0, _ = _moment_tables(fam, basis.order)
        a = basis.indices[:, dim]
        G *= g0[np.ix_(a, a)]
    return G


def triple_products(basis: PCBasis, l: int) -> sps.csr_matrix:
    """Sparse (k, k) matrix with entries E[xi_l Gamma_i Gamma_j]; ``l = 0`` means xi_0 = 1."""
    if not 0 <= l <= basis.m:
        raise ValueError(f"variable index {l} outside 0..{basis.m}")
    idx = basis.indices
    k = basis.size
    if l == 0:
        return sps.identity(k, format="csr")
    dim = l - 1
    others = np.delete(idx, dim, axis=1)
    # group modes by their multi-index outside dimension ``dim``
    _, group = np.unique(others, axis=0, return_inverse=True)
    group = group.reshape(-1)
    _, t1 = _moment_tables(basis.families[dim], basis.order)
    rows, cols, vals = [], [], []
    order = np.argsort(group, kind="stable")
    bounds = np.flatnonzero(np.r_[True, group[order][1:] != group[order][:-1], True])
    for s, e in zip(bounds[:-1], bounds[1:]):
        members = order[s:e]
        a = idx[members, dim]
        block = t1[np.ix_(a, a)]
        rr, cc = np.meshgrid(members, members, indexing="ij")
        keep = np.abs(block) > 1e-14
        rows.append(rr[keep])
        cols.append(cc[keep])
        vals.append(block[keep])
    C = sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(k, k))
    return C


def first_moments(basis: PCBasis, l: int) -> np.ndarray:
    """E[xi_l Gamma_j] for every j (the row of ``triple_products`` for the constant mode)."""
    return np.asarray(triple_products(basis, l)[0].todense()).ravel()


# ---------------------------------------------------------------------------
# Galerkin system


@dataclass(frozen=True, eq=False)
class PCSystem:
    basis: PCBasis
    matrix: sps.csr_matrix  # (n_free k, n_free k), mode-major blocks
    rhs: np.ndarray
    n_free: int
    c: tuple  # triple-product matrices per stiffness component


@dataclass(frozen=True, eq=False)
class PCSolution:
    basis: PCBasis
    modes: np.ndarray  # (k, n) full-length deterministic vectors
    iterations: int
    residual: float

    def mean(self) -> np.ndarray:
        return self.modes[0].copy()

    def variance(self) -> np.ndarray:
        return (self.modes[1:] ** 2).sum(axis=0)


def _basis_for(system: SeparatedSystem, r: int, max_size: int) -> PCBasis:
    return generate_basis(system.n_inputs, r, system.input_distributions, max_size=max_size)


def assemble_pc(system: SeparatedSystem, basis: PCBasis, max_unknowns: int = 5_000_000) -> PCSystem:
    """Block system sum_l kron(c_l, K_l) d = F_PC on the free DoFs."""
    if basis.m != system.n_inputs:
        raise ValueError(f"basis has {basis.m} variables, system has {system.n_inputs} random inputs")
    nk = system.n_free * basis.size
    if nk > max_unknowns:
        raise MemoryError(f"PC system has {nk} unknowns ({system.n_free} x {basis.size}), above the cap of {max_unknowns}")
    cs = tuple(triple_products(basis, int(col)) for col in system.k_columns)
    A = sps.csr_matrix((nk, nk))
    for c, K in zip(cs, system.K_free):
        A = A + sps.kron(c, K, format="csr")
    rhs = np.zeros((basis.size, system.n_free))
    for col, Fj in zip(system.f_columns, system.F_free):
        rhs += np.outer(first_moments(basis, int(col)), Fj)
    return PCSystem(basis=basis, matrix=A.tocsr(), rhs=rhs.reshape(-1), n_free=system.n_free, c=cs)


def solve_pc(
    system: SeparatedSystem,
    order: int | None = None,
    basis: PCBasis | None = None,
    direct_limit: int = 200_000,
    rtol: float = 1e-10,
    max_size: int = 20_000,
    maxiter: int = 2000,
) -> PCSolution:
    """Assemble and solve the Galerkin system.

    Direct sparse factorization below ``direct_limit`` unknowns, otherwise
    conjugate gradients preconditioned by the factorized diagonal blocks.
    """
    if basis is None:
        if order is None:
            raise ValueError("give either order or basis")
        basis = _basis_for(system, order, max_size)
    pcs = assemble_pc(system, basis)
    A, b = pcs.matrix, pcs.rhs
    n, k = pcs.n_free, basis.size
    its = 0
    if n * k <= direct_limit:
        x = SPDSolver(A, refine=1).solve(b)
    else:
        # block-Jacobi: diagonal block j is sum_l c_l[j, j] K_l
        diag = np.array([c.diagonal() for c in pcs.c])  # (m + 1, k)
        keys = {}
        solvers = []
        block_of = np.empty(k, dtype=np.int64)
        for j in range(k):
            key = tuple(np.round(diag[:, j], 14))
            if key not in keys:
                Kj = sum(w * K for w, K in zip(diag[:, j], system.K_free))
                keys[key] = len(solvers)
                solvers.append(system.factorizer().factor(Kj))
            block_of[j] = keys[key]

        def apply(v):
            V = v.reshape(k, n)
            out = np.empty_like(V)
            for j in range(k):
                out[j] = solvers[block_of[j]].solve(V[j])
            return out.reshape(-1)

        M = spla.LinearOperator(A.shape, matvec=apply, dtype=float)
        counter = {"it": 0}

        def cb(_):
            counter["it"] += 1

        x, info = spla.cg(A, b, rtol=rtol, atol=0.0, M=M, maxiter=maxiter, callback=cb)
        its = counter["it"]
        if info != 0:
            raise RuntimeError(f"PC conjugate gradients did not converge in {maxiter} iterations")
    res = float(np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), np.finfo(float).tiny))
    if res > 1e-8 and np.linalg.norm(b) > 0:
        raise RuntimeError(f"PC solve residual {res:.3e} above 1e-8")
    modes = system.expand(x.reshape(k, n))
    return PCSolution(basis=basis, modes=modes, iterations=its, residual=res)


def eval_pc_samples(solution: PCSolution, samples) -> np.ndarray:
    """Solution samples u(theta) = sum_j Gamma_j(theta) d_j, shape (n_s, n).

    ``samples`` holds rows of the sample matrix (including the constant
    column 0) or just the random inputs.
    """
    S = np.atleast_2d(np.asarray(samples, dtype=float))
    if S.shape[1] == solution.basis.m + 1:
        S = S[:, 1:]
    return solution.basis.evaluate(S) @ solution.modes
