"""Weakly intrusive solver: u(theta) ~ sum_i lambda_i(theta) d_i.

Deterministic vectors d_i come from expectation-weighted Galerkin solves and
the random variables lambda_i are stored as sample vectors. Sample-dependent
quantities are kept as scalar vectors; the residual force is never formed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from .linalg import NotPositiveDefiniteError
from .random_field import SampleBatch
from .svee import SeparatedSystem


CHUNK = 4096


def expect(values: np.ndarray) -> np.ndarray:
    """Sample mean over the last axis with numpy's pairwise summation."""
    v = np.ascontiguousarray(values)
    return v.sum(axis=-1) / v.shape[-1]


def sample_products(A: np.ndarray, B: np.ndarray, chunk: int = CHUNK) -> np.ndarray:
    """E[a_i b_j] for sample rows of ``A`` (p, n_s) and ``B`` (q, n_s).

    Fixed-size sample chunks are reduced by matrix products and their partial
    sums added in chunk order, so the result does not depend on thread count.
    """
    n = A.shape[-1]
    out = np.zeros((A.shape[0], B.shape[0]))
    for s in range(0, n, chunk):
        out += A[:, s : s + chunk] @ B[:, s : s + chunk].T
    return out / n


@dataclass(frozen=True)
class IterationConfig:
    eps_d: float = 1e-3
    eps_u: float = 1e-6
    max_inner: int = 50
    max_terms: int = 50
    init: str = "ones"  # or "random"
    init_seed: int = 0
    residual_tol: float = 1e-9  # relative size of a new term's right-hand side treated as zero

    def __post_init__(self):
        if not (self.eps_d > 0 and self.eps_u > 0):
            raise ValueError("tolerances must be positive")
        if self.init not in ("ones", "random"):
            raise ValueError(f"unknown initial-lambda rule {self.init!r}")
        if self.max_inner < 1 or self.max_terms < 1:
            raise ValueError("iteration caps must be at least 1")


@dataclass
class TraceRow:
    term: int
    eps_u: float
    inner_iterations: int
    eps_d: float
    wall_time: float


@dataclass(frozen=True, eq=False)
class WINExpansion:
    D: np.ndarray  # (n, k) full length, zero rows at fixed DoFs
    Lam: np.ndarray  # (n_acc, k)
    trace: tuple = field(default=())
    stop_reason: str = ""
    lam_iteration: np.ndarray | None = None  # lambda samples before recalculation

    @property
    def k(self) -> int:
        return self.D.shape[1]

    def samples(self) -> np.ndarray:
        """Solution samples (n_acc, n)."""
        return self.Lam @ self.D.T


class _Inputs:
    """Accepted-sample weights transposed for contiguous reductions."""

    def __init__(self, system: SeparatedSystem, rows: np.ndarray):
        self.xi = np.ascontiguousarray(system.xi(rows).T)  # (m + 1, n_s)
        self.eta = np.ascontiguousarray(system.eta(rows).T)  # (p, n_s)
        self.n_s = rows.shape[0]


class _State:
    """Expansion so far plus the projected tables K_i d_j, d^T K_i d_j and d^T F_p."""

    def __init__(self, system: SeparatedSystem):
        self.system = system
        self.m1 = len(system.K_free)
        self.nf = system.n_free
        self.K_stack = sps.vstack(system.K_free, format="csr")  # all K_i stacked row-wise
        self.D = np.zeros((self.nf, 0))
        self.Lam = np.zeros((0, 0))  # (k, n_s) stored transposed
        self.KD = np.zeros((self.m1, self.nf, 0))
        self.DKD = np.zeros((self.m1, 0, 0))
        self.DF = np.zeros((0, system.F_free.shape[0]))
        self.chol = system.factorizer()

    @property
    def k(self) -> int:
        return self.D.shape[1]

    def apply_all(self, d: np.ndarray) -> np.ndarray:
        """K_i d for every i, shape (m + 1, n_free)."""
        return (self.K_stack @ d).reshape(self.m1, self.nf)

    def append(self, d: np.ndarray, lam: np.ndarray) -> None:
        kd = self.apply_all(d)
        k = self.k
        DKD = np.zeros((self.m1, k + 1, k + 1))
        DKD[:, :k, :k] = self.DKD
        col = kd @ self.D  # (m + 1, k)
        DKD[:, :k, k] = col
        DKD[:, k, :k] = col
        DKD[:, k, k] = kd @ d
        self.DKD = DKD
        self.KD = np.concatenate([self.KD, kd[:, :, None]], axis=2)
        self.D = np.column_stack([self.D, d])
        self.DF = np.vstack([self.DF, self.system.F_free @ d])
        self.Lam = np.vstack([self.Lam.reshape(k, -1), lam]) if k else lam[None, :].copy()


def _projected_weights(state: _State, d: np.ndarray) -> np.ndarray:
    """Rows [d^T K_i d]_i and [d^T K_i d_j]_i for j < k, shape (1 + k, m + 1)."""
    kd = state.apply_all(d)  # (m + 1, n_free)
    rows = [kd @ d]
    if state.k:
        rows.append((kd @ state.D).T)  # (k, m + 1); K_i symmetric
    return np.vstack(rows)


def residual_force_samples(state: _State, inputs: _Inputs, d: np.ndarray, weighted: np.ndarray | None = None) -> np.ndarray:
    """Samples of d^T F_k(theta) = d^T F(theta) - sum_ij xi_i lambda_j (d^T K_i d_j)."""
    s = state.system
    out = (s.F_free @ d) @ inputs.eta
    if state.k:
        if weighted is None:
            weighted = _projected_weights(state, d)[1:] @ inputs.xi
        out = out - np.sum(weighted * state.Lam, axis=0)
    return out


def update_lambda(state: _State, inputs: _Inputs, d: np.ndarray) -> np.ndarray:
    """lambda(theta) = [d^T F_k(theta)] / [sum_i xi_i(theta) d^T K_i d]."""
    # one product over the samples gives the denominator and the coupling terms
    P = _projected_weights(state, d) @ inputs.xi
    den = P[0]
    num = residual_force_samples(state, inputs, d, P[1:])
    bad = np.flatnonzero(~(den > 0))
    if bad.size:
        raise ArithmeticError(f"non-positive d^T K(theta) d at accepted sample {bad[0]} ({den[bad[0]]:.3e})")
    return num / den


def lambda_moments(state: _State, inputs: _Inputs, lam: np.ndarray) -> np.ndarray:
    """E[xi_i lambda^2] and E[xi_i lambda_j lambda] in one pass, shape (m + 1, 1 + k)."""
    B = np.vstack([lam**2, state.Lam * lam]) if state.k else (lam**2)[None, :]
    return sample_products(inputs.xi, B)


def galerkin_rhs(state: _State, inputs: _Inputs, lam: np.ndarray, moments: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """E[F lambda] - sum_ij E[xi_i lambda_j lambda] K_i d_j, and the size of its two parts."""
    s = state.system
    load = s.F_free.T @ sample_products(inputs.eta, lam[None, :])[:, 0]
    if not state.k:
        return load, float(np.linalg.norm(load))
    w = (lambda_moments(state, inputs, lam) if moments is None else moments)[:, 1:]  # (m + 1, k)
    coupling = np.einsum("ink,ik->n", state.KD, w)
    scale = max(np.linalg.norm(load), np.linalg.norm(coupling))
    return load - coupling, float(scale)


def solve_d(
    state: _State, inputs: _Inputs, lam: np.ndarray, rhs: np.ndarray | None = None, moments: np.ndarray | None = None
) -> tuple[np.ndarray, float]:
    """Solve [sum_i E(xi_i lambda^2) K_i] d = rhs, then orthonormalize against the stored d's.

    Returns the normalized vector and the norm ratio after/before
    orthogonalization (near 0 means the new direction is already spanned).
    """
    if moments is None:
        moments = lambda_moments(state, inputs, lam)
    if rhs is None:
        rhs, _ = galerkin_rhs(state, inputs, lam, moments)
    w = moments[:, 0]
    try:
        state.chol.factor_lower(state.system.lower_values(w))
    except NotPositiveDefiniteError as exc:
        raise ArithmeticError(f"expectation-weighted stiffness is not positive definite (weights {w})") from exc
    d = state.chol.solve(rhs)
    before = np.linalg.norm(d)
    if before == 0:
        return d, 0.0
    for _ in range(2):
        if state.k:
            d = d - state.D @ (state.D.T @ d)
    after = np.linalg.norm(d)
    return d / after if after > 0 else d, after / before


def inner_error(d_new, d_old) -> float:
    return float(2.0 - 2.0 * np.dot(d_new, d_old))


def outer_error(Lam) -> float:
    """Smallest eigenvalue share Z_k / Tr(Z) of E[Lambda Lambda^T]; ``Lam`` is (n_s, k)."""
    Lam = np.asarray(Lam, dtype=float)
    if not np.all(np.isfinite(Lam)):
        raise ValueError("non-finite lambda samples")
    Z = outer_spectrum(Lam)
    return float(Z[-1] / Z.sum())


def outer_spectrum(Lam) -> np.ndarray:
    """Eigenvalues of the sample autocorrelation E[Lambda Lambda^T], descending."""
    Lam = np.asarray(Lam, dtype=float)
    Lt = np.ascontiguousarray(Lam.reshape(len(Lam), -1).T)
    C = sample_products(Lt, Lt)
    Z = np.linalg.eigvalsh(0.5 * (C + C.T))[::-1]
    return np.clip(Z, 0.0, None)


def outer_error_profile(Lam) -> np.ndarray:
    """Z_j / Tr(Z) for j = 1..k from a single final Lambda."""
    Z = outer_spectrum(Lam)
    return Z / Z.sum()


def recalculate(system: SeparatedSystem, D_free: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Per-sample reduced solves [D^T K(theta) D] Lambda = D^T F(theta); returns (n_s, k)."""
    DKD = np.array([D_free.T @ (K @ D_free) for K in system.K_free])  # (m + 1, k, k)
    DF = system.F_free @ D_free  # (p, k)
    xi = system.xi(rows)
    eta = system.eta(rows)
    k = D_free.shape[1]
    A = (xi @ DKD.reshape(len(DKD), -1)).reshape(-1, k, k)
    b = eta @ DF
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        bad = [s for s in range(len(A)) if np.any(np.linalg.eigvalsh(A[s]) <= 0)]
        raise ArithmeticError(f"reduced matrix not SPD at sample {bad[0] if bad else '?'}") from None
    y = np.linalg.solve(L, b[..., None])
    return np.linalg.solve(np.swapaxes(L, -1, -2), y)[..., 0]


def run(system: SeparatedSystem, batch: SampleBatch, config: IterationConfig | None = None, timing: bool = True) -> WINExpansion:
    """Alternating solve with Gram-Schmidt, eigenvalue-based stopping and a final recalculation."""
    cfg = IterationConfig() if config is None else config
    rows = batch.accepted
    if rows.shape[0] == 0:
        raise ValueError("no accepted samples")
    inputs = _Inputs(system, rows)
    state = _State(system)
    rng = np.random.default_rng(cfg.init_seed)
    trace: list[TraceRow] = []
    t0 = time.perf_counter()
    reference = None
    stop = "max_terms"
    for term in range(1, cfg.max_terms + 1):
        lam = np.ones(inputs.n_s) if cfg.init == "ones" else rng.standard_normal(inputs.n_s) + 1.0
        mom = lambda_moments(state, inputs, lam)
        rhs, scale = galerkin_rhs(state, inputs, lam, mom)
        reference = scale if reference is None else reference
        if np.linalg.norm(rhs) <= cfg.residual_tol * max(scale, reference):
            stop = "negligible_residual"
            break
        d_old = None
        eps = np.inf
        dependent = False
        it = 0
        for it in range(1, cfg.max_inner + 1):
            d, ratio = solve_d(state, inputs, lam, rhs, mom)
            if ratio < 1e-10:
                dependent = True
                break
            lam = update_lambda(state, inputs, d)
            if d_old is not None:
                eps = inner_error(d, d_old)
                if eps < cfg.eps_d:
                    break
            d_old = d
            mom = lambda_moments(state, inputs, lam)
            rhs, _ = galerkin_rhs(state, inputs, lam, mom)
        if dependent:
            stop = "linearly_dependent"
            break
        state.append(d, lam)
        eps_u = outer_error(state.Lam.T)
        trace.append(TraceRow(term, eps_u, it, float(eps), time.perf_counter() - t0 if timing else 0.0))
        if eps_u < cfg.eps_u:
            stop = "converged"
            break
    if state.k == 0:
        raise RuntimeError("no expansion term could be computed (zero load?)")
    lam_iter = state.Lam.T.copy()
    Lam = recalculate(system, state.D, rows)
    return WINExpansion(
        D=system.expand(state.D.T).T,
        Lam=Lam,
        trace=tuple(trace),
        stop_reason=stop,
        lam_iteration=lam_iter,
    )


def galerkin_residual(system: SeparatedSystem, expansion: WINExpansion, rows: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Relative norms of D^T (K(theta) D lambda - F(theta)) per sample, using full sparse products."""
    D = expansion.D[system.free]
    out = np.empty(len(rows))
    for s, (row, l) in enumerate(zip(rows, lam)):
        K = system.K_at(row)[system.free][:, system.free]
        F = system.F_at(row)[system.free]
        r = D.T @ (K @ (D @ l) - F)
        out[s] = np.linalg.norm(r) / max(np.linalg.norm(D.T @ F), np.finfo(float).tiny)
    return out
