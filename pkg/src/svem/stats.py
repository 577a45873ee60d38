"""Mean/std fields, kernel density estimates and comparison metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import gaussian_kde


@dataclass(frozen=True, eq=False)
class FieldStatistics:
    mean: np.ndarray  # (n,)
    std: np.ndarray  # (n,)

    def per_vertex(self, dim: int) -> tuple[np.ndarray, np.ndarray]:
        return self.mean.reshape(-1, dim), self.std.reshape(-1, dim)


def expansion_statistics(D, Lam) -> FieldStatistics:
    """Statistics of u = sum_i lambda_i d_i from deterministic vectors and lambda samples.

    Args:
        D: (n, k) deterministic vectors.
        Lam: (n_s, k) samples of the random coefficients.

    The variance is sum_ij Cov(lambda_i, lambda_j) d_i * d_j (population covariance).
    """
    D = np.asarray(D, dtype=float)
    Lam = np.atleast_2d(np.asarray(Lam, dtype=float))
    mu = Lam.mean(axis=0)
    dev = Lam - mu
    cov = dev.T @ dev / Lam.shape[0]
    var = np.einsum("ni,ij,nj->n", D, cov, D)
    return FieldStatistics(mean=D @ mu, std=np.sqrt(np.clip(var, 0.0, None)))


def sample_statistics(U) -> FieldStatistics:
    U = np.atleast_2d(np.asarray(U, dtype=float))
    return FieldStatistics(mean=U.mean(axis=0), std=U.std(axis=0))


def pc_statistics(solution, samples=None) -> FieldStatistics:
    """PC statistics: closed-form moments, or sample moments of the evaluated expansion."""
    if samples is None:
        return FieldStatistics(mean=solution.mean(), std=np.sqrt(solution.variance()))
    S = np.atleast_2d(np.asarray(samples, dtype=float))
    if S.shape[1] == solution.basis.m + 1:
        S = S[:, 1:]
    return expansion_statistics(solution.modes.T, solution.basis.evaluate(S))


def relative_l2(a, b) -> float:
    """||a - b|| / ||b|| with ``b`` the reference."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    nb = np.linalg.norm(b)
    diff = np.linalg.norm(a - b)
    return float(diff / nb) if nb > 0 else float(diff)


# ---------------------------------------------------------------------------
# densities


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float
    degenerate: bool = False
    value: float | None = None  # location of the point mass when degenerate

    @property
    def peak(self) -> float:
        return float(self.density.max()) if self.density.size else 0.0

    def mass(self) -> float:
        return float(np.trapezoid(self.density, self.grid))


def default_grid(samples, n_grid: int = 512, width: float = 5.0) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    mu, sd = x.mean(), x.std(ddof=1)
    return np.linspace(mu - width * sd, mu + width * sd, n_grid)


def kde_pdf(samples, grid=None, n_grid: int = 512, width: float = 5.0) -> DensityEstimate:
    """Gaussian KDE with Silverman's bandwidth 1.06 sigma n^(-1/5)."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size < 100:
        raise ValueError(f"at least 100 samples are needed for a density estimate, got {x.size}")
    sd = x.std(ddof=1)
    if not sd > 1e-14 * max(1.0, np.abs(x).max()):
        g = np.asarray(grid, dtype=float) if grid is not None else np.array([x[0]])
        return DensityEstimate(g, np.zeros_like(g), 0.0, degenerate=True, value=float(x.mean()))
    factor = 1.06 * x.size ** (-0.2)
    kde = gaussian_kde(x, bw_method=factor)
    g = default_grid(x, n_grid, width) if grid is None else np.asarray(grid, dtype=float)
    return DensityEstimate(g, kde(g), float(factor * sd))


def pdf_abs_error(a: DensityEstimate, b: DensityEstimate) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise |p_a - p_b| on ``b``'s grid (``a`` interpolated when the grids differ)."""
    if a.degenerate or b.degenerate:
        raise ValueError("density comparison is undefined for degenerate (point-mass) estimates")
    if a.grid.shape == b.grid.shape and np.array_equal(a.grid, b.grid):
        pa = a.density
    else:
        pa = np.interp(b.grid, a.grid, a.density, left=0.0, right=0.0)
    return b.grid, np.abs(pa - b.density)
