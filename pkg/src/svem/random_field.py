"""Karhunen-Loeve expansions of the Young's modulus field and sample batches."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .mesh import PolyMesh
from .vem import material_matrix

GAUSSIAN = "gaussian"
UNIFORM = "uniform"
_DISTRIBUTIONS = (GAUSSIAN, UNIFORM)
KERNELS = ("separable-exponential-2d", "exponential-3d")


@dataclass(frozen=True)
class CovarianceKernel:
    """Covariance kernel of the Young's modulus.

    ``separable-exponential-2d``:
        s^2 (1 + |dx|/lx)(1 + |dy|/ly) exp(-|dx|/lx - |dy|/ly)
    ``exponential-3d``:
        s^2 exp(-|dx|/lx - |dy|/ly - |dz|/lz)
    """

    kind: str
    sigma: float
    lengths: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValueError(f"unknown kernel {self.kind!r}; expected one of {KERNELS}")
        if self.sigma < 0:
            raise ValueError("kernel standard deviation must be non-negative")
        want = 2 if self.kind == "separable-exponential-2d" else 3
        if len(self.lengths) != want:
            raise ValueError(f"{self.kind} needs {want} correlation lengths, got {len(self.lengths)}")
        if any(not (l > 0) for l in self.lengths):
            raise ValueError("correlation lengths must be positive")

    @property
    def dim(self) -> int:
        return len(self.lengths)

    def __call__(self, x1, x2) -> np.ndarray:
        r = np.abs(np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)) / np.asarray(self.lengths)
        out = np.exp(-r.sum(axis=-1))
        if self.kind == "separable-exponential-2d":
            out = out * np.prod(1.0 + r, axis=-1)
        return self.sigma**2 * out


def covariance_matrix(vertices, kernel: CovarianceKernel) -> np.ndarray:
    """Dense kernel matrix over the mesh vertices."""
    X = np.asarray(vertices, dtype=float)
    if X.shape[1] != kernel.dim:
        raise ValueError(f"kernel is {kernel.dim}D but vertices are {X.shape[1]}D")
    C = np.empty((len(X), len(X)))
    for start in range(0, len(X), 512):
        C[start : start + 512] = kernel(X[start : start + 512, None, :], X[None, :, :])
    return 0.5 * (C + C.T)


def lumped_vertex_weights(mesh: PolyMesh) -> np.ndarray:
    """Vertex quadrature weights: each element measure split evenly over its vertices."""
    w = np.zeros(mesh.n_vertices)
    for el in mesh.elements:
        w[el.vertices] += el.measure / el.n_vertices
    return w


@dataclass(frozen=True, eq=False)
class KLExpansion:
    """Truncated expansion E(x) = E0(x) + sum_i xi_i sqrt(kappa_i) E_i(x) at vertices."""

    mean: np.ndarray  # (n_v,)
    eigenvalues: np.ndarray  # (m,) retained, descending
    modes: np.ndarray  # (n_v, m)
    distribution: str = GAUSSIAN
    spectrum: np.ndarray = field(default_factory=lambda: np.zeros(0))  # all computed eigenvalues
    tol: float = 1e-3

    @property
    def m(self) -> int:
        return len(self.eigenvalues)

    @property
    def scaled_modes(self) -> np.ndarray:
        """Columns sqrt(kappa_i) E_i."""
        return self.modes * np.sqrt(self.eigenvalues)

    def field(self, xi) -> np.ndarray:
        """Field values at vertices for samples ``xi`` of shape ``(n_s, m)`` (or ``(m,)``)."""
        xi = np.asarray(xi, dtype=float)
        return self.mean + xi @ self.scaled_modes.T

    def with_distribution(self, distribution: str) -> "KLExpansion":
        if distribution not in _DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {distribution!r}")
        return KLExpansion(self.mean, self.eigenvalues, self.modes, distribution, self.spectrum, self.tol)

    def variance(self) -> np.ndarray:
        """Pointwise variance of the truncated field for the declared distribution."""
        v = (self.scaled_modes**2).sum(axis=1)
        return v if self.distribution == GAUSSIAN else v / 12.0

    def field_mean(self) -> np.ndarray:
        """Expected field. Uniform variables on [0, 1] shift it away from E0."""
        if self.distribution == GAUSSIAN:
            return self.mean.copy()
        return self.mean + 0.5 * self.scaled_modes.sum(axis=1)


def truncation_count(eigenvalues, tol: float) -> int:
    """Smallest m with kappa_m / sum_{i<=m} kappa_i < tol over the positive eigenvalues."""
    kap = np.asarray(eigenvalues, dtype=float)
    kap = kap[kap > 0]
    if kap.size == 0:
        return 0
    ratio = kap / np.cumsum(kap)
    hit = np.flatnonzero(ratio < tol)
    return int(hit[0]) + 1 if hit.size else int(kap.size)


def _clip_spectrum(vals: np.ndarray) -> np.ndarray:
    if vals.size == 0 or vals[0] <= 0:
        if vals.size and vals.min() < -1e-12 * max(abs(vals).max(), 1e-300):
            raise ValueError("covariance matrix is not positive semi-definite")
        return np.zeros_like(vals)
    floor = -1e-12 * vals[0]
    if vals.min() < floor:
        raise ValueError(f"covariance matrix has a negative eigenvalue {vals.min():.3e} (largest {vals[0]:.3e})")
    return np.where(vals < 1e-12 * vals[0], 0.0, vals)


def kl_solve(
    cov,
    tol: float = 1e-3,
    mean=None,
    weights=None,
    n_terms: int | None = None,
    distribution: str = GAUSSIAN,
    dense_limit: int = 5000,
) -> KLExpansion:
    """Eigen-decompose a vertex covariance matrix and truncate.

    Args:
        cov: symmetric (n_v, n_v) covariance matrix.
        tol: truncation tolerance in (0, 1).
        mean: mean field at vertices (defaults to zeros).
        weights: optional vertex quadrature weights (area-weighted Nystrom);
            ``None`` means plain collocation with unit weights.
        n_terms: keep exactly this many terms instead of applying ``tol``.
        distribution: ``"gaussian"`` or ``"uniform"`` (on [0, 1]).
        dense_limit: above this size a truncated Lanczos solver is used.
    """
    C = np.asarray(cov, dtype=float)
    n = C.shape[0]
    if C.shape != (n, n) or not np.allclose(C, C.T, rtol=0, atol=1e-12 * max(1.0, np.abs(C).max())):
        raise ValueError("covariance matrix must be square and symmetric")
    if not 0 < tol < 1:
        raise ValueError("truncation tolerance must lie in (0, 1)")
    if distribution not in _DISTRIBUTIONS:
        raise ValueError(f"unknown distribution {distribution!r}")
    mean = np.zeros(n) if mean is None else np.broadcast_to(np.asarray(mean, dtype=float), (n,)).copy()
    if weights is not None:
        sw = np.sqrt(np.asarray(weights, dtype=float))
        C = sw[:, None] * C * sw[None, :]

    if not np.any(C):
        return KLExpansion(mean, np.zeros(0), np.zeros((n, 0)), distribution, np.zeros(0), tol)

    if n <= dense_limit:
        vals, vecs = sla.eigh(C)
        vals, vecs = vals[::-1], vecs[:, ::-1]
    else:
        k = 64 if n_terms is None else n_terms + 1
        while True:
            k = min(k, n - 1)
            vals, vecs = spla.eigsh(C, k=k, which="LA")
            order = np.argsort(vals)[::-1]
            vals, vecs = vals[order], vecs[:, order]
            if n_terms is not None or k == n - 1 or truncation_count(vals, tol) < k:
                break
            k *= 2
    vals = _clip_spectrum(vals)
    m = truncation_count(vals, tol) if n_terms is None else int(n_terms)
    if m > np.count_nonzero(vals > 0):
        raise ValueError(f"requested {m} terms but only {np.count_nonzero(vals > 0)} positive eigenvalues")
    modes = vecs[:, :m]
    if weights is not None:
        modes = modes / sw[:, None]
    # deterministic sign: largest-magnitude entry of each mode is positive
    idx = np.argmax(np.abs(modes), axis=0)
    modes = modes * np.sign(modes[idx, np.arange(m)])
    return KLExpansion(mean, vals[:m].copy(), np.ascontiguousarray(modes), distribution, vals, tol)


def deterministic_field(mean, n_v: int | None = None) -> KLExpansion:
    mean = np.asarray(mean, dtype=float)
    if mean.ndim == 0:
        mean = np.full(n_v, float(mean))
    return KLExpansion(mean, np.zeros(0), np.zeros((len(mean), 0)))


# ---------------------------------------------------------------------------
# samples


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """Samples of every random input.

    Column 0 is the constant 1; columns 1..m hold the field variables and the
    remaining columns hold the load variables.
    """

    values: np.ndarray  # (n_s, 1 + m + q)
    mask: np.ndarray  # (n_s,) accepted samples
    distributions: tuple[str, ...]  # per column, "constant" for column 0
    seed: int | None
    m: int

    @property
    def n_samples(self) -> int:
        return len(self.values)

    @property
    def n_accepted(self) -> int:
        return int(self.mask.sum())

    @property
    def accepted(self) -> np.ndarray:
        return self.values[self.mask]

    @property
    def n_inputs(self) -> int:
        return self.values.shape[1] - 1

    def row(self, index: int) -> np.ndarray:
        if not self.mask[index]:
            raise IndexError(f"sample {index} was rejected by the positivity filter")
        return self.values[index]


def _draw(rng: np.random.Generator, dist: str, size: int) -> np.ndarray:
    if dist == GAUSSIAN:
        return rng.standard_normal(size)
    if dist == UNIFORM:
        return rng.random(size)
    raise ValueError(f"unknown distribution {dist!r}")


def draw_samples(
    expansion: KLExpansion,
    extra=(),
    n_s: int = 10_000,
    seed: int | None = 0,
    min_modulus: float = 1e-3,
    min_acceptance: float = 0.5,
) -> SampleBatch:
    """Draw field and load variables and filter non-positive fields.

    Args:
        expansion: KL expansion of the modulus field.
        extra: distribution tags of additional (load) variables.
        n_s: number of samples drawn.
        seed: seed for ``numpy.random.default_rng``.
        min_modulus: samples whose field minimum over vertices is at or below
            this value are masked out.
        min_acceptance: raise when fewer samples than this fraction survive.
    """
    if n_s <= 0:
        raise ValueError("n_s must be positive")
    extra = tuple(extra)
    rng = np.random.default_rng(seed)
    cols = [np.ones(n_s)]
    # column-by-column draws keep earlier columns stable when more are added
    for _ in range(expansion.m):
        cols.append(_draw(rng, expansion.distribution, n_s))
    for dist in extra:
        cols.append(_draw(rng, dist, n_s))
    values = np.column_stack(cols)
    if expansion.m:
        fmin = np.min(expansion.field(values[:, 1 : 1 + expansion.m]), axis=1)
    else:
        fmin = np.full(n_s, expansion.mean.min())
    mask = fmin > min_modulus
    rate = mask.mean()
    if rate < min_acceptance:
        raise ValueError(f"only {rate:.1%} of samples have a positive modulus field; the field configuration is ill-posed")
    dists = ("constant",) + (expansion.distribution,) * expansion.m + extra
    return SampleBatch(values=values, mask=mask, distributions=dists, seed=seed, m=expansion.m)


# ---------------------------------------------------------------------------
# material components


def element_values(mesh: PolyMesh, vertex_values, reduction: str = "vertex-mean") -> np.ndarray:
    """Reduce vertex values (n_v,) or (n_v, k) to one value per element."""
    v = np.asarray(vertex_values, dtype=float)
    out = np.empty((mesh.n_elements,) + v.shape[1:])
    for k, el in enumerate(mesh.elements):
        if reduction == "vertex-mean":
            out[k] = v[el.vertices].mean(axis=0)
        elif reduction == "centroid-nearest-vertex":
            near = np.argmin(np.linalg.norm(el.coords - el.centroid, axis=1))
            out[k] = v[el.vertices[near]]
        else:
            raise ValueError(f"unknown element reduction {reduction!r}")
    return out


def material_coefficients(mesh: PolyMesh, expansion: KLExpansion, reduction: str = "vertex-mean") -> np.ndarray:
    """Per-element modulus coefficients, shape (m + 1, n_e): row 0 the mean, row i sqrt(kappa_i) E_i."""
    cols = np.column_stack([expansion.mean, expansion.scaled_modes])
    return element_values(mesh, cols, reduction).T.copy()


def material_matrices(
    mesh: PolyMesh, expansion: KLExpansion, model: str, nu: float, reduction: str = "vertex-mean"
) -> np.ndarray:
    """Separated material matrices G_i per element, shape (m + 1, n_e, q, q).

    The material matrix is linear in the modulus, so G_i = c_i G(E=1, nu).
    """
    unit = material_matrix(model, 1.0, nu)
    coef = material_coefficients(mesh, expansion, reduction)
    return coef[:, :, None, None] * unit


# ---------------------------------------------------------------------------
# text artifact


def save_kl(expansion: KLExpansion, directory) -> None:
    """Write eigenvalues and vertex tables as CSV plus a small JSON header."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    header = {"m": expansion.m, "distribution": expansion.distribution, "tol": expansion.tol}
    (d / "kl.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    with open(d / "eigenvalues.csv", "w") as fh:
        fh.write("index,eigenvalue,retained\n")
        for i, k in enumerate(expansion.spectrum):
            fh.write(f"{i + 1},{float(k)!r},{int(i < expansion.m)}\n")
    with open(d / "modes.csv", "w") as fh:
        fh.write("vertex,mean" + "".join(f",E{i + 1}" for i in range(expansion.m)) + "\n")
        for v in range(len(expansion.mean)):
            row = [repr(float(expansion.mean[v]))] + [repr(float(x)) for x in expansion.modes[v]]
            fh.write(f"{v}," + ",".join(row) + "\n")


def load_kl(directory) -> KLExpansion:
    d = Path(directory)
    header = json.loads((d / "kl.json").read_text())
    lines = (d / "eigenvalues.csv").read_text().splitlines()[1:]
    spec = np.array([[float(t) for t in ln.split(",")] for ln in lines if ln.strip()]).reshape(-1, 3)
    tab = np.loadtxt(d / "modes.csv", delimiter=",", skiprows=1, ndmin=2)
    m = int(header["m"])
    spectrum = spec[:, 1] if spec.size else np.zeros(0)
    return KLExpansion(
        mean=tab[:, 1].copy(),
        eigenvalues=spectrum[:m].copy(),
        modes=np.ascontiguousarray(tab[:, 2 : 2 + m]),
        distribution=header["distribution"],
        spectrum=spectrum,
        tol=float(header["tol"]),
    )
