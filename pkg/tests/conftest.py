from pathlib import Path

import numpy as np
import pytest

from svem.mesh import build_mesh, load_mesh

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"

CUBE_VERTS = np.array(
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=float
)
CUBE_FACES = [[0, 3, 2, 1], [4, 5, 6, 7], [0, 1, 5, 4], [1, 2, 6, 5], [2, 3, 7, 6], [3, 0, 4, 7]]


def unit_square_mesh():
    V = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    return build_mesh(V, [[0, 1, 2, 3]], {"left": [0, 3]}, {"bottom": [(0, 0)]})


def two_squares_mesh():
    V = np.array([[0, 0], [1, 0], [2, 0], [0, 1], [1, 1], [2, 1]], dtype=float)
    return build_mesh(V, [[0, 1, 4, 3], [1, 2, 5, 4]], {"left": [0, 3]})


def unit_cube_mesh():
    return build_mesh(CUBE_VERTS, [CUBE_FACES], {"bottom": [0, 1, 2, 3]})


@pytest.fixture(scope="session")
def voronoi16():
    return load_mesh(FIXTURES / "voronoi16.mesh")


@pytest.fixture(scope="session")
def cube8():
    return load_mesh(FIXTURES / "cube8.mesh")


@pytest.fixture(scope="session")
def ex1_desk():
    return load_mesh(FIXTURES / "ex1_desk.mesh")


def kl_for(mesh, sigma=10.0, n_terms=None, scale=1.0, tol=1e-3, distribution="gaussian", mean=100.0):
    from svem.random_field import CovarianceKernel, covariance_matrix, deterministic_field, kl_solve

    if sigma == 0:
        return deterministic_field(np.full(mesh.n_vertices, mean))
    lo, hi = mesh.bounding_box()
    kind = "separable-exponential-2d" if mesh.dim == 2 else "exponential-3d"
    C = covariance_matrix(mesh.vertices, CovarianceKernel(kind, sigma, tuple((hi - lo) * scale)))
    return kl_solve(C, tol, mean=np.full(mesh.n_vertices, mean), n_terms=n_terms, distribution=distribution)


def system_for(mesh, kl, loads, fixed_set, nu=0.3):
    from svem.random_field import material_matrices
    from svem.svee import build_system, force_expansion

    model = "plane-stress" if mesh.dim == 2 else "isotropic-3d"
    G = material_matrices(mesh, kl, model, nu)
    forces = force_expansion(mesh, loads)
    return build_system(mesh, G, forces, mesh.dofs_of(mesh.dirichlet(fixed_set)), kl.distribution)


def beam_loads(random=True):
    from svem.svee import LoadSpec

    rnd = (((0.0, -100.0), "gaussian"),) if random else ()
    return [LoadSpec("point", (0.0, -1000.0), "load", rnd)]


@pytest.fixture(scope="session")
def beam_system(ex1_desk):
    """50-cell beam with two field terms and a Gaussian point load."""
    kl = kl_for(ex1_desk, n_terms=2)
    return system_for(ex1_desk, kl, beam_loads(), "supports"), kl


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
