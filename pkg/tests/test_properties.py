import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from svem.mesh import build_mesh
from svem.pc import basis_size, multi_indices
from svem.random_field import truncation_count
from svem.stats import expansion_statistics
from svem.vem import element_operators, plane_stress_matrix, stiffness_matrix
from svem.win import outer_error, sample_products

SETTINGS = settings(max_examples=40, deadline=None)


@st.composite
def convex_polygons(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(3, 12))
    rng = np.random.default_rng(seed)
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    if np.diff(np.r_[ang, ang[0] + 2 * np.pi]).max() > np.pi * 0.9:
        ang = np.linspace(0, 2 * np.pi, n, endpoint=False) + rng.uniform(0, 0.1)
    r = rng.uniform(0.5, 1.5, n)
    P = np.column_stack([r * np.cos(ang), r * np.sin(ang)])
    hull = ConvexHull(P)
    P = P[hull.vertices] * rng.uniform(0.1, 10) + rng.uniform(-5, 5, 2)
    return build_mesh(P, [list(range(len(P)))]).elements[0]


def affine_nodal(e, seed):
    rng = np.random.default_rng(seed)
    c, M = rng.standard_normal(2), rng.standard_normal((2, 2))
    return (e.coords @ M.T + c).reshape(-1)


@SETTINGS
@given(convex_polygons(), st.integers(0, 1000))
def test_projector_reproduces_affine(e, seed):
    ops = element_operators(e)
    np.testing.assert_allclose(ops.A.sum(axis=0), 0, atol=1e-12 * np.abs(ops.A).max())
    np.testing.assert_allclose(ops.A.T @ e.coords, np.eye(2), atol=1e-10)
    u = affine_nodal(e, seed)
    np.testing.assert_allclose(ops.S @ u, u, atol=1e-10 * np.abs(u).max())
    np.testing.assert_allclose(ops.S @ ops.S, ops.S, atol=1e-10)


@SETTINGS
@given(convex_polygons(), st.floats(0.0, 0.45), st.integers(0, 1000))
def test_stiffness_kernel_is_rigid_motions(e, nu, seed):
    k = stiffness_matrix(e, plane_stress_matrix(1.0, nu))
    np.testing.assert_allclose(k, k.T, atol=1e-12 * np.abs(k).max())
    ev = np.linalg.eigvalsh(0.5 * (k + k.T))
    assert ev.min() >= -1e-10 * ev.max()
    assert np.sum(ev < 1e-10 * ev.max()) == 3
    # the stabilization leaves affine energies untouched
    u = affine_nodal(e, seed)
    ops = element_operators(e)
    assert np.allclose(u @ k @ u, ops.measure * (ops.B @ u) @ plane_stress_matrix(1.0, nu) @ (ops.B @ u), rtol=1e-9)


@SETTINGS
@given(convex_polygons(), st.floats(0, 2 * np.pi))
def test_stiffness_rotation_covariant(e, theta):
    R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    e2 = build_mesh(e.coords @ R.T, [list(range(e.n_vertices))]).elements[0]
    # isotropic material: k(R x) = T k(x) T^T with T = blockdiag(R)
    G = plane_stress_matrix(1.0, 0.3)
    T = np.kron(np.eye(e.n_vertices), R)
    k1, k2 = stiffness_matrix(e, G), stiffness_matrix(e2, G)
    np.testing.assert_allclose(k2, T @ k1 @ T.T, atol=1e-10 * np.abs(k1).max())


@SETTINGS
@given(st.lists(st.floats(1e-8, 1e3), min_size=1, max_size=30), st.floats(1e-6, 0.5), st.floats(1e-6, 0.5))
def test_truncation_monotone_in_tol(vals, t1, t2):
    kap = np.sort(np.array(vals))[::-1]
    lo, hi = sorted((t1, t2))
    assert truncation_count(kap, lo) >= truncation_count(kap, hi)
    assert 1 <= truncation_count(kap, lo) <= len(kap)


@SETTINGS
@given(st.integers(0, 6), st.integers(0, 4))
def test_multi_index_counts(m, r):
    idx = multi_indices(m, r)
    assert len(idx) == basis_size(m, r) == math.comb(m + r, r)
    if m:
        deg = idx.sum(axis=1)
        assert np.all(np.diff(deg) >= 0) and deg.max() == r
        assert not idx[0].any()


@SETTINGS
@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(1, 3000), st.integers(1, 5000))
def test_sample_products_chunk_invariant(seed, k, n, chunk):
    rng = np.random.default_rng(seed)
    A, B = rng.standard_normal((k, n)), rng.standard_normal((2, n))
    np.testing.assert_allclose(sample_products(A, B, chunk), A @ B.T / n, rtol=1e-10, atol=1e-12)


@SETTINGS
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_outer_error_bounds(seed, k):
    Lam = np.random.default_rng(seed).standard_normal((200, k)) * np.logspace(0, -3, k)
    eps = outer_error(Lam)
    assert 0 <= eps <= 1.0 / k + 1e-12


@SETTINGS
@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_statistics_std_nonnegative(seed, k):
    rng = np.random.default_rng(seed)
    s = expansion_statistics(rng.standard_normal((20, k)), rng.standard_normal((50, k)))
    assert np.all(s.std >= 0) and np.all(np.isfinite(s.std))


@settings(max_examples=15, deadline=None)
@given(st.permutations(list(range(16))))
def test_assembly_independent_of_element_order(perm):
    from conftest import FIXTURES
    from svem.mesh import load_mesh
    from svem.vem import assemble_stiffness

    mesh = load_mesh(FIXTURES / "voronoi16.mesh")
    G = plane_stress_matrix(1.0, 0.3)
    shuffled = build_mesh(mesh.vertices, [mesh.elements[i].vertices for i in perm])
    assert (assemble_stiffness(mesh, G) != assemble_stiffness(shuffled, G)).nnz == 0
