import math
from itertools import product

import numpy as np
import pytest
import scipy.sparse as sps
from scipy.special import eval_hermitenorm, eval_legendre, roots_hermitenorm, roots_legendre

from conftest import beam_loads, kl_for, system_for
from svem.pc import (
    assemble_pc,
    basis_size,
    eval_pc_samples,
    generate_basis,
    multi_indices,
    quadrature_gram,
    solve_pc,
    triple_products,
)
from svem.random_field import draw_samples
from svem.stats import pc_statistics
from svem.vem import apply_dirichlet, solve_spd


def oracle_basis(fams, idx, x):
    """Orthonormal basis values via scipy.special, x of shape (n, m)."""
    out = np.ones((len(x), len(idx)))
    for j, a in enumerate(idx):
        for d, (fam, deg) in enumerate(zip(fams, a)):
            if fam == "hermite":
                out[:, j] *= eval_hermitenorm(deg, x[:, d]) / math.sqrt(math.factorial(deg))
            else:
                out[:, j] *= eval_legendre(deg, 2 * x[:, d] - 1) * math.sqrt(2 * deg + 1)
    return out


def oracle_rule(fam, n):
    if fam == "hermite":
        x, w = roots_hermitenorm(n)
        return x, w / math.sqrt(2 * math.pi)
    t, w = roots_legendre(n)
    return 0.5 * (t + 1), 0.5 * w


def tensor_rule(fams, n):
    rules = [oracle_rule(f, n) for f in fams]
    pts = np.array(list(product(*[r[0] for r in rules])))
    wts = np.array([np.prod(c) for c in product(*[r[1] for r in rules])])
    return pts, wts


def test_basis_sizes():
    assert basis_size(7, 2) == 36
    assert basis_size(7, 3) == 120
    assert 4036 * basis_size(7, 3) == 484320
    assert basis_size(35, 2) == 666
    b = generate_basis(1, 0)
    assert b.size == 1
    np.testing.assert_array_equal(b.evaluate(np.array([[0.3], [-2.0]])), 1.0)


def test_multi_index_order():
    idx = multi_indices(2, 2)
    np.testing.assert_array_equal(idx, [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]])
    assert len(multi_indices(4, 3)) == basis_size(4, 3)
    assert len({tuple(r) for r in multi_indices(4, 3)}) == basis_size(4, 3)


@pytest.mark.parametrize("fams", [("hermite", "hermite"), ("legendre", "hermite"), ("legendre", "legendre")])
def test_basis_values_and_orthonormality(fams):
    basis = generate_basis(2, 3, fams)
    x = np.random.default_rng(0).random((7, 2))
    np.testing.assert_allclose(basis.evaluate(x), oracle_basis(fams, basis.indices, x), atol=1e-12)
    np.testing.assert_allclose(quadrature_gram(basis), np.eye(basis.size), atol=1e-12)


def test_hermite_first_triple_product():
    basis = generate_basis(1, 1)
    c = triple_products(basis, 1).toarray()
    assert c[0, 1] == pytest.approx(1.0, abs=1e-14)
    assert c[1, 0] == pytest.approx(1.0, abs=1e-14)
    assert sps.issparse(triple_products(basis, 0))
    np.testing.assert_array_equal(triple_products(basis, 0).toarray(), np.eye(2))


@pytest.mark.parametrize("fams", [("hermite", "hermite", "hermite"), ("legendre", "hermite", "legendre")])
def test_triple_products_tensor_oracle(fams):
    basis = generate_basis(3, 2, fams)
    pts, wts = tensor_rule(fams, 5)
    P = oracle_basis(fams, basis.indices, pts)
    for l in range(4):
        xl = np.ones(len(pts)) if l == 0 else pts[:, l - 1]
        expect = (P * (wts * xl)[:, None]).T @ P
        np.testing.assert_allclose(triple_products(basis, l).toarray(), expect, atol=1e-12)


def test_triple_products_vanish_off_dimension():
    basis = generate_basis(3, 2)
    c = triple_products(basis, 2).toarray()
    idx = basis.indices
    for i in range(basis.size):
        for j in range(basis.size):
            others = [0, 2]
            if np.any(idx[i, others] != idx[j, others]):
                assert c[i, j] == 0.0


def test_deterministic_degeneration(ex1_desk):
    kl = kl_for(ex1_desk, sigma=0.0)
    system = system_for(ex1_desk, kl, beam_loads(random=False), "supports")
    sol = solve_pc(system, order=0)
    assert sol.basis.size == 1
    pcs = assemble_pc(system, sol.basis)
    assert abs(pcs.matrix - system.K_free[0]).max() == 0
    ref = solve_spd(apply_dirichlet(system.K(0), system.F[0], system.fixed))
    assert np.linalg.norm(sol.modes[0] - ref) <= 1e-12 * np.linalg.norm(ref)


def test_random_force_decouples(ex1_desk):
    kl = kl_for(ex1_desk, sigma=0.0)
    system = system_for(ex1_desk, kl, beam_loads(random=True), "supports")
    sol = solve_pc(system, order=2)
    assert sol.basis.size == 3
    d0 = solve_spd(apply_dirichlet(system.K(0), system.F[0], system.fixed))
    d1 = solve_spd(apply_dirichlet(system.K(0), system.F[1], system.fixed))
    np.testing.assert_allclose(sol.modes[0], d0, atol=1e-12 * np.abs(d0).max())
    np.testing.assert_allclose(sol.modes[1], d1, atol=1e-12 * np.abs(d1).max())
    np.testing.assert_allclose(sol.modes[2], 0, atol=1e-12 * np.abs(d0).max())


def test_evaluation(beam_system):
    system, kl = beam_system
    sol0 = solve_pc(system, order=0)
    batch = draw_samples(kl, ("gaussian",), 200, seed=4)
    U = eval_pc_samples(sol0, batch.accepted)
    np.testing.assert_array_equal(U, np.broadcast_to(sol0.modes[0], U.shape))

    sol = solve_pc(system, order=2)
    zero = np.zeros((1, sol.basis.m))
    expect = oracle_basis(("hermite",) * 3, sol.basis.indices, zero) @ sol.modes
    np.testing.assert_allclose(eval_pc_samples(sol, zero), expect, atol=1e-12 * np.abs(sol.modes).max())
    # only even-degree modes contribute at the origin
    odd = sol.basis.indices.sum(axis=1) % 2 == 1
    np.testing.assert_allclose(oracle_basis(("hermite",) * 3, sol.basis.indices, zero)[0, odd], 0, atol=1e-15)


def test_sample_moments_match_closed_form(beam_system):
    system, kl = beam_system
    sol = solve_pc(system, order=2)
    batch = draw_samples(kl, ("gaussian",), 20000, seed=11)
    by_samples = pc_statistics(sol, batch.accepted)
    closed = pc_statistics(sol)
    assert np.linalg.norm(by_samples.mean - closed.mean) <= 0.01 * np.linalg.norm(closed.mean)
    assert np.linalg.norm(by_samples.std - closed.std) <= 0.05 * np.linalg.norm(closed.std)


def test_iterative_path_matches_direct(beam_system):
    system, _ = beam_system
    direct = solve_pc(system, order=2)
    iterative = solve_pc(system, order=2, direct_limit=10)
    assert iterative.iterations > 0
    np.testing.assert_allclose(iterative.modes, direct.modes, atol=1e-8 * np.abs(direct.modes).max())


def test_size_caps(beam_system):
    system, _ = beam_system
    with pytest.raises(ValueError):
        generate_basis(35, 4, max_size=1000)
    with pytest.raises(MemoryError):
        assemble_pc(system, generate_basis(3, 2), max_unknowns=100)
    with pytest.raises(ValueError):
        solve_pc(system)
