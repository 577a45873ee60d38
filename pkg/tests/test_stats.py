import numpy as np
import pytest

from svem.stats import default_grid, expansion_statistics, kde_pdf, pdf_abs_error, relative_l2, sample_statistics


def test_constant_lambda():
    d = np.array([1.0, -2.0, 0.5])
    st = expansion_statistics(d[:, None], np.full((40, 1), 3.0))
    np.testing.assert_allclose(st.mean, 3 * d)
    np.testing.assert_array_equal(st.std, 0.0)


def test_uncorrelated_unit_lambdas():
    D, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 3)))
    # zero-mean columns that are exactly orthogonal give uncorrelated unit-variance lambdas
    X = np.random.default_rng(1).standard_normal((200, 3))
    Q, _ = np.linalg.qr(X - X.mean(axis=0))
    Lam = Q * np.sqrt(200)
    st = expansion_statistics(D, Lam)
    np.testing.assert_allclose(st.std**2, (D * D).sum(axis=1), rtol=1e-12)


def test_matches_brute_force_samples():
    rng = np.random.default_rng(2)
    D = rng.standard_normal((30, 4))
    Lam = rng.standard_normal((500, 4)) @ rng.standard_normal((4, 4)) + 1.0
    st = expansion_statistics(D, Lam)
    ref = sample_statistics(Lam @ D.T)
    np.testing.assert_allclose(st.mean, ref.mean, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(st.std, ref.std, rtol=1e-12, atol=1e-12)


def test_per_vertex_layout():
    st = expansion_statistics(np.arange(6.0)[:, None], np.ones((5, 1)))
    mean, std = st.per_vertex(2)
    np.testing.assert_array_equal(mean, [[0, 1], [2, 3], [4, 5]])


def test_kde_standard_normal():
    x = np.random.default_rng(7).standard_normal(10_000)
    est = kde_pdf(x)
    assert len(est.grid) == 512
    p0 = float(np.interp(0.0, est.grid, est.density))
    assert abs(p0 - 1 / np.sqrt(2 * np.pi)) <= 0.05 / np.sqrt(2 * np.pi)
    assert 0.98 <= est.mass() <= 1.02
    assert est.bandwidth == pytest.approx(1.06 * x.std(ddof=1) * 10_000 ** (-0.2))
    assert np.all(est.density >= 0)


def test_identical_sets_zero_error():
    x = np.random.default_rng(3).gamma(2.0, size=1000)
    a, b = kde_pdf(x), kde_pdf(x)
    grid, err = pdf_abs_error(a, b)
    np.testing.assert_array_equal(err, 0.0)
    assert len(grid) == len(b.grid)


def test_degenerate_sets():
    a, b = kde_pdf(np.full(200, 1.0)), kde_pdf(np.full(200, 5.0))
    assert a.degenerate and b.degenerate
    assert a.value == 1.0
    with pytest.raises(ValueError):
        pdf_abs_error(a, b)


def test_too_few_samples():
    with pytest.raises(ValueError):
        kde_pdf(np.arange(50.0))


def test_grid_and_metric():
    x = np.array([0.0, 2.0] * 60)
    g = default_grid(x, 11, 5.0)
    assert g[0] == pytest.approx(1 - 5 * x.std(ddof=1))
    assert relative_l2([1.0, 1.0], [1.0, 0.0]) == pytest.approx(1.0)
    assert relative_l2([0.0], [0.0]) == 0.0
