import numpy as np
import pytest

from conftest import beam_loads, kl_for, system_for
from svem.mc import run_mcs
from svem.mesh import build_mesh
from svem.random_field import SampleBatch, draw_samples, kl_solve, material_matrices
from svem.svee import LoadSpec, build_system, force_expansion
from svem.vem import plane_stress_matrix, stiffness_matrix


def batch_from(rows, dists):
    rows = np.asarray(rows, dtype=float)
    return SampleBatch(values=rows, mask=np.ones(len(rows), bool), distributions=dists, seed=None, m=rows.shape[1] - 1)


def test_one_element_two_samples_dense_oracle():
    V = np.array([[0, 0], [2, 0], [2, 1], [0, 1]], dtype=float)
    mesh = build_mesh(V, [[0, 1, 2, 3]], {"left": [0, 3], "tip": [2]})
    kl = kl_solve(np.full((4, 4), 9.0), 1e-3, mean=np.full(4, 50.0))
    assert kl.m == 1
    G = material_matrices(mesh, kl, "plane-stress", 0.25)
    forces = force_expansion(mesh, [LoadSpec("point", (1.0, -2.0), "tip")])
    system = build_system(mesh, G, forces, mesh.dofs_of([0, 3]))
    xi = np.array([0.7, -1.3])
    sol = run_mcs(system, batch_from(np.column_stack([np.ones(2), xi]), ("constant", "gaussian")))
    free = np.array([2, 3, 4, 5])
    F = np.zeros(8)
    F[4:6] = [1.0, -2.0]
    U = []
    for x in xi:
        E = 50.0 + 3.0 * x  # eigenvalue 36, mode entries +1/2: sqrt(36) * 0.5
        k = stiffness_matrix(mesh.elements[0], plane_stress_matrix(E, 0.25))
        u = np.zeros(8)
        u[free] = np.linalg.solve(k[np.ix_(free, free)], F[free])
        U.append(u)
    U = np.array(U)
    np.testing.assert_allclose(sol.samples, U, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(sol.mean, U.mean(axis=0), rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(sol.std, U.std(axis=0), rtol=1e-10, atol=1e-14)


def test_deterministic_zero_variance(ex1_desk):
    kl = kl_for(ex1_desk, sigma=0.0)
    system = system_for(ex1_desk, kl, beam_loads(random=False), "supports")
    sol = run_mcs(system, draw_samples(kl, (), 600, seed=1), chunk=100)
    assert np.all(sol.variance == 0.0)
    assert np.all(sol.samples == sol.samples[0])


def test_modes_and_threads_agree(beam_system):
    system, kl = beam_system
    batch = draw_samples(kl, ("gaussian",), 700, seed=8)
    probes = [int(system.free[5]), int(system.free[40])]
    full = run_mcs(system, batch, probes=probes, chunk=128)
    stream = run_mcs(system, batch, probes=probes, mode="streaming", chunk=128, threads=3)
    assert stream.samples is None
    np.testing.assert_array_equal(full.mean, stream.mean)
    np.testing.assert_array_equal(full.m2, stream.m2)
    np.testing.assert_array_equal(full.probe_samples, stream.probe_samples)
    np.testing.assert_array_equal(full.probe_samples, full.samples[:, probes])
    np.testing.assert_allclose(full.mean, full.samples.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(full.std, full.samples.std(axis=0), rtol=1e-10, atol=1e-14)


def test_failed_sample_is_skipped(beam_system):
    system, kl = beam_system
    good = draw_samples(kl, ("gaussian",), 5, seed=2).values
    bad = good[:1].copy()
    bad[0, 1] = -1e6  # modulus field far below zero
    rows = np.vstack([good, bad])
    sol = run_mcs(system, batch_from(rows, ("constant", "gaussian", "gaussian", "gaussian")))
    assert sol.failed == (5,)
    assert sol.count == 5


def test_bad_mode(beam_system):
    system, kl = beam_system
    with pytest.raises(ValueError):
        run_mcs(system, draw_samples(kl, ("gaussian",), 10, seed=0), mode="lazy")
